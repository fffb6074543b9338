#pragma once

#include <cmath>
#include <cstdint>

namespace fastslow {

// Counter-based generator: each draw is a pure function of (seed, stream,
// counter), so worker counts and iteration order cannot change the sample
// assigned to a path.  The mix is Stafford's variant 13 of the splitmix64
// finalizer applied to an affine counter walk.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
        : base_(mix(seed ^ 0x9e3779b97f4a7c15ull) ^ mix(stream + 0xbf58476d1ce4e5b9ull)) {}

    std::uint64_t next_u64() noexcept { return mix(base_ + (ctr_++) * 0x9e3779b97f4a7c15ull); }

    // uniform in [0,1) with 53 bits
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Box-Muller; the pair is drawn eagerly so one call consumes exactly two
    // counter slots and the cache keeps the partner deterministic.
    double normal() noexcept {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t mix(std::uint64_t z) noexcept {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t base_;
    std::uint64_t ctr_ = 0;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace fastslow
