#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <thread>
#include <vector>

#include "fastslow/rng.hpp"
#include "fastslow/statistics.hpp"
#include "fastslow/system.hpp"

namespace fastslow {

// Initial fast-coordinate density on [0,1); sampled by inverse CDF over a
// 4096-bin table so draws are reproducible and cheap.
class InitialDensity {
public:
    static InitialDensity uniform() { return InitialDensity(nullptr); }

    static InitialDensity from(std::function<double(double)> rho) {
        return InitialDensity(std::move(rho));
    }

    double sample(double u) const {
        if (!cdf_.size()) return u;
        // invert the piecewise-linear CDF
        const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        const std::size_t k = std::min(cdf_.size() - 1,
                                       static_cast<std::size_t>(it - cdf_.begin()));
        const double c0 = k == 0 ? 0.0 : cdf_[k - 1];
        const double w = cdf_[k] - c0;
        const double frac = w > 0.0 ? (u - c0) / w : 0.0;
        return (static_cast<double>(k) + frac) / static_cast<double>(cdf_.size());
    }

private:
    explicit InitialDensity(std::function<double(double)> rho) {
        if (!rho) return;
        constexpr int B = 4096;
        cdf_.resize(B);
        double acc = 0.0;
        for (int k = 0; k < B; ++k) {
            const double v = rho((k + 0.5) / B);
            if (v < 0.0) throw config_error("initial density is negative");
            acc += v;
            cdf_[k] = acc;
        }
        if (acc <= 0.0) throw config_error("initial density integrates to zero");
        for (double& c : cdf_) c /= acc;
    }

    std::vector<double> cdf_;  // empty means uniform
};

inline std::vector<double> sample_initial(const InitialDensity& density, long n,
                                          std::uint64_t seed) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        CounterRng rng(seed, static_cast<std::uint64_t>(i));
        out[i] = density.sample(rng.uniform());
    }
    return out;
}

namespace detail {

// An expanding map in binary floating point sheds low-order bits every step
// (the doubling map reaches exactly 0 after ~53 iterations), so long samples
// would collapse onto spurious fixed points.  Uniform jitter of width 2^-30
// replenishes ~23 fresh mantissa bits per step; additive noise mod 1 leaves
// the invariant measure of these maps unchanged to well below sampling
// resolution, whereas ulp-scale jitter quantizes to a handful of levels and
// measurably biases the chain.
inline double jitter_step(const FastSlowSystem& sys, double x, double th, CounterRng& rng) {
    return mod1(sys.f(x, th) + (rng.uniform() - 0.5) * 0x1.0p-30);
}

inline void run_parallel(long n, int threads, const std::function<void(long, long)>& work) {
    if (threads <= 1) {
        work(0, n);
        return;
    }
    std::vector<std::thread> pool;
    const long chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back(work, std::min<long>(t * chunk, n), std::min<long>((t + 1) * chunk, n));
    for (auto& th : pool) th.join();
}

}  // namespace detail

struct PathEnsemble {
    double eps = 0.0, T = 0.0, theta0 = 0.0;
    long n_paths = 0;
    std::uint64_t seed = 0;
    std::vector<double> t_grid;              // uniform output grid including 0 and T
    std::vector<std::vector<double>> theta;  // [path][grid]: interpolated theta component
};

// Simulate the ensemble and record the linearly interpolated slow path on a
// uniform output grid.  Path p draws x0 from RNG stream p, so results do not
// depend on the thread count.
inline PathEnsemble ensemble_paths(const FastSlowSystem& sys, double theta0,
                                   const InitialDensity& density, double T, long n_paths,
                                   std::uint64_t seed, double out_dt, int threads = 1) {
    if (sys.eps <= 0.0) throw config_error("ensemble simulation needs eps > 0");
    const long steps = static_cast<long>(std::floor(T / sys.eps));
    if (steps * n_paths > 1000000000L) throw resource_error("total step budget 1e9 exceeded");
    const int m = std::max(1, static_cast<int>(std::round(T / out_dt)));
    PathEnsemble ens;
    ens.eps = sys.eps;
    ens.T = T;
    ens.theta0 = theta0;
    ens.n_paths = n_paths;
    ens.seed = seed;
    ens.t_grid.resize(static_cast<std::size_t>(m) + 1);
    for (int k = 0; k <= m; ++k) ens.t_grid[k] = T * k / m;
    ens.theta.assign(static_cast<std::size_t>(n_paths),
                     std::vector<double>(static_cast<std::size_t>(m) + 1, theta0));

    detail::run_parallel(n_paths, threads, [&](long lo, long hi) {
        for (long p = lo; p < hi; ++p) {
            CounterRng rng(seed, static_cast<std::uint64_t>(p));
            double x = density.sample(rng.uniform());
            double th = theta0;  // theta after `done` steps
            auto& row = ens.theta[p];
            std::size_t g = 0;
            for (long done = 0; done < steps; ++done) {
                const double w = sys.omega(x, th);
                const double th_next = th + sys.eps * w;
                x = detail::jitter_step(sys, x, th, rng);
                // grid times falling in the step interval [done, done+1]
                while (g < row.size()) {
                    const double pos = ens.t_grid[g] / sys.eps;
                    if (pos > done + 1 + 1e-12) break;
                    row[g] = th + std::clamp(pos - done, 0.0, 1.0) * (th_next - th);
                    ++g;
                }
                th = th_next;
            }
            for (; g < row.size(); ++g) row[g] = th;  // trailing sub-step remainder
        }
    });
    return ens;
}

struct AveragingError {
    std::vector<double> per_path_sup;
    double q50 = 0.0, q90 = 0.0, q99 = 0.0;
};

inline AveragingError averaging_error(const PathEnsemble& ens, const AveragedPath& averaged) {
    if (std::fabs(averaged.t_grid.back() - ens.T) > 1e-9)
        throw interface_error("averaged path horizon does not match the ensemble");
    // interpolate theta_bar onto the ensemble grid
    std::vector<double> tb(ens.t_grid.size());
    for (std::size_t g = 0; g < ens.t_grid.size(); ++g) {
        const double t = ens.t_grid[g];
        const auto it = std::upper_bound(averaged.t_grid.begin(), averaged.t_grid.end(), t);
        const std::size_t k =
            std::clamp<std::size_t>(static_cast<std::size_t>(it - averaged.t_grid.begin()), 1,
                                    averaged.t_grid.size() - 1);
        const double u = (t - averaged.t_grid[k - 1]) / (averaged.t_grid[k] - averaged.t_grid[k - 1]);
        tb[g] = averaged.theta_bar[k - 1] * (1.0 - u) + averaged.theta_bar[k] * u;
    }
    AveragingError out;
    out.per_path_sup.reserve(static_cast<std::size_t>(ens.n_paths));
    for (const auto& row : ens.theta) {
        double sup = 0.0;
        for (std::size_t g = 0; g < row.size(); ++g)
            sup = std::max(sup, std::fabs(row[g] - tb[g]));
        out.per_path_sup.push_back(sup);
    }
    std::vector<double> sorted = out.per_path_sup;
    std::sort(sorted.begin(), sorted.end());
    auto q = [&](double p) {
        const std::size_t i = std::min(sorted.size() - 1,
                                       static_cast<std::size_t>(p * sorted.size()));
        return sorted[i];
    };
    out.q50 = q(0.5);
    out.q90 = q(0.9);
    out.q99 = q(0.99);
    return out;
}

struct EtaRefSamples {
    std::vector<double> H, Delta;  // per path, at k = floor(t/eps)
    double max_diff = 0.0;         // max over paths of |H - Delta|
};

// Auxiliary linearized deviation process: H accumulates eps omega_hat with
// exponential weights exp(eps sum omega_bar'(theta_bar)), the discrete
// variation-of-constants solution tracked alongside Delta = theta - theta_bar.
inline EtaRefSamples etaref_process(const FastSlowSystem& sys, double theta0,
                                    const InitialDensity& density, double t, long n_paths,
                                    std::uint64_t seed, const ThetaTable& table, int threads = 1) {
    if (sys.eps <= 0.0) throw config_error("etaref needs eps > 0");
    const long steps = static_cast<long>(std::floor(t / sys.eps));
    if (steps * n_paths > 1000000000L) throw resource_error("total step budget 1e9 exceeded");
    // averaged orbit theta_bar_k shared by all paths (deterministic)
    std::vector<double> tb(static_cast<std::size_t>(steps) + 1), wp(static_cast<std::size_t>(steps) + 1);
    {
        AveragedPath ap = solve_averaged(table, theta0, t > 0 ? t : sys.eps, sys.eps);
        for (long k = 0; k <= steps; ++k) {
            const double s = sys.eps * k;
            const auto it = std::upper_bound(ap.t_grid.begin(), ap.t_grid.end(), s);
            const std::size_t j =
                std::clamp<std::size_t>(static_cast<std::size_t>(it - ap.t_grid.begin()), 1,
                                        ap.t_grid.size() - 1);
            const double u = (s - ap.t_grid[j - 1]) / (ap.t_grid[j] - ap.t_grid[j - 1]);
            tb[k] = ap.theta_bar[j - 1] * (1.0 - u) + ap.theta_bar[j] * u;
            wp[k] = table.deriv0(tb[k]);
        }
    }
    EtaRefSamples out;
    out.H.assign(static_cast<std::size_t>(n_paths), 0.0);
    out.Delta.assign(static_cast<std::size_t>(n_paths), 0.0);
    std::vector<double> diffs(static_cast<std::size_t>(n_paths), 0.0);
    detail::run_parallel(n_paths, threads, [&](long lo, long hi) {
        for (long p = lo; p < hi; ++p) {
            CounterRng rng(seed, static_cast<std::uint64_t>(p));
            double x = density.sample(rng.uniform());
            double th = theta0, H = 0.0, worst = 0.0;
            for (long k = 0; k < steps; ++k) {
                const double w = sys.omega(x, th);
                const double what = w - table.eval(0, th);
                // H_{k+1} = e^{eps wbar'(tb_k)} H_k + eps omega_hat(x_k, theta_k)
                H = std::exp(sys.eps * wp[k]) * H + sys.eps * what;
                x = detail::jitter_step(sys, x, th, rng);
                th += sys.eps * w;
                worst = std::max(worst, std::fabs(H - (th - tb[k + 1])));
            }
            out.H[p] = H;
            out.Delta[p] = th - tb[steps];
            diffs[p] = worst;
        }
    });
    for (double d : diffs) out.max_diff = std::max(out.max_diff, d);
    return out;
}

struct LLTReport {
    double t = 0.0, eps = 0.0, shift = 0.0, bin_width = 0.0;
    std::vector<double> bin_centers, empirical_density, predicted_density;
    double ks = 1.0;
    double variance_ratio = 0.0;
    double sample_mean = 0.0, sample_var = 0.0, target_var = 0.0;
    long window_count = 0;
    double window_density = 0.0, window_predicted = 0.0;
    bool insufficient_window = false;
};

// Local-limit check: distribution of Delta_eps(t) = (theta_eps(t) -
// theta_bar(t)) / sqrt(eps) against N(0, Var_t^2), plus a density estimate in
// an eps-resolution window at the shift r.
inline LLTReport llt_check(const FastSlowSystem& sys, double theta0, double t, double shift_r,
                           int bins, long n_paths, std::uint64_t seed, double target_var,
                           double theta_bar_t, int threads = 1) {
    if (sys.eps <= 0.0) throw config_error("llt_check needs eps > 0");
    const long steps = static_cast<long>(std::floor(t / sys.eps));
    if (steps * n_paths > 20000000000L) throw resource_error("total step budget exceeded");
    std::vector<double> delta(static_cast<std::size_t>(n_paths));
    const double sq = std::sqrt(sys.eps);
    detail::run_parallel(n_paths, threads, [&](long lo, long hi) {
        for (long p = lo; p < hi; ++p) {
            CounterRng rng(seed, static_cast<std::uint64_t>(p));
            double x = rng.uniform();
            double th = theta0;
            for (long k = 0; k < steps; ++k) {
                const double w = sys.omega(x, th);
                x = detail::jitter_step(sys, x, th, rng);
                th += sys.eps * w;
            }
            delta[p] = (th - theta_bar_t) / sq;
        }
    });

    LLTReport rep;
    rep.t = t;
    rep.eps = sys.eps;
    rep.shift = shift_r;
    rep.target_var = target_var;
    for (double d : delta) rep.sample_mean += d;
    rep.sample_mean /= n_paths;
    for (double d : delta) rep.sample_var += (d - rep.sample_mean) * (d - rep.sample_mean);
    rep.sample_var /= (n_paths - 1);
    rep.variance_ratio = rep.sample_var / target_var;

    // KS distance against the Gaussian CDF
    std::vector<double> sorted = delta;
    std::sort(sorted.begin(), sorted.end());
    const double sd = std::sqrt(target_var);
    double ks = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double F = 0.5 * std::erfc(-sorted[i] / (sd * std::sqrt(2.0)));
        ks = std::max(ks, std::fabs(F - static_cast<double>(i) / sorted.size()));
        ks = std::max(ks, std::fabs(F - static_cast<double>(i + 1) / sorted.size()));
    }
    rep.ks = ks;

    // histogram over [-4 sd, 4 sd]
    const double lo = -4.0 * sd, hi = 4.0 * sd;
    rep.bin_width = (hi - lo) / bins;
    rep.bin_centers.resize(static_cast<std::size_t>(bins));
    rep.empirical_density.assign(static_cast<std::size_t>(bins), 0.0);
    rep.predicted_density.resize(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        const double c = lo + (b + 0.5) * rep.bin_width;
        rep.bin_centers[b] = c;
        rep.predicted_density[b] =
            std::exp(-0.5 * c * c / target_var) / std::sqrt(2.0 * kPi * target_var);
    }
    long inside = 0;
    for (double d : delta) {
        const int b = static_cast<int>((d - lo) / rep.bin_width);
        if (b >= 0 && b < bins) {
            rep.empirical_density[b] += 1.0;
            ++inside;
        }
    }
    for (double& v : rep.empirical_density) v /= (static_cast<double>(n_paths) * rep.bin_width);

    // eps-resolution window at the shift: counts against Leb x Gaussian
    const double wlo = shift_r, whi = shift_r + sq;  // width eps on the theta scale
    for (double d : delta)
        if (d >= wlo && d < whi) ++rep.window_count;
    rep.window_density = static_cast<double>(rep.window_count) / (n_paths * (whi - wlo));
    rep.window_predicted = std::exp(-0.5 * shift_r * shift_r / target_var) /
                           std::sqrt(2.0 * kPi * target_var);
    rep.insufficient_window = rep.window_count < 10;
    (void)inside;
    return rep;
}

struct ModerateRow {
    double eps = 0.0;
    long hits = 0;
    double p_hat = 0.0;
    double wilson_lo = 0.0, wilson_hi = 0.0;
    double scaled_log_p = 0.0;  // -eps^{1-2 beta} log p_hat (from wilson_hi when p_hat = 0)
    bool zero_hits = false;
};

struct ModerateTable {
    std::vector<ModerateRow> rows;
    double target = 0.0;  // C^2 T / (2 Sigma^2_11(theta0))
};

// Tube-exclusion probe: the event is that the path deviation clears the
// widening ray eps^beta C s at every positive grid time.
inline ModerateTable moderate_probe(const FastSlowSystem& sys_template, double theta0,
                                    double C_event, double beta,
                                    const std::vector<double>& eps_list, double T, long n_paths,
                                    std::uint64_t seed, const ThetaTable& table,
                                    const Sigma2Table& sigma2, int threads = 1, int grid = 25) {
    if (!(beta > 0.25 && beta < 0.5)) throw config_error("beta must lie in (1/4, 1/2)");
    if (grid < 2 || grid > 10000) throw config_error("grid outside [2, 10000]");
    ModerateTable out;
    out.target = C_event * C_event * T / (2.0 * sigma2.eval(theta0));
    for (double eps : eps_list) {
        FastSlowSystem sys = sys_template;
        sys.eps = eps;
        AveragedPath ap = solve_averaged(table, theta0, T, std::min(1e-2, eps));
        const double out_dt = T / grid;
        PathEnsemble ens =
            ensemble_paths(sys, theta0, InitialDensity::uniform(), T, n_paths, seed, out_dt, threads);
        std::vector<double> tb(ens.t_grid.size());
        for (std::size_t g = 0; g < ens.t_grid.size(); ++g) {
            const double s = ens.t_grid[g];
            const auto it = std::upper_bound(ap.t_grid.begin(), ap.t_grid.end(), s);
            const std::size_t k =
                std::clamp<std::size_t>(static_cast<std::size_t>(it - ap.t_grid.begin()), 1,
                                        ap.t_grid.size() - 1);
            const double u = (s - ap.t_grid[k - 1]) / (ap.t_grid[k] - ap.t_grid[k - 1]);
            tb[g] = ap.theta_bar[k - 1] * (1.0 - u) + ap.theta_bar[k] * u;
        }
        const double scale = std::pow(eps, beta) * C_event;
        long hits = 0;
        for (const auto& row : ens.theta) {
            bool in_event = true;
            for (std::size_t g = 1; g < row.size() && in_event; ++g)
                in_event = std::fabs(row[g] - tb[g]) >= scale * ens.t_grid[g];
            if (in_event) ++hits;
        }
        ModerateRow r;
        r.eps = eps;
        r.hits = hits;
        r.p_hat = static_cast<double>(hits) / n_paths;
        // Wilson interval at z = 1.96
        const double z = 1.96, n = static_cast<double>(n_paths);
        const double mid = (r.p_hat + z * z / (2 * n)) / (1 + z * z / n);
        const double half =
            z * std::sqrt(r.p_hat * (1 - r.p_hat) / n + z * z / (4 * n * n)) / (1 + z * z / n);
        r.wilson_lo = std::max(0.0, mid - half);
        r.wilson_hi = std::min(1.0, mid + half);
        r.zero_hits = hits == 0;
        const double p_for_log = r.zero_hits ? r.wilson_hi : r.p_hat;
        r.scaled_log_p = -std::pow(eps, 1.0 - 2.0 * beta) * std::log(p_for_log);
        out.rows.push_back(r);
    }
    return out;
}

struct MgfProbe {
    double empirical = 0.0;  // eps log mean exp(sum sigma A)
    double predicted = 0.0;
    double ess = 0.0;  // effective sample size of the exponential estimator
    bool flagged = false;
};

// Empirical scaled log-MGF of the Birkhoff sum against the chi-hat integral
// prediction; log-mean-exp stabilized by max subtraction.
inline MgfProbe mgf_probe(const FastSlowSystem& sys, double theta0, double sigma, double T,
                          long n_paths, std::uint64_t seed, double predicted, int threads = 1,
                          int obs = 0) {
    if (std::fabs(sigma) > 0.2) throw config_error("|sigma| must be <= 0.2 for the MC probe");
    if (sys.eps <= 0.0) throw config_error("mgf_probe needs eps > 0");
    if (obs < 0 || obs >= static_cast<int>(sys.observables.size()))
        throw interface_error("observable index out of range");
    const long steps = static_cast<long>(std::floor(T / sys.eps));
    if (steps * n_paths > 1000000000L) throw resource_error("total step budget 1e9 exceeded");
    std::vector<double> S(static_cast<std::size_t>(n_paths));
    detail::run_parallel(n_paths, threads, [&](long lo, long hi) {
        for (long p = lo; p < hi; ++p) {
            CounterRng rng(seed, static_cast<std::uint64_t>(p));
            double x = rng.uniform();
            double th = theta0, acc = 0.0;
            for (long k = 0; k < steps; ++k) {
                const double w = sys.omega(x, th);
                acc += sigma * sys.observables[obs](x, th);
                x = detail::jitter_step(sys, x, th, rng);
                th += sys.eps * w;
            }
            S[p] = acc;
        }
    });
    const double smax = *std::max_element(S.begin(), S.end());
    double mean = 0.0, wsum = 0.0, w2sum = 0.0;
    for (double s : S) {
        const double w = std::exp(s - smax);
        mean += w;
        wsum += w;
        w2sum += w * w;
    }
    mean /= n_paths;
    MgfProbe out;
    out.empirical = sys.eps * (smax + std::log(mean));
    out.predicted = predicted;
    out.ess = wsum * wsum / w2sum;
    out.flagged = out.ess < 100.0;
    return out;
}

}  // namespace fastslow
