#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <vector>

#include "fastslow/statistics.hpp"
#include "fastslow/transfer.hpp"

namespace fastslow {

// explicit sentinel for "outside the rate-function domain"; absorbing in all
// comparisons, never produced by overflow
inline constexpr double kRateInfinity = std::numeric_limits<double>::infinity();

// Scalar-observable (d = 1) solver bundling everything that depends only on
// (system, theta, discretization): cached inverse branches make repeated
// chi-hat evaluations a matrix fill plus one eigenvalue solve.
class ChiSolver {
public:
    ChiSolver(const FastSlowSystem& sys, double theta, Disc disc = Disc::Fourier, int size = 128,
              int obs = 0)
        : sys_(&sys), theta_(theta), disc_(disc), N_(size), obs_(obs) {
        if (obs < 0 || obs >= static_cast<int>(sys.observables.size()))
            throw interface_error("observable index out of range");
        abar_ = averaged_observables(sys, theta, disc, size)[obs];
        if (disc == Disc::Fourier) {
            BranchPartition part(sys, theta);
            const int deg = sys.degree;
            y_.resize(static_cast<std::size_t>(N_) * deg);
            base_.assign(static_cast<std::size_t>(N_) * N_ * deg, 0.0);
            ahat_.resize(static_cast<std::size_t>(N_) * deg);
            for (int i = 0; i < N_; ++i)
                for (int b = 0; b < deg; ++b) {
                    const double y = part.inverse(b, static_cast<double>(i) / N_);
                    const std::size_t k = static_cast<std::size_t>(i) * deg + b;
                    y_[k] = y;
                    ahat_[k] = sys.observables[obs](y, theta) - abar_;
                    const double w = 1.0 / sys.df_dx(y, theta);
                    for (int j = 0; j < N_; ++j)
                        base_[k * N_ + j] =
                            w * detail::cardinal(N_, y - static_cast<double>(j) / N_);
                }
        }
    }

    double abar() const { return abar_; }

    double sigma2() const {
        if (!have_sigma2_) {
            sigma2_ = green_kubo(*sys_, theta_, 1e-12, disc_, N_)[obs_][obs_];
            have_sigma2_ = true;
        }
        return sigma2_;
    }

    // chi_hat(sigma): log leading eigenvalue modulus of the tilted operator
    double chi(double sigma) const {
        if (sigma == 0.0) return 0.0;
        if (disc_ != Disc::Fourier) {
            std::vector<double> sv(sys_->observables.size(), 0.0);
            sv[obs_] = sigma;
            return chi_hat(*sys_, theta_, sv, disc_, N_, 1e9);
        }
        const int deg = sys_->degree;
        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(N_, N_);
        for (int i = 0; i < N_; ++i)
            for (int b = 0; b < deg; ++b) {
                const std::size_t k = static_cast<std::size_t>(i) * deg + b;
                const double w = std::exp(sigma * ahat_[k]);
                for (int j = 0; j < N_; ++j) L(i, j) += w * base_[k * N_ + j];
            }
        Eigen::EigenSolver<Eigen::MatrixXd> es(L, false);
        if (es.info() != Eigen::Success)
            throw numeric_domain_error("eigensolver failed to converge");
        double lam = 0.0;
        for (int i = 0; i < N_; ++i) lam = std::max(lam, std::abs(es.eigenvalues()[i]));
        return std::log(lam);
    }

    // d chi / d sigma by central difference
    double dchi(double sigma) const {
        const double h = 1e-3;
        return (chi(sigma + h) - chi(sigma - h)) / (2.0 * h);
    }

private:
    const FastSlowSystem* sys_;
    double theta_;
    Disc disc_;
    int N_;
    int obs_ = 0;
    double abar_ = 0.0;
    mutable double sigma2_ = 0.0;
    mutable bool have_sigma2_ = false;
    std::vector<double> y_, base_, ahat_;
};

struct SigmaResult {
    bool in_domain = false;
    bool converged = false;
    double sigma = 0.0;
    double residual = 0.0;
};

// Solve b = Abar + d chi_hat/d sigma by damped Newton on the finite-difference
// gradient, seeded by the quadratic model sigma = (b - Abar)/Sigma^2; falls
// back to monotone bisection (the derivative is increasing by convexity).
inline SigmaResult stationary_sigma(const ChiSolver& cs, double b, double sigma_max = 20.0) {
    SigmaResult r;
    const double target = b - cs.abar();
    const double s2 = cs.sigma2();
    if (s2 < 1e-10) throw degenerate_variance_error("Sigma^2 too small to seed the Newton solve");
    double sigma = target / s2;
    if (std::fabs(sigma) > sigma_max) sigma = sigma > 0 ? sigma_max : -sigma_max;
    const double tol = 1e-8, fdh = 1e-3;
    auto g = [&](double s) { return cs.dchi(s) - target; };
    double gv = g(sigma);
    for (int it = 0; it < 60 && std::fabs(gv) > tol; ++it) {
        const double gpp = (g(sigma + fdh) - g(sigma - fdh)) / (2.0 * fdh);  // = chi''
        if (!(gpp > 1e-14)) break;
        double step = -gv / gpp;
        // damped update staying inside the search box
        for (int bt = 0; bt < 30; ++bt) {
            const double cand = std::clamp(sigma + step, -sigma_max, sigma_max);
            const double gc = g(cand);
            if (std::fabs(gc) < std::fabs(gv) || bt == 29) {
                sigma = cand;
                gv = gc;
                break;
            }
            step *= 0.5;
        }
        if (std::fabs(sigma) >= sigma_max && gv * sigma > 0) break;  // pushing outward
    }
    if (std::fabs(gv) > tol) {
        // monotone bisection fallback on the increasing derivative
        double lo = -sigma_max, hi = sigma_max;
        double glo = g(lo), ghi = g(hi);
        if (glo > 0.0 || ghi < 0.0) {
            // target outside the reachable derivative range: b not in D(theta)
            r.in_domain = false;
            r.sigma = glo > 0.0 ? -sigma_max : sigma_max;
            r.residual = std::fabs(glo > 0.0 ? glo : ghi);
            return r;
        }
        for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
            const double mid = 0.5 * (lo + hi);
            (g(mid) < 0.0 ? lo : hi) = mid;
        }
        sigma = 0.5 * (lo + hi);
        gv = g(sigma);
    }
    r.sigma = sigma;
    r.residual = std::fabs(gv);
    r.converged = r.residual <= tol;
    r.in_domain = r.converged && std::fabs(sigma) < sigma_max;
    return r;
}

// Legendre value Z(b, theta) = sigma* (b - Abar) - chi_hat(sigma*);
// kRateInfinity when b is outside the domain.
inline double rate_Z(const ChiSolver& cs, double b, double sigma_max = 20.0) {
    const SigmaResult r = stationary_sigma(cs, b, sigma_max);
    if (!r.in_domain) return kRateInfinity;
    return r.sigma * (b - cs.abar()) - cs.chi(r.sigma);
}

struct DomainEstimate {
    std::vector<double> orbit_averages;  // one entry per distinct periodic orbit (d = 1)
    std::vector<int> periods;
    double hull_lo = 0.0, hull_hi = 0.0;
    int skipped = 0;
};

// Periodic-orbit averages of A[0] up to period p_max; their convex hull
// approximates the rate-function domain from the inside.
inline DomainEstimate domain_estimate(const FastSlowSystem& sys, double theta, int p_max) {
    if (p_max < 1 || p_max > 12) throw config_error("domain_estimate requires 1 <= p_max <= 12");
    BranchPartition part(sys, theta);
    const int deg = sys.degree;
    DomainEstimate out;
    std::vector<std::vector<double>> seen_orbits;

    for (int p = 1; p <= p_max; ++p) {
        long words = 1;
        for (int k = 0; k < p; ++k) words *= deg;
        std::vector<int> w(static_cast<std::size_t>(p));
        for (long code = 0; code < words; ++code) {
            long c = code;
            for (int k = p - 1; k >= 0; --k) {
                w[k] = static_cast<int>(c % deg);
                c /= deg;
            }
            // canonical representative: lexicographically minimal rotation,
            // and not a repetition of a shorter word
            bool canonical = true;
            for (int r = 1; r < p && canonical; ++r) {
                for (int k = 0; k < p; ++k) {
                    const int a = w[(k + r) % p], b0 = w[k];
                    if (a != b0) {
                        if (a < b0) canonical = false;
                        break;
                    }
                    if (k == p - 1) canonical = false;  // periodic sub-rotation
                }
            }
            if (!canonical) continue;
            try {
                // fixed point of the inverse-branch composition (a contraction)
                double y = 0.3;
                for (int it = 0; it < 400; ++it) {
                    double z = y;
                    for (int k = p - 1; k >= 0; --k) z = part.inverse(w[k], z);
                    if (std::fabs(z - y) < 1e-14) {
                        y = z;
                        break;
                    }
                    y = z;
                }
                std::vector<double> orbit(static_cast<std::size_t>(p));
                orbit[0] = mod1(y);
                for (int k = 1; k < p; ++k) orbit[k] = mod1(sys.f(orbit[k - 1], theta));
                std::vector<double> key = orbit;
                std::sort(key.begin(), key.end());
                bool dup = false;
                for (const auto& s : seen_orbits) {
                    if (s.size() != key.size()) continue;
                    double d = 0.0;
                    for (std::size_t k = 0; k < key.size(); ++k)
                        d = std::max(d, torus_dist(s[k], key[k]));
                    if (d < 1e-9) {
                        dup = true;
                        break;
                    }
                }
                if (dup) continue;
                seen_orbits.push_back(key);
                double avg = 0.0;
                for (double z : orbit) avg += sys.observables[0](z, theta);
                avg /= p;
                out.orbit_averages.push_back(avg);
                out.periods.push_back(p);
            } catch (const std::runtime_error&) {
                ++out.skipped;
            }
        }
    }
    if (out.orbit_averages.empty()) throw degenerate_orbit_error("no periodic orbits found");
    out.hull_lo = *std::min_element(out.orbit_averages.begin(), out.orbit_averages.end());
    out.hull_hi = *std::max_element(out.orbit_averages.begin(), out.orbit_averages.end());
    return out;
}

struct RegularizedRate {
    double z_plus = 0.0, z_minus = 0.0;
    double retracted_b = 0.0;  // where z_minus was evaluated
};

// Collar-regularized rates: Z+ is infinite on the eps-collar of the domain
// boundary, Z- retracts b radially toward Abar until it exits the collar.
inline RegularizedRate rate_Z_reg(const ChiSolver& cs, const DomainEstimate& dom, double b,
                                  double eps_tilde, double sigma_max = 20.0) {
    if (!(eps_tilde > 0.0 && eps_tilde < 0.5))
        throw config_error("collar width must lie in (0, 0.5)");
    auto boundary_dist = [&](double v) { return std::min(v - dom.hull_lo, dom.hull_hi - v); };
    RegularizedRate out;
    if (boundary_dist(b) >= eps_tilde) {
        out.retracted_b = b;
        out.z_plus = out.z_minus = rate_Z(cs, b, sigma_max);
        return out;
    }
    out.z_plus = kRateInfinity;
    const double abar = cs.abar();
    if (boundary_dist(abar) < eps_tilde)
        throw config_error("collar width swallows the averaged value; shrink eps");
    double lo = 0.0, hi = 1.0;  // b + lambda (abar - b); lambda minimal to exit the collar
    for (int it = 0; it < 60 && hi - lo > 1e-6; ++it) {
        const double mid = 0.5 * (lo + hi);
        (boundary_dist(b + mid * (abar - b)) < eps_tilde ? lo : hi) = mid;
    }
    out.retracted_b = b + hi * (abar - b);
    out.z_minus = rate_Z(cs, out.retracted_b, sigma_max);
    return out;
}

// Piecewise-linear path gamma with gamma(0) = 0 (deviation coordinates, d = 1).
struct PathSpec {
    std::vector<double> t;  // increasing, t.front() = 0
    std::vector<double> v;  // gamma(t_i), v.front() = 0
};

namespace detail {

inline void check_path(const PathSpec& g, double lip_bound) {
    if (g.t.size() != g.v.size() || g.t.size() < 2) throw config_error("path needs >= 2 nodes");
    if (g.t.front() != 0.0 || g.v.front() != 0.0) throw config_error("path must start at (0,0)");
    for (std::size_t i = 1; i < g.t.size(); ++i) {
        if (!(g.t[i] > g.t[i - 1])) throw config_error("path breakpoints must increase");
        const double slope = (g.v[i] - g.v[i - 1]) / (g.t[i] - g.t[i - 1]);
        if (std::fabs(slope) > lip_bound)
            throw config_error("path violates the Lipschitz bound 2 sup|A|");
    }
}

// cache of per-theta solvers for path integrals
class SolverCache {
public:
    SolverCache(const FastSlowSystem& sys, Disc disc, int size, int obs = 0)
        : sys_(&sys), disc_(disc), size_(size), obs_(obs) {}

    const ChiSolver& at(double theta) {
        const double key = std::round(mod1(theta) * 1e10) / 1e10;
        auto it = cache_.find(key);
        if (it == cache_.end())
            it = cache_.emplace(key, std::make_shared<ChiSolver>(*sys_, key, disc_, size_, obs_)).first;
        return *it->second;
    }

private:
    const FastSlowSystem* sys_;
    Disc disc_;
    int size_;
    int obs_;
    std::map<double, std::shared_ptr<ChiSolver>> cache_;
};

}  // namespace detail

enum class PathRateMode { Frozen, Moving };

// Rate functional of a slow path: integral of Z(gamma'(s), theta_ref(s)).
// Frozen mode references the averaged flow theta_bar(s); moving mode reads
// theta from the path itself.
inline double path_rate(const FastSlowSystem& sys, const PathSpec& gamma, double theta0,
                        const AveragedPath& averaged, double quad_dt,
                        PathRateMode mode = PathRateMode::Frozen, Disc disc = Disc::Fourier,
                        int size = 128) {
    detail::check_path(gamma, 2.0 * sys.sup_omega + 1e-9);
    detail::SolverCache cache(sys, disc, size);
    auto theta_bar_at = [&](double t) {
        if (t <= averaged.t_grid.front()) return averaged.theta_bar.front();
        if (t >= averaged.t_grid.back()) return averaged.theta_bar.back();
        const auto it = std::upper_bound(averaged.t_grid.begin(), averaged.t_grid.end(), t);
        const std::size_t k = static_cast<std::size_t>(it - averaged.t_grid.begin());
        const double u = (t - averaged.t_grid[k - 1]) / (averaged.t_grid[k] - averaged.t_grid[k - 1]);
        return averaged.theta_bar[k - 1] * (1.0 - u) + averaged.theta_bar[k] * u;
    };
    auto gamma_at = [&](double t) {
        const auto it = std::upper_bound(gamma.t.begin(), gamma.t.end(), t);
        const std::size_t k = std::min(gamma.t.size() - 1,
                                       static_cast<std::size_t>(it - gamma.t.begin()));
        const double u = (t - gamma.t[k - 1]) / (gamma.t[k] - gamma.t[k - 1]);
        return gamma.v[k - 1] * (1.0 - u) + gamma.v[k] * u;
    };
    double total = 0.0;
    for (std::size_t seg = 1; seg < gamma.t.size(); ++seg) {
        const double a = gamma.t[seg - 1], b = gamma.t[seg];
        const double slope = (gamma.v[seg] - gamma.v[seg - 1]) / (b - a);
        const int pieces = std::max(1, static_cast<int>(std::ceil((b - a) / quad_dt)));
        const double h = (b - a) / pieces;
        double prev = kRateInfinity;
        for (int k = 0; k <= pieces; ++k) {
            const double s = a + k * h;
            const double th =
                mode == PathRateMode::Frozen ? theta_bar_at(s) : theta0 + gamma_at(s);
            const double z = rate_Z(cache.at(th), slope);
            if (std::isinf(z)) return kRateInfinity;
            if (k > 0) total += 0.5 * (prev + z) * h;
            prev = z;
        }
    }
    return total;
}

// Quadratic (moderate-deviation) functional:
// 1/2 int (gamma' - Abar(theta_bar))^2 / Sigma^2(theta_bar) ds.
inline double rate_quadratic(const FastSlowSystem& sys, const PathSpec& gamma, double theta0,
                             const AveragedPath& averaged, const ThetaTable& table,
                             const Sigma2Table& sigma2, double quad_dt) {
    (void)theta0;
    detail::check_path(gamma, 2.0 * sys.sup_omega + 1e-9);
    auto theta_bar_at = [&](double t) {
        if (t <= averaged.t_grid.front()) return averaged.theta_bar.front();
        if (t >= averaged.t_grid.back()) return averaged.theta_bar.back();
        const auto it = std::upper_bound(averaged.t_grid.begin(), averaged.t_grid.end(), t);
        const std::size_t k = static_cast<std::size_t>(it - averaged.t_grid.begin());
        const double u = (t - averaged.t_grid[k - 1]) / (averaged.t_grid[k] - averaged.t_grid[k - 1]);
        return averaged.theta_bar[k - 1] * (1.0 - u) + averaged.theta_bar[k] * u;
    };
    double total = 0.0;
    for (std::size_t seg = 1; seg < gamma.t.size(); ++seg) {
        const double a = gamma.t[seg - 1], b = gamma.t[seg];
        const double slope = (gamma.v[seg] - gamma.v[seg - 1]) / (b - a);
        const int pieces = std::max(1, static_cast<int>(std::ceil((b - a) / quad_dt)));
        const double h = (b - a) / pieces;
        double prev = 0.0;
        for (int k = 0; k <= pieces; ++k) {
            const double th = theta_bar_at(a + k * h);
            const double s2 = sigma2.eval(th);
            if (s2 < 1e-8)
                throw degenerate_variance_error("Sigma^2 below 1e-8 along the path");
            const double dev = slope - table.eval(0, th);
            const double z = 0.5 * dev * dev / s2;
            if (k > 0) total += 0.5 * (prev + z) * h;
            prev = z;
        }
    }
    return total;
}

// Normalized moment-generating-function exponent: the eps-free integral
// int_0^T [sigma(s) Abar(theta_bar(s)) + chi_hat(sigma(s), theta_bar(s))] ds.
inline double mgf_predict(const FastSlowSystem& sys, const std::function<double(double)>& sigma,
                          double theta0, double T, const AveragedPath& averaged,
                          Disc disc = Disc::Fourier, int size = 128, double quad_dt = 1e-3,
                          int obs = 0) {
    (void)theta0;
    detail::SolverCache cache(sys, disc, size, obs);
    auto theta_bar_at = [&](double t) {
        if (t <= averaged.t_grid.front()) return averaged.theta_bar.front();
        if (t >= averaged.t_grid.back()) return averaged.theta_bar.back();
        const auto it = std::upper_bound(averaged.t_grid.begin(), averaged.t_grid.end(), t);
        const std::size_t k = static_cast<std::size_t>(it - averaged.t_grid.begin());
        const double u = (t - averaged.t_grid[k - 1]) / (averaged.t_grid[k] - averaged.t_grid[k - 1]);
        return averaged.theta_bar[k - 1] * (1.0 - u) + averaged.theta_bar[k] * u;
    };
    const int n = std::max(1, static_cast<int>(std::ceil(T / quad_dt)));
    const double h = T / n;
    double total = 0.0, prev = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double s = k * h;
        const double th = theta_bar_at(s);
        const ChiSolver& cs = cache.at(th);
        const double val = sigma(s) * cs.abar() + cs.chi(sigma(s));
        if (k > 0) total += 0.5 * (prev + val) * h;
        prev = val;
    }
    return total;
}

}  // namespace fastslow
