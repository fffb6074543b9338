#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fastslow/errors.hpp"
#include "fastslow/expr.hpp"

namespace fastslow {

inline constexpr double kPi = 3.14159265358979323846264338327950288;
inline constexpr double kTwoPi = 2.0 * kPi;

inline double mod1(double x) {
    double r = x - std::floor(x);
    if (r >= 1.0) r -= 1.0;
    return r;
}

// distance on the circle R/Z
inline double torus_dist(double a, double b) {
    double d = std::fabs(mod1(a) - mod1(b));
    return std::min(d, 1.0 - d);
}

using Field = std::function<double(double, double)>;  // (x, theta) -> value

// Skew product on T^2: x expands at rate O(1), theta drifts at rate eps.
// Evaluators take theta on its universal cover; everything theta-periodic is
// the caller's responsibility (checked for parsed systems at construction).
struct FastSlowSystem {
    std::string name;
    Field f;         // lift of the fiber map: f(x+1,th) = f(x,th) + degree
    Field df_dx;
    Field df_dtheta;
    Field omega;
    Field domega_dx;
    Field domega_dtheta;
    std::vector<Field> observables;  // A, with A[0] == omega
    double eps = 0.0;
    double lambda_min = 0.0;         // certified lower bound on df_dx
    double sup_omega = 0.0;          // sampled sup |omega|
    double sup_domega_dx = 0.0;      // sampled sup |d omega / dx|
    int degree = 0;

    int dim() const { return static_cast<int>(observables.size()) + 1; }
};

struct TrajectoryState {
    double x = 0.0;               // in [0,1)
    std::vector<double> z;        // z[0] = theta (lifted), z[1..] = zeta
};

namespace detail {

inline void certify(FastSlowSystem& sys) {
    constexpr int n = 1024;
    const double h = 1.0 / n;
    double dmin = 1e300, dmax_step = 0.0, somega = 0.0, sdomx = 0.0;
    double prev_row0 = 0.0;
    std::vector<double> prev(n, 0.0);
    for (int j = 0; j < n; ++j) {
        const double th = j * h;
        for (int i = 0; i < n; ++i) {
            const double x = i * h;
            const double d = sys.df_dx(x, th);
            dmin = std::min(dmin, d);
            if (i > 0) dmax_step = std::max(dmax_step, std::fabs(d - prev_row0));
            if (j > 0) dmax_step = std::max(dmax_step, std::fabs(d - prev[i]));
            prev[i] = d;
            prev_row0 = d;
            somega = std::max(somega, std::fabs(sys.omega(x, th)));
            sdomx = std::max(sdomx, std::fabs(sys.domega_dx(x, th)));
            const double a0 = sys.observables[0](x, th);
            if (std::fabs(a0 - sys.omega(x, th)) > 1e-12)
                throw config_error("A[0] must coincide with omega");
        }
    }
    // Lipschitz margin from the largest sampled increment of df_dx
    sys.lambda_min = dmin - 1.5 * dmax_step;
    sys.sup_omega = somega;
    sys.sup_domega_dx = sdomx;
    if (sys.lambda_min <= 1.0)
        throw config_error("map is not certified uniformly expanding (lambda_min <= 1)");
    const double deg = sys.f(1.0, 0.25) - sys.f(0.0, 0.25);
    sys.degree = static_cast<int>(std::lround(deg));
    if (std::fabs(deg - sys.degree) > 1e-9 || sys.degree < 2)
        throw invalid_map_error("fiber map lift must increase by an integer degree >= 2");
    for (double th : {0.0, 0.3, 0.7}) {
        if (std::fabs(sys.omega(0.0, th) - sys.omega(1.0 - 1e-12, th)) > 1e-9)
            throw config_error("omega is not periodic in x");
        if (std::fabs(sys.omega(0.2, th) - sys.omega(0.2, th + 1.0)) > 1e-9)
            throw config_error("omega is not periodic in theta");
    }
}

}  // namespace detail

// ---- presets ---------------------------------------------------------------

inline FastSlowSystem make_doubling_cos(double eps) {
    FastSlowSystem s;
    s.name = "doubling-cos";
    s.f = [](double x, double) { return 2.0 * x; };
    s.df_dx = [](double, double) { return 2.0; };
    s.df_dtheta = [](double, double) { return 0.0; };
    s.omega = [](double x, double th) {
        return std::cos(kTwoPi * x) + 0.5 * std::sin(kTwoPi * th);
    };
    s.domega_dx = [](double x, double) { return -kTwoPi * std::sin(kTwoPi * x); };
    s.domega_dtheta = [](double, double th) { return kPi * std::cos(kTwoPi * th); };
    s.observables = {s.omega};
    s.eps = eps;
    detail::certify(s);
    return s;
}

inline FastSlowSystem make_perturbed_doubling(double eps) {
    FastSlowSystem s;
    s.name = "perturbed-doubling";
    s.f = [](double x, double th) { return 2.0 * x + 0.1 * std::sin(kTwoPi * (x + th)); };
    s.df_dx = [](double x, double th) { return 2.0 + 0.2 * kPi * std::cos(kTwoPi * (x + th)); };
    s.df_dtheta = [](double x, double th) { return 0.2 * kPi * std::cos(kTwoPi * (x + th)); };
    s.omega = [](double x, double th) { return std::cos(kTwoPi * (x + th)); };
    s.domega_dx = [](double x, double th) { return -kTwoPi * std::sin(kTwoPi * (x + th)); };
    s.domega_dtheta = [](double x, double th) { return -kTwoPi * std::sin(kTwoPi * (x + th)); };
    s.observables = {s.omega};
    s.eps = eps;
    detail::certify(s);
    return s;
}

// omega = g(f(x)) - g(x) with g = sin(2 pi x)/(2 pi): Green-Kubo variance is
// identically zero and the complex-weighted operator keeps a modulus-one
// eigenvalue, which is what makes this the negative control.
inline double coboundary_transfer_g(double x) { return std::sin(kTwoPi * x) / kTwoPi; }

inline FastSlowSystem make_coboundary_control(double eps) {
    FastSlowSystem s;
    s.name = "coboundary-control";
    s.f = [](double x, double) { return 2.0 * x; };
    s.df_dx = [](double, double) { return 2.0; };
    s.df_dtheta = [](double, double) { return 0.0; };
    s.omega = [](double x, double) {
        return (std::sin(2.0 * kTwoPi * x) - std::sin(kTwoPi * x)) / kTwoPi;
    };
    s.domega_dx = [](double x, double) {
        return 2.0 * std::cos(2.0 * kTwoPi * x) - std::cos(kTwoPi * x);
    };
    s.domega_dtheta = [](double, double) { return 0.0; };
    s.observables = {s.omega};
    s.eps = eps;
    detail::certify(s);
    return s;
}

inline FastSlowSystem make_preset(const std::string& name, double eps) {
    if (name == "doubling-cos") return make_doubling_cos(eps);
    if (name == "perturbed-doubling") return make_perturbed_doubling(eps);
    if (name == "coboundary-control") return make_coboundary_control(eps);
    throw config_error("unknown preset: " + name);
}

// Build a system from parsed expressions; derivatives are symbolic.
inline FastSlowSystem make_from_expressions(const std::string& f_text,
                                            const std::string& omega_text,
                                            const std::vector<std::string>& extra_observables,
                                            double eps) {
    auto wrap = [](expr::NodePtr n) -> Field {
        return [n](double x, double th) { return expr::eval(*n, x, th); };
    };
    expr::NodePtr fn = expr::parse_expression(f_text);
    expr::NodePtr on = expr::parse_expression(omega_text);
    FastSlowSystem s;
    s.name = "custom";
    s.f = wrap(fn);
    s.df_dx = wrap(expr::differentiate(fn, expr::Var::X));
    s.df_dtheta = wrap(expr::differentiate(fn, expr::Var::Theta));
    s.omega = wrap(on);
    s.domega_dx = wrap(expr::differentiate(on, expr::Var::X));
    s.domega_dtheta = wrap(expr::differentiate(on, expr::Var::Theta));
    s.observables = {s.omega};
    for (const auto& t : extra_observables) s.observables.push_back(wrap(expr::parse_expression(t)));
    s.eps = eps;
    detail::certify(s);
    return s;
}

// ---- trajectory operations -------------------------------------------------

inline TrajectoryState step(const FastSlowSystem& sys, const TrajectoryState& s) {
    const double th = s.z[0];
    TrajectoryState out;
    out.z.resize(s.z.size());
    const double fx = sys.f(s.x, th);
    if (!std::isfinite(fx)) throw numeric_domain_error("non-finite value from evaluator f");
    out.x = mod1(fx);
    const double w = sys.omega(s.x, th);
    if (!std::isfinite(w)) throw numeric_domain_error("non-finite value from evaluator omega");
    out.z[0] = s.z[0] + sys.eps * w;
    for (std::size_t i = 1; i < s.z.size(); ++i) {
        const double a = sys.observables[i](s.x, th);
        if (!std::isfinite(a))
            throw numeric_domain_error("non-finite value from evaluator A[" + std::to_string(i) +
                                       "]");
        out.z[i] = s.z[i] + sys.eps * a;
    }
    return out;
}

inline std::vector<TrajectoryState> simulate(const FastSlowSystem& sys, const TrajectoryState& s0,
                                             long n) {
    std::vector<TrajectoryState> traj;
    traj.reserve(static_cast<std::size_t>(n) + 1);
    traj.push_back(s0);
    for (long k = 0; k < n; ++k) traj.push_back(step(sys, traj.back()));
    return traj;
}

struct SlopeRecursion {
    std::vector<double> u;
    double cone_bound = 0.0;
    bool cone_ok = true;
    long first_violation = -1;
};

// u_{k+1} = Xi_{p_k}(u_k) along a trajectory; the cone bound is the invariant
// slope scale sup|d_x omega|/(lambda-1) with a 10% margin.
inline SlopeRecursion slope_recursion(const FastSlowSystem& sys,
                                      const std::vector<TrajectoryState>& traj) {
    SlopeRecursion r;
    r.cone_bound = sys.sup_domega_dx / (sys.lambda_min - 1.0) * 1.1;
    r.u.reserve(traj.size());
    double u = 0.0;
    r.u.push_back(u);
    for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
        const double x = traj[k].x, th = traj[k].z[0];
        const double num = sys.domega_dx(x, th) + (1.0 + sys.eps * sys.domega_dtheta(x, th)) * u;
        const double den = sys.df_dx(x, th) + sys.eps * sys.df_dtheta(x, th) * u;
        u = num / den;
        r.u.push_back(u);
        if (r.cone_ok && std::fabs(u) > r.cone_bound) {
            r.cone_ok = false;
            r.first_violation = static_cast<long>(k + 1);
        }
    }
    return r;
}

struct ShadowReport {
    double y0 = 0.0;
    std::vector<double> shadow_orbit;    // n+1 torus points, exact orbit by construction
    double residual = 0.0;               // max_k |f(shadow_k) - shadow_{k+1}|
    double theta_error_max = 0.0;
    double x_error_max = 0.0;
    std::vector<double> xi;              // only filled by shadow_averaged
    std::vector<double> eta;
    double eta_bound_const = 0.0;        // max |eta_k| / (eps (k+1))
};

namespace detail {

// Inverse branch of x -> f(x, theta) on the cell containing x_cell, applied
// to target (torus point).  The lift is monotone so bisection cannot fail;
// a Newton polish brings the root to machine precision.
inline double inverse_branch(const FastSlowSystem& sys, double theta, double x_cell,
                             double target) {
    const double f0 = sys.f(0.0, theta);
    const double fc = sys.f(x_cell, theta);
    const int branch = static_cast<int>(std::floor(fc - f0));
    if (std::fabs(fc - f0 - branch) < 1e-14 || std::fabs(fc - f0 - branch - 1.0) < 1e-14)
        throw degenerate_orbit_error("orbit point within 1e-14 of a partition boundary");
    // cell endpoints: f(l) = f0 + branch, f(r) = f0 + branch + 1
    auto solve_lift = [&](double lift_target, double lo, double hi) {
        for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
            const double mid = 0.5 * (lo + hi);
            (sys.f(mid, theta) < lift_target ? lo : hi) = mid;
        }
        double y = 0.5 * (lo + hi);
        for (int it = 0; it < 3; ++it) y -= (sys.f(y, theta) - lift_target) / sys.df_dx(y, theta);
        return y;
    };
    const double l = branch == 0 ? 0.0 : solve_lift(f0 + branch, 0.0, 1.0);
    const double r =
        branch == sys.degree - 1 ? 1.0 : solve_lift(f0 + branch + 1.0, 0.0, 1.0);
    // pick the integer lift of target landing inside [f(l), f(r)]
    const double m = std::ceil(f0 + branch - target - 1e-15);
    return solve_lift(target + m, l, r);
}

}  // namespace detail

// Reconstruct a frozen-theta orbit shadowing the true one: backward inverse
// branches along the true itinerary, so shadow_{k+1} = f(shadow_k, theta*)
// holds to solver precision at every step.
inline ShadowReport shadow_reconstruct(const FastSlowSystem& sys, double x0, double theta0, long n,
                                       double theta_star, double admissible_c = 1.0) {
    if (std::fabs(theta0 - theta_star) * n + sys.eps * double(n) * double(n) > admissible_c)
        throw config_error("shadowing precondition eps*n^2 + |theta0-theta*|*n <= C violated");
    if (std::fabs(theta0 - theta_star) > 0.1)
        throw config_error("|theta0 - theta*| must be <= 0.1");
    TrajectoryState s0{mod1(x0), {theta0}};
    auto traj = simulate(sys, s0, n);

    std::vector<double> y(static_cast<std::size_t>(n) + 1);
    y[n] = traj[n].x;
    for (long k = n - 1; k >= 0; --k)
        y[k] = detail::inverse_branch(sys, theta_star, traj[k].x, y[k + 1]);

    ShadowReport rep;
    rep.y0 = y[0];
    rep.shadow_orbit = y;
    double sum_omega = 0.0;
    for (long k = 0; k <= n; ++k) {
        rep.theta_error_max = std::max(
            rep.theta_error_max, std::fabs(traj[k].z[0] - theta_star - sys.eps * sum_omega));
        rep.x_error_max = std::max(rep.x_error_max, torus_dist(y[k], traj[k].x));
        if (k < n) {
            sum_omega += sys.omega(y[k], theta_star);
            rep.residual = std::max(rep.residual, torus_dist(mod1(sys.f(y[k], theta_star)), y[k + 1]));
        }
    }
    return rep;
}

// Same reconstruction against the time-dependent averaged composition
// f(.,theta_bar(eps k)); theta_bar comes from the statistics module.
inline ShadowReport shadow_averaged(const FastSlowSystem& sys, double x0, double theta0, long n,
                                    const std::function<double(double)>& theta_bar,
                                    double admissible_c = 1.0) {
    if (sys.eps * double(n) * double(n) > admissible_c)
        throw config_error("shadowing precondition eps*n^2 <= C violated");
    TrajectoryState s0{mod1(x0), {theta0}};
    auto traj = simulate(sys, s0, n);

    std::vector<double> thb(static_cast<std::size_t>(n) + 1);
    for (long k = 0; k <= n; ++k) thb[k] = theta_bar(sys.eps * k);

    std::vector<double> y(static_cast<std::size_t>(n) + 1);
    y[n] = traj[n].x;
    for (long k = n - 1; k >= 0; --k)
        y[k] = detail::inverse_branch(sys, thb[k], traj[k].x, y[k + 1]);

    ShadowReport rep;
    rep.y0 = y[0];
    rep.shadow_orbit = y;
    rep.xi.resize(y.size());
    rep.eta.resize(y.size());
    for (long k = 0; k <= n; ++k) {
        rep.xi[k] = traj[k].x - y[k];
        rep.eta[k] = traj[k].z[0] - thb[k];
        rep.theta_error_max = std::max(rep.theta_error_max, std::fabs(rep.eta[k]));
        rep.x_error_max = std::max(rep.x_error_max, torus_dist(y[k], traj[k].x));
        if (sys.eps > 0.0)
            rep.eta_bound_const =
                std::max(rep.eta_bound_const, std::fabs(rep.eta[k]) / (sys.eps * (k + 1)));
        if (k < n)
            rep.residual = std::max(rep.residual, torus_dist(mod1(sys.f(y[k], thb[k])), y[k + 1]));
    }
    return rep;
}

}  // namespace fastslow
