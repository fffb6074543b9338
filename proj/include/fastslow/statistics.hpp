#pragma once

#include <cmath>
#include <thread>
#include <vector>

#include "fastslow/transfer.hpp"

namespace fastslow {

// Ahat-component averages Abar(theta) under the invariant density of
// f(.,theta); component 0 is omega_bar.
inline std::vector<double> averaged_field(const FastSlowSystem& sys, double theta,
                                          Disc disc = Disc::Fourier, int size = 128) {
    return averaged_observables(sys, theta, disc, size);
}

// Periodic interpolation table over theta in [0,1): 4-point Lagrange cubic
// through equispaced nodes, derivative of component 0 by 4th-order centered
// differences of the node values.
class ThetaTable {
public:
    ThetaTable(const FastSlowSystem& sys, int nodes = 256, Disc disc = Disc::Fourier,
               int size = 128)
        : n_(nodes) {
        const std::size_t d = sys.observables.size();
        vals_.assign(d, std::vector<double>(static_cast<std::size_t>(n_)));
        for (int j = 0; j < n_; ++j) {
            auto abar = averaged_observables(sys, static_cast<double>(j) / n_, disc, size);
            for (std::size_t a = 0; a < d; ++a) vals_[a][j] = abar[a];
        }
        deriv0_.resize(static_cast<std::size_t>(n_));
        const double h = 1.0 / n_;
        for (int j = 0; j < n_; ++j) {
            auto v = [&](int k) { return vals_[0][((j + k) % n_ + n_) % n_]; };
            deriv0_[j] = (v(-2) - 8.0 * v(-1) + 8.0 * v(1) - v(2)) / (12.0 * h);
        }
    }

    std::size_t components() const { return vals_.size(); }

    double eval(std::size_t comp, double theta) const { return interp(vals_[comp], theta); }

    // d omega_bar / d theta
    double deriv0(double theta) const { return interp(deriv0_, theta); }

private:
    double interp(const std::vector<double>& y, double theta) const {
        const double t = mod1(theta) * n_;
        const int j = static_cast<int>(std::floor(t));
        const double u = t - j;
        auto v = [&](int k) { return y[((j + k) % n_ + n_) % n_]; };
        // Lagrange cubic through nodes j-1..j+2
        return v(-1) * (-u * (u - 1.0) * (u - 2.0) / 6.0) +
               v(0) * ((u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0) +
               v(1) * (-(u + 1.0) * u * (u - 2.0) / 2.0) +
               v(2) * ((u + 1.0) * u * (u - 1.0) / 6.0);
    }

    int n_;
    std::vector<std::vector<double>> vals_;
    std::vector<double> deriv0_;
};

struct AveragedPath {
    std::vector<double> t_grid;
    std::vector<double> theta_bar;
    std::vector<std::vector<double>> zeta_bar;  // per time node, d-1 entries
    double error_estimate = 0.0;                // step-halving estimate per unit time
};

// RK4 on theta' = omega_bar(theta), zeta' = Abar_i(theta), with the field
// from an interpolation table; a half-step shadow integration provides the
// error estimate.
inline AveragedPath solve_averaged(const ThetaTable& table, double theta0, double T, double dt) {
    if (dt > 1e-2) throw config_error("averaged-ODE step must be <= 1e-2");
    if (T < 0.0) throw config_error("negative horizon");
    const std::size_t d1 = table.components();
    auto rk4_step = [&](std::vector<double>& y, double h) {
        // y[0] = theta, y[1..] = zeta
        auto field = [&](const std::vector<double>& s) {
            std::vector<double> f(d1);
            for (std::size_t a = 0; a < d1; ++a) f[a] = table.eval(a, s[0]);
            return f;
        };
        auto k1 = field(y);
        std::vector<double> tmp(d1);
        for (std::size_t a = 0; a < d1; ++a) tmp[a] = y[a] + 0.5 * h * k1[a];
        auto k2 = field(tmp);
        for (std::size_t a = 0; a < d1; ++a) tmp[a] = y[a] + 0.5 * h * k2[a];
        auto k3 = field(tmp);
        for (std::size_t a = 0; a < d1; ++a) tmp[a] = y[a] + h * k3[a];
        auto k4 = field(tmp);
        for (std::size_t a = 0; a < d1; ++a)
            y[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
    };

    const long n = std::max(1L, static_cast<long>(std::ceil(T / dt)));
    const double h = T > 0.0 ? T / n : 0.0;
    AveragedPath out;
    out.t_grid.reserve(n + 1);
    out.theta_bar.reserve(n + 1);
    std::vector<double> y(d1, 0.0), yh(d1, 0.0);
    y[0] = yh[0] = theta0;
    out.t_grid.push_back(0.0);
    out.theta_bar.push_back(theta0);
    out.zeta_bar.push_back(std::vector<double>(y.begin() + 1, y.end()));
    for (long k = 0; k < n && T > 0.0; ++k) {
        rk4_step(y, h);
        rk4_step(yh, 0.5 * h);
        rk4_step(yh, 0.5 * h);
        out.t_grid.push_back((k + 1) * h);
        out.theta_bar.push_back(y[0]);
        out.zeta_bar.push_back(std::vector<double>(y.begin() + 1, y.end()));
        out.error_estimate = std::max(out.error_estimate, std::fabs(y[0] - yh[0]) / (15.0 * h));
    }
    if (out.error_estimate > 1e-8)
        throw numeric_domain_error("averaged-ODE step-halving error above 1e-8 per unit time");
    return out;
}

// Green-Kubo matrix Sigma^2(theta) = mu(Ahat (x) Ahat) + sum_m [C_m + C_m^T]
// with C_m = mu(Ahat o f^m (x) Ahat); correlations by repeated transfer-
// operator application to Ahat h, truncated when the term drops below tol.
inline std::vector<std::vector<double>> green_kubo(const FastSlowSystem& sys, double theta,
                                                   double tol = 1e-12,
                                                   Disc disc = Disc::Fourier, int size = 128) {
    const std::size_t d = sys.observables.size();
    OperatorSpec spec{theta, nullptr, disc, size};
    CMatrix L = build_operator(sys, spec);
    EigenData e = leading_eigentriple(sys, spec);
    const int N = size;
    auto abar = averaged_observables(sys, theta, disc, size);

    std::vector<CVector> ahat(d, CVector(N));
    for (std::size_t a = 0; a < d; ++a)
        for (int i = 0; i < N; ++i) ahat[a][i] = sys.observables[a](e.grid[i], theta) - abar[a];

    auto leb = [&](const CVector& v) { return v.sum().real() / N; };

    std::vector<std::vector<double>> sig(d, std::vector<double>(d, 0.0));
    std::vector<CVector> v(d);
    for (std::size_t a = 0; a < d; ++a) v[a] = ahat[a].cwiseProduct(e.h);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) sig[i][j] = leb(ahat[i].cwiseProduct(v[j]));
    for (int m = 1; m <= 200; ++m) {
        double frob = 0.0;
        for (std::size_t a = 0; a < d; ++a) v[a] = (L * v[a]) / e.lambda;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double c = leb(ahat[i].cwiseProduct(v[j]));
                sig[i][j] += c;
                sig[j][i] += c;
                frob += c * c;
            }
        if (std::sqrt(frob) < tol) return sig;
    }
    throw spectral_gap_error("Green-Kubo correlations did not decay by m=200");
}

struct VarianceProfile {
    std::vector<double> t_grid;
    std::vector<double> var_t;  // Var_t^2 for the theta component
};

// Sigma^2_{11}(theta) table for variance integrals; cheap cubic interpolation
// over precomputed Green-Kubo values.
class Sigma2Table {
public:
    Sigma2Table(const FastSlowSystem& sys, int nodes = 64, Disc disc = Disc::Fourier,
                int size = 128)
        : n_(nodes), vals_(static_cast<std::size_t>(nodes)) {
        for (int j = 0; j < n_; ++j)
            vals_[j] = green_kubo(sys, static_cast<double>(j) / n_, 1e-12, disc, size)[0][0];
    }

    double eval(double theta) const {
        const double t = mod1(theta) * n_;
        const int j = static_cast<int>(std::floor(t));
        const double u = t - j;
        auto v = [&](int k) { return vals_[((j + k) % n_ + n_) % n_]; };
        return v(-1) * (-u * (u - 1.0) * (u - 2.0) / 6.0) +
               v(0) * ((u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0) +
               v(1) * (-(u + 1.0) * u * (u - 2.0) / 2.0) +
               v(2) * ((u + 1.0) * u * (u - 1.0) / 6.0);
    }

private:
    int n_;
    std::vector<double> vals_;
};

// Var_t^2 = int_0^t exp(2 int_s^t omega_bar'(theta_bar(r)) dr) Sigma^2_11(theta_bar(s)) ds
// by trapezoid on the averaged path's grid.
inline VarianceProfile variance_profile(const ThetaTable& table, const Sigma2Table& sigma2,
                                        const AveragedPath& path) {
    const std::size_t n = path.t_grid.size();
    VarianceProfile out;
    out.t_grid = path.t_grid;
    out.var_t.assign(n, 0.0);
    // W(t) = int_0^t omega_bar'(theta_bar) dr, trapezoid
    std::vector<double> W(n, 0.0), s2(n);
    std::vector<double> wp(n);
    for (std::size_t k = 0; k < n; ++k) {
        wp[k] = table.deriv0(path.theta_bar[k]);
        s2[k] = sigma2.eval(path.theta_bar[k]);
    }
    for (std::size_t k = 1; k < n; ++k)
        W[k] = W[k - 1] + 0.5 * (wp[k] + wp[k - 1]) * (path.t_grid[k] - path.t_grid[k - 1]);
    for (std::size_t k = 1; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t j = 1; j <= k; ++j) {
            const double a = std::exp(2.0 * (W[k] - W[j - 1])) * s2[j - 1];
            const double b = std::exp(2.0 * (W[k] - W[j])) * s2[j];
            acc += 0.5 * (a + b) * (path.t_grid[j] - path.t_grid[j - 1]);
        }
        out.var_t[k] = acc;
    }
    return out;
}

// Euler-Maruyama samples of the limiting deviation Delta(T) for
// dDelta = omega_bar'(theta_bar(t)) Delta dt + Sigma(theta_bar(t)) dB.
// Path i uses RNG stream i, so the ensemble is identical for any thread count.
inline std::vector<double> sde_reference(const ThetaTable& table, const Sigma2Table& sigma2,
                                         const AveragedPath& path, double T, double dt,
                                         long n_paths, std::uint64_t seed, int threads = 1) {
    if (dt > 1e-3) throw config_error("SDE step must be <= 1e-3");
    const long n = std::max(1L, static_cast<long>(std::ceil(T / dt)));
    const double h = T / n;
    // precompute drift/diffusion along theta_bar(t) on the step grid
    std::vector<double> drift(n), diff(n);
    auto theta_at = [&](double t) {
        // linear interpolation on the averaged path grid
        if (t <= path.t_grid.front()) return path.theta_bar.front();
        if (t >= path.t_grid.back()) return path.theta_bar.back();
        const auto it = std::upper_bound(path.t_grid.begin(), path.t_grid.end(), t);
        const std::size_t k = static_cast<std::size_t>(it - path.t_grid.begin());
        const double u = (t - path.t_grid[k - 1]) / (path.t_grid[k] - path.t_grid[k - 1]);
        return path.theta_bar[k - 1] * (1.0 - u) + path.theta_bar[k] * u;
    };
    for (long k = 0; k < n; ++k) {
        const double th = theta_at(k * h);
        drift[k] = table.deriv0(th);
        const double s2 = sigma2.eval(th);
        if (s2 < -1e-8) throw degenerate_variance_error("negative Sigma^2 along averaged path");
        diff[k] = std::sqrt(std::max(0.0, s2));
    }
    std::vector<double> out(static_cast<std::size_t>(n_paths));
    const double sqh = std::sqrt(h);
    auto worker = [&](long lo, long hi) {
        for (long p = lo; p < hi; ++p) {
            CounterRng rng(seed, static_cast<std::uint64_t>(p));
            double delta = 0.0;
            for (long k = 0; k < n; ++k)
                delta += drift[k] * delta * h + diff[k] * sqh * rng.normal();
            out[p] = delta;
        }
    };
    if (threads <= 1) {
        worker(0, n_paths);
    } else {
        std::vector<std::thread> pool;
        const long chunk = (n_paths + threads - 1) / threads;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back(worker, std::min<long>(t * chunk, n_paths),
                              std::min<long>((t + 1) * chunk, n_paths));
        for (auto& th : pool) th.join();
    }
    return out;
}

}  // namespace fastslow
