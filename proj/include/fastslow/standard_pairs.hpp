#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "fastslow/system.hpp"

namespace fastslow {

using PairPotential = std::function<std::complex<double>(double, double)>;  // (x, theta)

namespace detail {

// Chebyshev-Lobatto machinery on [-1,1], M = 64 samples per pair, shared by
// every pair: nodes, barycentric weights, differentiation matrix, and a
// 64-point Gauss-Legendre rule for the integrals.
struct ChebGrid {
    static constexpr int M = 64;
    std::vector<double> t, bw;          // nodes (descending), barycentric weights
    std::vector<std::vector<double>> D;  // spectral differentiation matrix
    std::vector<double> gl_x, gl_w;     // Gauss-Legendre nodes/weights on [-1,1]

    ChebGrid() {
        t.resize(M);
        bw.resize(M);
        for (int k = 0; k < M; ++k) {
            t[k] = std::cos(kPi * k / (M - 1));
            bw[k] = (k % 2 == 0 ? 1.0 : -1.0) * ((k == 0 || k == M - 1) ? 0.5 : 1.0);
        }
        D.assign(M, std::vector<double>(M, 0.0));
        auto c = [&](int k) { return (k == 0 || k == M - 1) ? 2.0 : 1.0; };
        for (int i = 0; i < M; ++i) {
            double row = 0.0;
            for (int j = 0; j < M; ++j)
                if (i != j) {
                    D[i][j] = c(i) / c(j) * ((i + j) % 2 == 0 ? 1.0 : -1.0) / (t[i] - t[j]);
                    row += D[i][j];
                }
            D[i][i] = -row;  // negative row-sum trick for the diagonal
        }
        gl_x.resize(M);
        gl_w.resize(M);
        for (int k = 0; k < M; ++k) {
            // Newton from the Chebyshev initial guess
            double x = std::cos(kPi * (k + 0.75) / (M + 0.5));
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int n = 2; n <= M; ++n) {
                    const double p2 = ((2 * n - 1) * x * p1 - (n - 1) * p0) / n;
                    p0 = p1;
                    p1 = p2;
                }
                const double dp = M * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::fabs(dx) < 1e-15) break;
            }
            gl_x[k] = x;
            double p0 = 1.0, p1 = x;
            for (int n = 2; n <= M; ++n) {
                const double p2 = ((2 * n - 1) * x * p1 - (n - 1) * p0) / n;
                p0 = p1;
                p1 = p2;
            }
            const double dp = M * (x * p1 - p0) / (x * x - 1.0);
            gl_w[k] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }

    static const ChebGrid& get() {
        static const ChebGrid g;
        return g;
    }
};

template <typename T>
T barycentric(const std::vector<T>& vals, double u) {
    const auto& g = ChebGrid::get();
    T num{};
    double den = 0.0;
    for (int k = 0; k < ChebGrid::M; ++k) {
        const double d = u - g.t[k];
        if (std::fabs(d) < 1e-14) return vals[k];
        const double w = g.bw[k] / d;
        num += vals[k] * w;
        den += w;
    }
    return num * (1.0 / den);
}

template <typename T>
std::vector<T> spectral_derivative(const std::vector<T>& vals, double half_len) {
    const auto& g = ChebGrid::get();
    std::vector<T> out(ChebGrid::M, T{});
    for (int i = 0; i < ChebGrid::M; ++i)
        for (int j = 0; j < ChebGrid::M; ++j) out[i] += vals[j] * g.D[i][j];
    for (auto& v : out) v *= 1.0 / half_len;  // d/dx = (2/len) d/dt
    return out;
}

}  // namespace detail

// A standard pair: a nearly-horizontal curve theta = G(x) over [a, a+len]
// (lift coordinates; reduced mod 1 on evaluation) carrying a normalized
// density rho.  Both are Chebyshev sample vectors.
struct StandardPair {
    double a = 0.0, len = 0.0;
    std::vector<double> G;                 // curve samples at Chebyshev nodes
    std::vector<std::complex<double>> rho;  // density samples, int rho dx = 1

    double x_at(double t) const { return a + 0.5 * len * (1.0 + t); }  // t in [-1,1]
    double t_at(double x) const { return 2.0 * (x - a) / len - 1.0; }
    double curve(double x) const { return detail::barycentric(G, t_at(x)); }
    std::complex<double> density(double x) const { return detail::barycentric(rho, t_at(x)); }
};

struct PairParams {
    double delta = 0.05;
    double c1 = 0.0;  // slope scale: ||G'|| <= eps c1; 0 means take the cone bound
    double c2 = 10.0;
    double c3 = 250.0;
    double dbar0 = 10.0;   // higher-derivative headroom factors
    double dbar1 = 100.0;
    double cpre = 10.0;    // precondition scale: c2 >= cpre (1 + ||phi||_C1), etc.
};

struct StandardFamily {
    std::vector<StandardPair> pairs;
    std::vector<std::complex<double>> nu;  // weights
    PairParams params;
};

namespace detail {

inline double sup_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

inline double sup_abs(const std::vector<std::complex<double>>& v) {
    double m = 0.0;
    for (const auto& x : v) m = std::max(m, std::abs(x));
    return m;
}

inline std::complex<double> integrate_pair(const StandardPair& p,
                                           const std::function<std::complex<double>(double)>& f) {
    const auto& g = ChebGrid::get();
    std::complex<double> s = 0.0;
    for (int k = 0; k < ChebGrid::M; ++k) s += g.gl_w[k] * f(p.x_at(g.gl_x[k]));
    return s * (0.5 * p.len);
}

inline double sup_abs(const std::vector<double>& v);
inline double sup_abs(const std::vector<std::complex<double>>& v);

// Coefficient-space differentiation for the derivative bounds: applying the
// differentiation matrix to value vectors amplifies rounding by (M^2/len)^k,
// which swamps the higher-derivative checks on short pairs.  In coefficient
// space the derivative recurrence is exact, and the rounding tail of an
// analytic sample vector can be identified and dropped first.

// full-form coefficients a with f(t) = sum_j a_j T_j(t)
template <typename T>
std::vector<T> cheb_series(const std::vector<T>& v) {
    const int M = ChebGrid::M;
    std::vector<T> a(M, T{});
    for (int j = 0; j < M; ++j) {
        T s{};
        for (int k = 0; k < M; ++k) {
            const double w = (k == 0 || k == M - 1) ? 0.5 : 1.0;
            s += v[k] * (w * std::cos(kPi * j * k / (M - 1)));
        }
        a[j] = s * (2.0 / (M - 1));
    }
    a[0] *= 0.5;
    a[M - 1] *= 0.5;
    return a;
}

// the top third of the spectrum at these lengths is rounding noise; anything
// within 20x of that level is indistinguishable from it
template <typename T>
std::vector<T> cheb_tail_filter(std::vector<T> a) {
    const int M = static_cast<int>(a.size());
    double floor_level = 0.0;
    for (int j = 2 * M / 3; j < M; ++j) floor_level = std::max(floor_level, std::abs(a[j]));
    const double thresh = 20.0 * floor_level;
    for (auto& c : a)
        if (std::abs(c) <= thresh) c = T{};
    return a;
}

// T'_j = j (2 T_{j-1} + 2 T_{j-3} + ...), T_0 term taken once
template <typename T>
std::vector<T> cheb_series_derivative(const std::vector<T>& a, double half_len) {
    std::vector<T> b(a.size(), T{});
    for (std::size_t k = 0; k < a.size(); ++k) {
        T s{};
        for (std::size_t j = k + 1; j < a.size(); j += 2) s += a[j] * (2.0 * j);
        b[k] = s * (1.0 / half_len);
    }
    b[0] *= 0.5;
    return b;
}

template <typename T>
std::vector<T> cheb_series_values(const std::vector<T>& a) {
    const int M = ChebGrid::M;
    std::vector<T> v(M, T{});
    for (int k = 0; k < M; ++k) {
        T s{};
        for (int j = 0; j < static_cast<int>(a.size()); ++j)
            s += a[j] * std::cos(kPi * j * k / (M - 1));
        v[k] = s;
    }
    return v;
}

}  // namespace detail

inline void validate_pair(const StandardPair& p, const PairParams& pp, double eps, double c1,
                          bool complex_density) {
    if (!(p.len >= 0.5 * pp.delta - 1e-12 && p.len <= pp.delta + 1e-12))
        throw config_error("pair length outside [delta/2, delta]");
    const double half = 0.5 * p.len;
    auto ag = detail::cheb_tail_filter(detail::cheb_series(p.G));
    auto b1 = detail::cheb_series_derivative(ag, half);
    auto b2 = detail::cheb_series_derivative(b1, half);
    auto b3 = detail::cheb_series_derivative(b2, half);
    auto G1 = detail::cheb_series_values(b1);
    auto G2 = detail::cheb_series_values(b2);
    auto G3 = detail::cheb_series_values(b3);
    const double slack = 1e-9;
    if (detail::sup_abs(G1) > eps * c1 + slack) throw config_error("pair curve slope above eps c1");
    if (detail::sup_abs(G2) > eps * c1 * pp.dbar0 + slack)
        throw config_error("pair curve curvature above eps c1 D0");
    if (detail::sup_abs(G3) > eps * c1 * pp.dbar1 + slack)
        throw config_error("pair curve third derivative above eps c1 D1");
    const auto mass =
        detail::integrate_pair(p, [&](double x) { return p.density(x); });
    if (std::abs(mass - 1.0) > 1e-8) throw config_error("pair density does not integrate to 1");
    auto ar = detail::cheb_tail_filter(detail::cheb_series(p.rho));
    auto r1c = detail::cheb_series_derivative(ar, half);
    auto R1 = detail::cheb_series_values(r1c);
    auto R2 = detail::cheb_series_values(detail::cheb_series_derivative(r1c, half));
    double r1 = 0.0, r2 = 0.0;
    for (int k = 0; k < detail::ChebGrid::M; ++k) {
        const double d = std::abs(p.rho[k]);
        if (d < 1e-14) throw config_error("pair density vanishes on the grid");
        r1 = std::max(r1, std::abs(R1[k]) / d);
        r2 = std::max(r2, std::abs(R2[k]) / d);
    }
    if (r1 > pp.c2 + slack) throw config_error("pair log-derivative above c2");
    if (r2 > pp.c3 + slack) throw config_error("pair density second derivative above c3");
    if (complex_density && pp.c2 * pp.delta > kPi / 10.0 + 1e-12)
        throw config_error("complex pair requires c2 delta <= pi/10");
}

// Uniform-density horizontal pair; the canonical seed for tests and ensembles.
inline StandardPair make_uniform_pair(double a, double len, double theta0) {
    StandardPair p;
    p.a = a;
    p.len = len;
    p.G.assign(detail::ChebGrid::M, theta0);
    p.rho.assign(detail::ChebGrid::M, 1.0 / len);
    return p;
}

// The measure induced by the family: sum_l nu_l int g(x, G_l(x)) rho_l(x) dx.
inline std::complex<double> family_measure(
    const StandardFamily& fam, const std::function<std::complex<double>(double, double)>& g) {
    std::complex<double> total = 0.0;
    for (std::size_t l = 0; l < fam.pairs.size(); ++l) {
        const StandardPair& p = fam.pairs[l];
        total += fam.nu[l] * detail::integrate_pair(p, [&](double x) {
            return g(mod1(x), p.curve(x)) * p.density(x);
        });
    }
    return total;
}

// One weighted pushforward: each pair is mapped by F_eps, the image interval
// is cut into pieces of length in [delta/2, delta], and each piece becomes a
// new pair via the inverse branch, with weight nu_j = int e^{phi} rho phi_j'.
inline StandardFamily pushforward_decompose(const StandardFamily& fam, const PairPotential& phi,
                                            const FastSlowSystem& sys) {
    const auto& grid = detail::ChebGrid::get();
    const PairParams& pp = fam.params;
    const double c1 = pp.c1 > 0.0 ? pp.c1 : sys.sup_domega_dx / (sys.lambda_min - 1.0) * 1.1;
    StandardFamily out;
    out.params = fam.params;

    // precondition: the density-bound parameters must dominate the potential
    double c0n = 0.0, c1n = 0.0, c2n = 0.0;
    for (int i = 0; i < 128; ++i) {
        const double x = i / 128.0;
        for (double th : {0.0, 0.25, 0.5, 0.75}) {
            const double hfd = 1e-4;
            const auto v = phi(x, th);
            const auto vp = phi(mod1(x + hfd), th), vm = phi(mod1(x - hfd + 1.0), th);
            c0n = std::max(c0n, std::abs(v));
            c1n = std::max(c1n, std::abs((vp - vm) / (2.0 * hfd)));
            c2n = std::max(c2n, std::abs((vp - 2.0 * v + vm) / (hfd * hfd)));
        }
    }
    const double phi_c1 = c0n + c1n, phi_c2 = phi_c1 + c2n;
    if (pp.c2 < pp.cpre * (1.0 + phi_c1) - 1e-9)
        throw config_error("c2 too small for this potential: need >= C (1 + ||phi||_C1)");
    if (pp.c3 < pp.cpre * (1.0 + phi_c2 + phi_c1 * phi_c1) - 1e-9)
        throw config_error("c3 too small for this potential: need >= C (1 + ||phi||_C2 + ||phi||_C1^2)");

    for (std::size_t l = 0; l < fam.pairs.size(); ++l) {
        const StandardPair& p = fam.pairs[l];
        auto G1 = detail::spectral_derivative(p.G, 0.5 * p.len);
        auto curve_slope = [&](double x) { return detail::barycentric(G1, p.t_at(x)); };
        // lifted graph map x -> f(x, G(x)) is monotone because the curve is
        // nearly horizontal and f expands
        auto fG = [&](double x) { return sys.f(mod1(x), p.curve(x)) + sys.degree * std::floor(x); };
        auto dfG = [&](double x) {
            const double th = p.curve(x);
            return sys.df_dx(mod1(x), th) + sys.df_dtheta(mod1(x), th) * curve_slope(x);
        };
        const double lo = fG(p.a), hi = fG(p.a + p.len);
        if (!(hi > lo)) throw invalid_map_error("pair image degenerate");
        const int pieces = std::max(1, static_cast<int>(std::ceil((hi - lo) / pp.delta)));
        const double plen = (hi - lo) / pieces;
        if (plen < 0.5 * pp.delta - 1e-12 || plen > pp.delta + 1e-12)
            throw decomposition_degenerate_error("image piece length left [delta/2, delta]");

        auto inv = [&](double target) {
            double a = p.a, b = p.a + p.len;
            for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
                const double mid = 0.5 * (a + b);
                (fG(mid) < target ? a : b) = mid;
            }
            double x = 0.5 * (a + b);
            for (int it = 0; it < 3; ++it) x -= (fG(x) - target) / dfG(x);
            return x;
        };

        for (int j = 0; j < pieces; ++j) {
            const double A = lo + j * plen;
            StandardPair q;
            q.a = mod1(A);
            q.len = plen;
            q.G.resize(detail::ChebGrid::M);
            q.rho.resize(detail::ChebGrid::M);
            std::vector<std::complex<double>> tilde(detail::ChebGrid::M);
            for (int k = 0; k < detail::ChebGrid::M; ++k) {
                const double u = A + 0.5 * plen * (1.0 + grid.t[k]);
                const double x = inv(u);
                const double th = p.curve(x);
                q.G[k] = th + sys.eps * sys.omega(mod1(x), th);
                tilde[k] = std::exp(phi(mod1(x), th)) * p.density(x) / dfG(x);
            }
            StandardPair tmp = q;
            tmp.rho = tilde;
            const std::complex<double> nu_j =
                detail::integrate_pair(tmp, [&](double x) { return tmp.density(x); });
            if (std::abs(nu_j) < 1e-14)
                throw decomposition_degenerate_error(
                    "piece weight collapsed below 1e-14 (precondition violation)");
            bool is_complex = false;
            for (int k = 0; k < detail::ChebGrid::M; ++k) {
                q.rho[k] = tilde[k] / nu_j;
                is_complex = is_complex || std::fabs(q.rho[k].imag()) > 1e-12;
            }
            validate_pair(q, pp, sys.eps, c1, is_complex);
            out.pairs.push_back(std::move(q));
            out.nu.push_back(fam.nu[l] * nu_j);
        }
    }
    return out;
}

// n-fold decomposition with a per-step potential.
inline StandardFamily iterate_family(StandardFamily fam, const std::vector<PairPotential>& phis,
                                     int n, const FastSlowSystem& sys) {
    for (int k = 0; k < n; ++k) {
        const PairPotential& phi =
            phis.empty() ? PairPotential([](double, double) { return std::complex<double>(0.0); })
                         : phis[static_cast<std::size_t>(k) % phis.size()];
        fam = pushforward_decompose(fam, phi, sys);
        if (fam.pairs.size() > 1000000) throw resource_error("pair count exceeded 1e6");
    }
    return fam;
}

}  // namespace fastslow
