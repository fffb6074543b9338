#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "fastslow/rng.hpp"
#include "fastslow/system.hpp"

namespace fastslow {

using cdouble = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

enum class Disc { Fourier, Ulam };

// Weighted transfer operator (L g)(x) = sum over preimages y of f(.,theta) of
// e^{pot(y)} g(y) / f'(y,theta), discretized either by Fourier collocation
// (spectral, the default) or by an Ulam cell-transition matrix (the
// independent cross-check).
struct OperatorSpec {
    double theta = 0.0;
    std::function<cdouble(double)> potential;  // nullptr means zero potential
    Disc disc = Disc::Fourier;
    int size = 128;  // Fourier modes N or Ulam cells M; power of two >= 32
};

struct EigenData {
    cdouble lambda;        // leading eigenvalue
    double chi = 0.0;      // log |lambda|
    std::vector<double> grid;
    CVector h;             // right eigenvector sampled on grid
    CVector m;             // left eigenvector as quadrature weights: m(g) = sum m_i g(x_i)
    double gap = 1.0;      // |lambda_2| / |lambda_1|
    bool near_degenerate = false;
    Disc disc = Disc::Fourier;
};

// Monotone branch partition of f(.,theta): cuts[b]..cuts[b+1] is the cell on
// which the lift sweeps one full period.  Computed once, reused by every
// inverse-branch solve at this theta.
class BranchPartition {
public:
    BranchPartition(const FastSlowSystem& sys, double theta) : sys_(&sys), theta_(theta) {
        f0_ = sys.f(0.0, theta);
        cuts_.resize(static_cast<std::size_t>(sys.degree) + 1);
        cuts_[0] = 0.0;
        cuts_[sys.degree] = 1.0;
        for (int b = 1; b < sys.degree; ++b) cuts_[b] = solve(f0_ + b, 0.0, 1.0);
    }

    // preimage of torus point x under branch b
    double inverse(int b, double x) const {
        if (b < 0 || b >= sys_->degree) throw interface_error("branch index out of range");
        const double m = std::ceil(f0_ + b - mod1(x) - 1e-15);
        return solve(mod1(x) + m, cuts_[b], cuts_[b + 1]);
    }

    // branch cell containing x; throws if x sits on a cut to within 1e-14
    int branch_of(double x) const {
        const double v = sys_->f(x, theta_) - f0_;
        const int b = std::clamp(static_cast<int>(std::floor(v)), 0, sys_->degree - 1);
        if (std::fabs(v - std::round(v)) < 1e-14)
            throw degenerate_orbit_error("orbit point within 1e-14 of a partition boundary");
        return b;
    }

private:
    double solve(double lift_target, double lo, double hi) const {
        for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
            const double mid = 0.5 * (lo + hi);
            (sys_->f(mid, theta_) < lift_target ? lo : hi) = mid;
        }
        double y = 0.5 * (lo + hi);
        const double l = lo, r = hi;
        for (int it = 0; it < 3; ++it) {
            const double d = sys_->df_dx(y, theta_);
            if (d <= 0.0) throw invalid_map_error("fiber map not monotone on a partition cell");
            y -= (sys_->f(y, theta_) - lift_target) / d;
        }
        return std::clamp(y, l - 1e-9, r + 1e-9);
    }

    const FastSlowSystem* sys_;
    double theta_, f0_;
    std::vector<double> cuts_;
};

namespace detail {

inline void check_spec(const OperatorSpec& spec) {
    int s = spec.size;
    if (s < 32 || (s & (s - 1)) != 0)
        throw config_error("discretization size must be a power of two >= 32");
    if (spec.potential) {
        const cdouble p0 = spec.potential(0.0), p1 = spec.potential(1.0 - 1e-12);
        if (std::abs(p0 - p1) > 1e-10) throw config_error("potential is not periodic in x");
    }
}

// Periodic cardinal function for even N: ell_j(x_i) = delta_ij on the
// equispaced grid, trigonometric interpolation off it.
inline double cardinal(int N, double u) {
    const double t = std::tan(kPi * u);
    if (std::fabs(t) < 1e-14) return std::fabs(std::remainder(u, 1.0)) < 1e-13 ? 1.0 : 0.0;
    return std::sin(N * kPi * u) / (N * t);
}

}  // namespace detail

inline CMatrix build_operator(const FastSlowSystem& sys, const OperatorSpec& spec) {
    detail::check_spec(spec);
    const int N = spec.size;
    const double th = spec.theta;
    auto pot = [&](double y) -> cdouble { return spec.potential ? spec.potential(y) : 0.0; };
    BranchPartition part(sys, th);
    CMatrix L = CMatrix::Zero(N, N);
    if (spec.disc == Disc::Fourier) {
        for (int i = 0; i < N; ++i) {
            const double xi = static_cast<double>(i) / N;
            for (int b = 0; b < sys.degree; ++b) {
                const double y = part.inverse(b, xi);
                const cdouble w = std::exp(pot(y)) / sys.df_dx(y, th);
                for (int j = 0; j < N; ++j)
                    L(i, j) += w * detail::cardinal(N, y - static_cast<double>(j) / N);
            }
        }
    } else {
        // Ulam: columns push piecewise-constant densities forward; 64
        // subsamples per cell approximate the cell integrals.
        constexpr int S = 64;
        for (int j = 0; j < N; ++j) {
            for (int s = 0; s < S; ++s) {
                const double y = (j + (s + 0.5) / S) / N;
                const int i = static_cast<int>(mod1(sys.f(y, th)) * N) % N;
                L(i, j) += std::exp(pot(y)) / static_cast<double>(S);
            }
        }
    }
    return L;
}

namespace detail {

struct EigPair {
    cdouble lambda;
    CVector right, left;
    double gap;
};

// real-matrix fast path: Eigen's real Schur solver is several times cheaper
inline EigPair dominant_pair_dense_real(const Eigen::MatrixXd& L) {
    auto solve = [](const Eigen::MatrixXd& M) {
        Eigen::EigenSolver<Eigen::MatrixXd> es(M);
        if (es.info() != Eigen::Success)
            throw numeric_domain_error("eigensolver failed to converge");
        return std::make_pair(Eigen::VectorXcd(es.eigenvalues()),
                              Eigen::MatrixXcd(es.eigenvectors()));
    };
    auto [vals, vecs] = solve(L);
    int i1 = 0;
    for (int i = 1; i < vals.size(); ++i)
        if (std::abs(vals[i]) > std::abs(vals[i1])) i1 = i;
    double second = 0.0;
    for (int i = 0; i < vals.size(); ++i)
        if (i != i1) second = std::max(second, std::abs(vals[i]));
    EigPair p;
    p.lambda = vals[i1];
    p.right = vecs.col(i1);
    auto [tvals, tvecs] = solve(Eigen::MatrixXd(L.transpose()));
    int j1 = 0;
    for (int i = 1; i < tvals.size(); ++i)
        if (std::abs(tvals[i] - p.lambda) < std::abs(tvals[j1] - p.lambda)) j1 = i;
    p.left = tvecs.col(j1);
    p.gap = std::abs(p.lambda) > 0 ? second / std::abs(p.lambda) : 1.0;
    return p;
}

inline EigPair dominant_pair_dense(const CMatrix& L) {
    if (L.imag().cwiseAbs().maxCoeff() == 0.0) return dominant_pair_dense_real(L.real());
    Eigen::ComplexEigenSolver<CMatrix> es(L);
    if (es.info() != Eigen::Success) throw numeric_domain_error("eigensolver failed to converge");
    const auto& vals = es.eigenvalues();
    int i1 = 0;
    for (int i = 1; i < vals.size(); ++i)
        if (std::abs(vals[i]) > std::abs(vals[i1])) i1 = i;
    double second = 0.0;
    for (int i = 0; i < vals.size(); ++i)
        if (i != i1) second = std::max(second, std::abs(vals[i]));
    EigPair p;
    p.lambda = vals[i1];
    p.right = es.eigenvectors().col(i1);
    Eigen::ComplexEigenSolver<CMatrix> esT(CMatrix(L.transpose()));
    if (esT.info() != Eigen::Success) throw numeric_domain_error("eigensolver failed to converge");
    const auto& tvals = esT.eigenvalues();
    int j1 = 0;
    for (int i = 1; i < tvals.size(); ++i)
        if (std::abs(tvals[i] - p.lambda) < std::abs(tvals[j1] - p.lambda)) j1 = i;
    p.left = esT.eigenvectors().col(j1);
    p.gap = std::abs(p.lambda) > 0 ? second / std::abs(p.lambda) : 1.0;
    return p;
}

inline EigPair dominant_pair_power(const CMatrix& L) {
    const int N = static_cast<int>(L.rows());
    CounterRng rng(0x5eedu, 42);
    auto rand_vec = [&] {
        CVector v(N);
        for (int i = 0; i < N; ++i) v[i] = cdouble(rng.uniform(-1, 1), rng.uniform(-1, 1));
        return v;
    };
    auto power = [&](const CMatrix& M, CVector v) {
        cdouble lam = 1.0;
        v /= v.norm();
        for (int k = 0; k < 600; ++k) {
            CVector w = M * v;
            int imax = 0;
            for (int i = 1; i < N; ++i)
                if (std::abs(w[i]) > std::abs(w[imax])) imax = i;
            lam = std::abs(v[imax]) > 0 ? w[imax] / v[imax] : cdouble(1.0);
            v = w / w.norm();
        }
        return std::pair<cdouble, CVector>(lam, v);
    };
    EigPair p;
    auto [lam, v] = power(L, rand_vec());
    p.lambda = lam;
    p.right = v;
    auto [laml, vl] = power(CMatrix(L.transpose()), rand_vec());
    (void)laml;
    p.left = vl;
    // second modulus by power iteration on the complement of the dominant pair
    auto proj_inner = [&](const CVector& a, const CVector& b) {
        cdouble s = 0.0;
        for (int i = 0; i < N; ++i) s += a[i] * b[i];
        return s;
    };
    const cdouble mh = proj_inner(p.left, p.right);
    CVector u = rand_vec();
    u -= p.right * (proj_inner(p.left, u) / mh);
    u /= u.norm();
    double growth = 0.0;
    for (int k = 0; k < 300; ++k) {
        CVector w = L * u;
        w -= p.right * (proj_inner(p.left, w) / mh);
        growth = w.norm();
        if (growth <= 0.0) break;
        u = w / growth;
    }
    p.gap = std::abs(p.lambda) > 0 ? growth / std::abs(p.lambda) : 1.0;
    return p;
}

}  // namespace detail

inline EigenData leading_eigentriple(const FastSlowSystem& sys, const OperatorSpec& spec) {
    CMatrix L = build_operator(sys, spec);
    const int N = spec.size;
    detail::EigPair p = N <= 512 ? detail::dominant_pair_dense(L) : detail::dominant_pair_power(L);

    EigenData e;
    e.disc = spec.disc;
    e.lambda = p.lambda;
    e.chi = std::log(std::abs(p.lambda));
    e.gap = p.gap;
    e.near_degenerate = (1.0 - p.gap) < 1e-3;
    e.grid.resize(N);
    for (int i = 0; i < N; ++i) e.grid[i] = static_cast<double>(i) / N;

    CVector h = p.right;
    // fix phase: largest component real positive (sign fix in the real case)
    int imax = 0;
    for (int i = 1; i < N; ++i)
        if (std::abs(h[i]) > std::abs(h[imax])) imax = i;
    h *= std::abs(h[imax]) / h[imax];
    // density scale: Lebesgue integral 1 (equal weights are spectrally exact
    // on the periodic grid; exact cell averages for Ulam)
    const cdouble integral = h.sum() / static_cast<double>(N);
    if (std::abs(integral) < 1e-12)
        throw numeric_domain_error("leading eigenvector has vanishing mean");
    h /= integral;
    e.h = h;

    // left functional scaled so m(h) = 1, with m(g) = sum_i m_i g(x_i)
    CVector m = p.left;
    cdouble mh = 0.0;
    for (int i = 0; i < N; ++i) mh += m[i] * h[i];
    if (std::abs(mh) < 1e-12) throw spectral_gap_error("left/right eigenvectors near-orthogonal");
    m /= mh;
    e.m = m;
    return e;
}

// Averaged observables Abar(theta) = int A(x,theta) h_theta(x) dx using the
// zero-potential invariant density.
inline std::vector<double> averaged_observables(const FastSlowSystem& sys, double theta,
                                                Disc disc = Disc::Fourier, int size = 128) {
    OperatorSpec spec{theta, nullptr, disc, size};
    EigenData e = leading_eigentriple(sys, spec);
    const int N = size;
    std::vector<double> out(sys.observables.size(), 0.0);
    for (std::size_t a = 0; a < sys.observables.size(); ++a) {
        cdouble s = 0.0;
        for (int i = 0; i < N; ++i) s += sys.observables[a](e.grid[i], theta) * e.h[i];
        out[a] = s.real() / N;
    }
    return out;
}

// chi_hat(sigma, theta): log leading eigenvalue of the operator tilted by
// <sigma, A - Abar(theta)>.  Nonnegative and convex in sigma.
inline double chi_hat(const FastSlowSystem& sys, double theta, const std::vector<double>& sigma,
                      Disc disc = Disc::Fourier, int size = 128, double sigma_max = 5.0) {
    if (sigma.size() != sys.observables.size())
        throw interface_error("sigma dimension must match observable count");
    double norm = 0.0;
    for (double s : sigma) norm += s * s;
    if (std::sqrt(norm) > sigma_max) throw config_error("|sigma| exceeds sigma_max");
    auto abar = averaged_observables(sys, theta, disc, size);
    auto obs = sys.observables;
    auto pot = [obs, abar, sigma, theta](double x) -> cdouble {
        double p = 0.0;
        for (std::size_t i = 0; i < sigma.size(); ++i) p += sigma[i] * (obs[i](x, theta) - abar[i]);
        return p;
    };
    OperatorSpec spec{theta, pot, disc, size};
    return leading_eigentriple(sys, spec).chi;
}

struct ChiDerivatives {
    double fd1, formula1;  // first derivative: finite difference vs nu_sigma(A_hat)
    double fd2, formula2;  // second derivative: finite difference vs tilted Green-Kubo
};

// Self-consistency check of the eigenvalue-derivative identities at scalar
// sigma (d = 1): d chi/d sigma = nu(A_hat), d^2 chi/d sigma^2 = Green-Kubo
// sum under the tilted invariant measure.
inline ChiDerivatives chi_derivative_check(const FastSlowSystem& sys, double theta, double sigma,
                                           Disc disc = Disc::Fourier, int size = 128) {
    if (sys.observables.size() != 1)
        throw interface_error("chi_derivative_check requires a single observable");
    const double hstep = 1e-3;
    auto chi = [&](double s) { return chi_hat(sys, theta, {s}, disc, size, 25.0); };
    ChiDerivatives out;
    const double cp = chi(sigma + hstep), cm = chi(sigma - hstep), c0 = chi(sigma);
    out.fd1 = (cp - cm) / (2.0 * hstep);
    out.fd2 = (cp - 2.0 * c0 + cm) / (hstep * hstep);

    const auto abar = averaged_observables(sys, theta, disc, size);
    auto ahat = [&](double x) { return sys.observables[0](x, theta) - abar[0]; };
    std::function<cdouble(double)> pot;
    if (sigma != 0.0) pot = [&, sigma](double x) -> cdouble { return sigma * ahat(x); };
    OperatorSpec spec{theta, pot, disc, size};
    CMatrix L = build_operator(sys, spec);
    EigenData e = leading_eigentriple(sys, spec);
    const int N = size;

    // tilted invariant measure nu(g) = m(g h), with m(h) = 1
    auto nu_of = [&](const CVector& v) {
        cdouble s = 0.0;
        for (int i = 0; i < N; ++i) s += e.m[i] * v[i];
        return s.real();
    };
    CVector av(N);
    for (int i = 0; i < N; ++i) av[i] = ahat(e.grid[i]);
    out.formula1 = nu_of(av.cwiseProduct(e.h));

    // Green-Kubo under nu for the nu-centered observable: nu(O^2 h) +
    // 2 sum_k nu(O * Q^k(O h)) with Q the lambda-normalized tilted operator
    CVector ohat = av.array() - out.formula1;
    CVector v = ohat.cwiseProduct(e.h);
    double sum = nu_of(ohat.cwiseProduct(v));
    for (int k = 1; k <= 200; ++k) {
        v = (L * v) / e.lambda;
        const double term = nu_of(ohat.cwiseProduct(v));
        sum += 2.0 * term;
        if (std::fabs(term) < 1e-10) break;
        if (k == 200) throw spectral_gap_error("Green-Kubo correlations did not decay by m=200");
    }
    out.formula2 = sum;
    return out;
}

// Growth-rate estimate of ||L^n_{theta, i varsigma Omega}||_{1,varsigma}^{1/n}
// with the norm |g|_inf + |varsigma|^{-1} |g'|_inf, applied to 16 random
// analytic seeds; rescaled every step so overflow cannot occur.
inline double spectral_radius_complex(const FastSlowSystem& sys, double theta, double varsigma,
                                      int n, Disc disc = Disc::Fourier, int size = 128) {
    if (std::fabs(varsigma) < 1.0) throw config_error("|varsigma| must be >= 1");
    // the twisted transients last ~log|varsigma| steps; too-short scans only
    // see pseudospectral growth
    const int n_min = static_cast<int>(std::ceil(8.0 * std::log(std::fabs(varsigma))));
    if (n < std::max(1, n_min))
        throw config_error("iteration count must be >= ceil(8 ln|varsigma|)");
    const auto abar = averaged_observables(sys, theta, disc, size);
    const double abar0 = abar[0];
    auto pot = [&sys, theta, varsigma, abar0](double x) -> cdouble {
        return cdouble(0.0, varsigma * (sys.omega(x, theta) - abar0));
    };
    OperatorSpec spec{theta, pot, disc, size};
    CMatrix L = build_operator(sys, spec);
    const int N = size;

    // spectral differentiation matrix on the even periodic grid
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(N, N);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            if (i != j) {
                const double u = kPi * (i - j) / N;
                D(i, j) = 0.5 * N * (((i - j) % 2 == 0) ? 1.0 : -1.0) / std::tan(u);
            }
    auto norm1s = [&](const CVector& g) {
        const CVector dg = D * g;
        double a = 0.0, b = 0.0;
        for (int i = 0; i < N; ++i) {
            a = std::max(a, std::abs(g[i]));
            b = std::max(b, std::abs(dg[i]));
        }
        return a + b / std::fabs(varsigma);
    };

    CounterRng rng(0xd0160u, static_cast<std::uint64_t>(std::fabs(varsigma) * 1e3));
    double best = 0.0;
    for (int seed = 0; seed < 16; ++seed) {
        CVector g = CVector::Zero(N);  // random low-order trigonometric polynomial
        for (int mode = -4; mode <= 4; ++mode) {
            const cdouble c(rng.uniform(-1, 1), rng.uniform(-1, 1));
            for (int i = 0; i < N; ++i)
                g[i] += c * std::exp(cdouble(0.0, kTwoPi * mode * i / static_cast<double>(N)));
        }
        g /= norm1s(g);
        // discard the first half as burn-in: the early iterates mix transient
        // pseudospectral growth with the asymptotic rate, and single-step
        // ratios oscillate when eigenvalue moduli cluster
        const int burn = n / 2;
        double logsum = 0.0;
        for (int k = 0; k < n; ++k) {
            g = L * g;
            const double nn = norm1s(g);
            if (!(nn > 0.0) || !std::isfinite(nn))
                throw numeric_domain_error("norm degenerate in spectral radius scan");
            if (k >= burn) logsum += std::log(nn);
            g /= nn;
        }
        best = std::max(best, std::exp(logsum / (n - burn)));
    }
    return best;
}

// Uniform non-integrability estimate: max over pairs of inverse-branch words
// of length n of the inf over an x-grid of the derivative separation
// |d/dx (Omega_n o h) - d/dx (Omega_n o kappa)|.
inline double uni_estimate(const FastSlowSystem& sys, double theta, int n, int grid = 2048) {
    if (n < 1 || n > 12) throw config_error("uni_estimate requires 1 <= n <= 12");
    BranchPartition part(sys, theta);
    const int deg = sys.degree;

    struct Node {
        std::vector<double> y, P, S;  // deepest preimage, (f^depth)'(y), derivative sum
    };
    std::vector<Node> level(1);
    level[0].y.resize(grid);
    level[0].P.assign(grid, 1.0);
    level[0].S.assign(grid, 0.0);
    for (int i = 0; i < grid; ++i) level[0].y[i] = (i + 0.5) / grid;

    // grow the inverse-branch tree: prepending branch c at the deep end maps
    // (y, P, S) to (h_c(y), f'(h_c(y)) P, S + Omega'(h_c(y)) / P')
    for (int depth = 0; depth < n; ++depth) {
        std::vector<Node> next;
        next.reserve(level.size() * deg);
        for (const Node& nd : level) {
            for (int c = 0; c < deg; ++c) {
                Node child;
                child.y.resize(grid);
                child.P.resize(grid);
                child.S.resize(grid);
                for (int i = 0; i < grid; ++i) {
                    const double yp = part.inverse(c, nd.y[i]);
                    const double Pp = sys.df_dx(yp, theta) * nd.P[i];
                    child.y[i] = yp;
                    child.P[i] = Pp;
                    child.S[i] = nd.S[i] + sys.domega_dx(yp, theta) / Pp;
                }
                next.push_back(std::move(child));
            }
        }
        level = std::move(next);
    }

    double best = 0.0;
    for (std::size_t a = 0; a < level.size(); ++a) {
        for (std::size_t b = a + 1; b < level.size(); ++b) {
            double inf = 1e300;
            for (int i = 0; i < grid; ++i) {
                inf = std::min(inf, std::fabs(level[a].S[i] - level[b].S[i]));
                if (inf <= best) break;  // pair cannot improve the running max
            }
            best = std::max(best, inf);
        }
    }
    return best;
}

}  // namespace fastslow
