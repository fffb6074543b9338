#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fastslow/ldp.hpp"

using namespace fastslow;

TEST_CASE("tilt solver oracles at theta = 0.5") {
    auto sys = make_doubling_cos(1e-3);
    ChiSolver cs(sys, 0.5);
    CHECK(cs.abar() == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(cs.sigma2() == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(cs.chi(0.0) == 0.0);
    CHECK(cs.chi(0.05) == doctest::Approx(0.0006409167).epsilon(1e-4));
    CHECK(cs.chi(0.1) == doctest::Approx(0.0026296338).epsilon(1e-5));
    CHECK_THROWS_AS(ChiSolver(sys, 0.5, Disc::Fourier, 128, 1), interface_error);
}

TEST_CASE("stationary tilt for b = 0.05") {
    auto sys = make_doubling_cos(1e-3);
    ChiSolver cs(sys, 0.5);
    auto r = stationary_sigma(cs, 0.05);
    CHECK(r.in_domain);
    CHECK(r.converged);
    CHECK(r.residual <= 1e-8);
    // quadratic seed would give 0.1; the genuine cubic response shifts it
    CHECK(r.sigma == doctest::Approx(0.09318762).epsilon(1e-4));
}

TEST_CASE("rate function: nonnegative, zero at the mean, convex") {
    auto sys = make_doubling_cos(1e-3);
    ChiSolver cs(sys, 0.5);
    CHECK(std::fabs(rate_Z(cs, cs.abar())) <= 1e-10);
    std::vector<double> bs = {-0.3, -0.15, 0.0, 0.15, 0.3, 0.45, 0.6};
    std::vector<double> zs;
    for (double b : bs) {
        const double z = rate_Z(cs, b);
        CHECK(std::isfinite(z));
        CHECK(z >= -1e-12);
        zs.push_back(z);
    }
    for (std::size_t k = 1; k + 1 < zs.size(); ++k)
        CHECK(zs[k] <= 0.5 * (zs[k - 1] + zs[k + 1]) + 1e-8);
}

TEST_CASE("Legendre duality: tangency at the stationary tilt") {
    auto sys = make_doubling_cos(1e-3);
    ChiSolver cs(sys, 0.5);
    for (double sigma : {0.3, 1.0}) {
        const double b = cs.abar() + cs.dchi(sigma);
        const double z = rate_Z(cs, b);
        CHECK(z == doctest::Approx(sigma * (b - cs.abar()) - cs.chi(sigma)).epsilon(1e-5));
    }
}

TEST_CASE("periodic-orbit domain estimate for the doubling map") {
    auto sys = make_doubling_cos(1e-3);
    auto dom = domain_estimate(sys, 0.0, 3);
    // distinct orbits up to period 3: fixed point 0, the 2-cycle {1/3,2/3},
    // and the two 3-cycles on sevenths
    CHECK(dom.orbit_averages.size() == 4);
    CHECK(dom.hull_hi == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(dom.hull_lo == doctest::Approx(-0.5).epsilon(1e-9));
    CHECK_THROWS_AS(domain_estimate(sys, 0.0, 0), config_error);
    CHECK_THROWS_AS(domain_estimate(sys, 0.0, 13), config_error);
}

TEST_CASE("collar regularization near the domain boundary") {
    auto sys = make_doubling_cos(1e-3);
    ChiSolver cs(sys, 0.5);
    auto dom = domain_estimate(sys, 0.5, 3);
    auto reg = rate_Z_reg(cs, dom, 0.95, 0.1, 40.0);
    CHECK(std::isinf(reg.z_plus));
    CHECK(reg.retracted_b <= 0.9 + 1e-6);
    CHECK(reg.retracted_b >= 0.9 - 1e-4);
    CHECK(std::isfinite(reg.z_minus));
    CHECK(reg.z_minus > 0.0);
    // interior points are untouched
    auto mid = rate_Z_reg(cs, dom, 0.2, 0.1, 40.0);
    CHECK(mid.z_plus == doctest::Approx(mid.z_minus));
    CHECK(mid.retracted_b == doctest::Approx(0.2));
    CHECK_THROWS_AS(rate_Z_reg(cs, dom, 0.2, 0.6), config_error);
}

TEST_CASE("path functional agrees with its quadratic expansion for small slopes") {
    auto sys = make_doubling_cos(1e-3);
    ThetaTable table(sys, 64);
    Sigma2Table sigma2(sys, 32);
    auto avg = solve_averaged(table, 0.5, 1.0, 1e-3);
    PathSpec g;
    g.t = {0.0, 1.0};
    g.v = {0.0, 0.1};
    const double pr = path_rate(sys, g, 0.5, avg, 0.05);
    const double rq = rate_quadratic(sys, g, 0.5, avg, table, sigma2, 0.05);
    CHECK(rq == doctest::Approx(0.01).epsilon(1e-3));  // slope^2 / (2 * 0.5)
    CHECK(pr == doctest::Approx(rq).epsilon(0.1));
    const double pr_mov = path_rate(sys, g, 0.5, avg, 0.05, PathRateMode::Moving);
    CHECK(pr_mov == doctest::Approx(pr).epsilon(0.2));
}

TEST_CASE("path validation") {
    auto sys = make_doubling_cos(1e-3);
    ThetaTable table(sys, 64);
    auto avg = solve_averaged(table, 0.5, 1.0, 1e-3);
    PathSpec steep{{0.0, 1.0}, {0.0, 5.0}};  // slope above 2 sup|omega|
    CHECK_THROWS_AS(path_rate(sys, steep, 0.5, avg, 0.05), config_error);
    PathSpec offset{{0.0, 1.0}, {0.1, 0.2}};
    CHECK_THROWS_AS(path_rate(sys, offset, 0.5, avg, 0.05), config_error);
    PathSpec nonmono{{0.0, 1.0, 0.5}, {0.0, 0.1, 0.2}};
    CHECK_THROWS_AS(path_rate(sys, nonmono, 0.5, avg, 0.05), config_error);
}

TEST_CASE("normalized MGF exponent at the frozen equilibrium") {
    // at theta0 = 0.5 the averaged flow is constant, so the integral is just
    // T * chi(sigma); frozen value for sigma = 0.1, T = 0.5
    auto sys = make_doubling_cos(1e-3);
    ThetaTable table(sys, 64);
    auto avg = solve_averaged(table, 0.5, 0.5, 1e-3);
    const double pred = mgf_predict(sys, [](double) { return 0.1; }, 0.5, 0.5, avg);
    CHECK(pred == doctest::Approx(0.001314816903828853).epsilon(1e-6));
    ChiSolver cs(sys, 0.5);
    CHECK(pred == doctest::Approx(0.5 * cs.chi(0.1)).epsilon(1e-6));
}
