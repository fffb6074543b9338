#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "fastslow/transfer.hpp"

using namespace fastslow;

TEST_CASE("zero potential: eigenvalue 1, flat density, Lebesgue left functional") {
    auto sys = make_doubling_cos(1e-3);
    OperatorSpec spec;
    spec.theta = 0.5;
    auto e = leading_eigentriple(sys, spec);
    CHECK(std::abs(e.lambda - 1.0) <= 1e-10);
    CHECK(std::fabs(e.chi) <= 1e-10);
    CHECK(e.gap < 0.5);
    CHECK_FALSE(e.near_degenerate);
    for (int i = 0; i < spec.size; ++i) CHECK(std::abs(e.h[i] - 1.0) <= 1e-8);
    // with zero potential L preserves the integral, so m is Lebesgue
    cdouble msum = 0.0;
    for (int i = 0; i < spec.size; ++i) msum += e.m[i];
    CHECK(std::abs(msum - 1.0) <= 1e-8);
}

TEST_CASE("zero potential for the perturbed map: eigenvalue 1, positive density") {
    auto sys = make_perturbed_doubling(1e-3);
    OperatorSpec spec;
    spec.theta = 0.2;
    auto e = leading_eigentriple(sys, spec);
    CHECK(std::abs(e.lambda - 1.0) <= 1e-9);
    double hmin = 1e300;
    for (int i = 0; i < spec.size; ++i) hmin = std::min(hmin, e.h[i].real());
    CHECK(hmin > 0.1);
}

TEST_CASE("operator spec validation") {
    auto sys = make_doubling_cos(1e-3);
    OperatorSpec bad;
    bad.size = 100;
    CHECK_THROWS_AS(build_operator(sys, bad), config_error);
    bad.size = 16;
    CHECK_THROWS_AS(build_operator(sys, bad), config_error);
    OperatorSpec aper;
    aper.potential = [](double x) -> cdouble { return x; };
    CHECK_THROWS_AS(build_operator(sys, aper), config_error);
}

TEST_CASE("small cosine potential: chi matches the quadratic response") {
    // Green-Kubo variance of cos(2 pi x) under doubling is exactly 1/2, so
    // chi(sigma) = sigma^2/4 + O(sigma^3) for the centered tilt.
    auto sys = make_doubling_cos(1e-3);
    const double sigma = 0.1;
    OperatorSpec spec;
    spec.theta = 0.5;
    spec.potential = [sigma](double x) -> cdouble { return sigma * std::cos(kTwoPi * x); };
    auto e = leading_eigentriple(sys, spec);
    CHECK(std::fabs(e.chi - sigma * sigma / 4.0) <= 3e-4);
}

TEST_CASE("chi_hat oracle and tilt bounds") {
    auto sys = make_doubling_cos(1e-3);
    CHECK(chi_hat(sys, 0.5, {0.1}) == doctest::Approx(0.0026296338).epsilon(1e-5));
    CHECK(chi_hat(sys, 0.5, {0.0}) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(chi_hat(sys, 0.5, {0.05}) > 0.0);  // nonnegative, zero only at sigma = 0
    CHECK_THROWS_AS(chi_hat(sys, 0.5, {6.0}), config_error);
    CHECK_THROWS_AS(chi_hat(sys, 0.5, {0.1, 0.2}), interface_error);
}

TEST_CASE("Fourier and Ulam discretizations agree on chi") {
    auto sys = make_perturbed_doubling(1e-3);
    const double cf = chi_hat(sys, 0.3, {0.3}, Disc::Fourier, 128);
    const double cu = chi_hat(sys, 0.3, {0.3}, Disc::Ulam, 512);
    CHECK(std::fabs(cf - cu) <= 1e-3);
}

TEST_CASE("averaged omega for the doubling preset is 0.5 sin(2 pi theta)") {
    auto sys = make_doubling_cos(1e-3);
    for (double th : {0.0, 0.2, 0.55, 0.9}) {
        auto abar = averaged_observables(sys, th);
        CHECK(abar[0] == doctest::Approx(0.5 * std::sin(kTwoPi * th)).epsilon(1e-10));
    }
}

TEST_CASE("eigenvalue-derivative identities hold at zero and tilted points") {
    auto sys = make_doubling_cos(1e-3);
    for (double sigma : {0.0, 0.4}) {
        auto d = chi_derivative_check(sys, 0.5, sigma);
        CHECK(d.fd1 == doctest::Approx(d.formula1).epsilon(1e-4));
        CHECK(d.fd2 == doctest::Approx(d.formula2).epsilon(1e-3));
    }
}

TEST_CASE("coboundary twist keeps a modulus-one eigenvalue") {
    // omega = g o f - g makes e^{i varsigma omega} a conjugation of the
    // untilted operator, so the leading modulus stays exactly 1.
    auto sys = make_coboundary_control(1e-3);
    const double varsigma = 7.0;
    OperatorSpec spec;
    spec.theta = 0.25;
    spec.potential = [&sys, varsigma](double x) -> cdouble {
        return cdouble(0.0, varsigma * sys.omega(x, 0.25));
    };
    auto e = leading_eigentriple(sys, spec);
    CHECK(std::abs(e.lambda) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("twisted norm growth: contraction for the generic preset, none for the control") {
    auto gen = make_doubling_cos(1e-3);
    const double r_gen = spectral_radius_complex(gen, 0.3, 8.0, 40);
    CHECK(r_gen > 0.5);
    CHECK(r_gen < 0.95);
    auto ctrl = make_coboundary_control(1e-3);
    const double r_ctrl = spectral_radius_complex(ctrl, 0.3, 7.0, 40);
    CHECK(r_ctrl >= 0.999);
    CHECK(r_ctrl <= 1.001);
}

TEST_CASE("twisted scan preconditions") {
    auto sys = make_doubling_cos(1e-3);
    CHECK_THROWS_AS(spectral_radius_complex(sys, 0.3, 0.5, 40), config_error);
    CHECK_THROWS_AS(spectral_radius_complex(sys, 0.3, 100.0, 10), config_error);
}

TEST_CASE("derivative-separation estimate: positive generically, tiny for the control") {
    auto gen = make_doubling_cos(1e-3);
    const double u_gen = uni_estimate(gen, 0.3, 3, 256);
    CHECK(u_gen > 0.1);
    auto ctrl = make_coboundary_control(1e-3);
    const double u_ctrl = uni_estimate(ctrl, 0.3, 3, 256);
    CHECK(u_ctrl < u_gen * 0.1);
    CHECK_THROWS_AS(uni_estimate(gen, 0.3, 0), config_error);
    CHECK_THROWS_AS(uni_estimate(gen, 0.3, 13), config_error);
}

TEST_CASE("branch partition inverts the map") {
    auto sys = make_perturbed_doubling(1e-3);
    BranchPartition part(sys, 0.4);
    for (int b = 0; b < sys.degree; ++b)
        for (double x : {0.05, 0.33, 0.77, 0.98}) {
            const double y = part.inverse(b, x);
            CHECK(mod1(sys.f(y, 0.4)) == doctest::Approx(x).epsilon(1e-10));
        }
    CHECK_THROWS_AS(part.inverse(-1, 0.3), interface_error);
    CHECK_THROWS_AS(part.inverse(2, 0.3), interface_error);
}
