#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fastslow/system.hpp"

using namespace fastslow;

TEST_CASE("presets certify as uniformly expanding") {
    for (const char* name : {"doubling-cos", "perturbed-doubling", "coboundary-control"}) {
        auto sys = make_preset(name, 1e-3);
        CHECK(sys.lambda_min > 1.0);
        CHECK(sys.degree == 2);
        CHECK(sys.observables.size() >= 1);
    }
    CHECK(make_preset("doubling-cos", 0.0).lambda_min == doctest::Approx(2.0));
    CHECK_THROWS_AS(make_preset("no-such-preset", 0.0), config_error);
}

TEST_CASE("step oracles") {
    auto sys = make_doubling_cos(1e-2);
    TrajectoryState s;
    s.x = 0.25;
    s.z = {0.0};
    TrajectoryState t = step(sys, s);
    CHECK(t.x == doctest::Approx(0.5));
    CHECK(t.z[0] == doctest::Approx(0.0 + 1e-2 * (std::cos(kTwoPi * 0.25) + 0.0)));

    s.x = 0.0;
    s.z = {0.25};
    t = step(sys, s);
    // omega(0, 0.25) = 1 + 0.5 = 1.5
    CHECK(t.z[0] == doctest::Approx(0.265));
}

TEST_CASE("simulate stays on the torus in x and lifts theta") {
    auto sys = make_perturbed_doubling(1e-3);
    TrajectoryState s0;
    s0.x = 0.123;
    s0.z = {0.9};
    auto traj = simulate(sys, s0, 500);
    REQUIRE(traj.size() == 501);
    for (const auto& st : traj) {
        CHECK(st.x >= 0.0);
        CHECK(st.x < 1.0);
    }
    // theta drift bounded by eps * sup|omega| per step
    for (std::size_t k = 1; k < traj.size(); ++k)
        CHECK(std::fabs(traj[k].z[0] - traj[k - 1].z[0]) <= sys.eps * (sys.sup_omega + 1e-12));
}

TEST_CASE("expression systems match hand-built presets") {
    auto a = make_doubling_cos(1e-3);
    auto b = make_from_expressions("2*x", "cos(2*pi*x)+0.5*sin(2*pi*theta)", {}, 1e-3);
    for (double x : {0.1, 0.37, 0.9})
        for (double th : {0.0, 0.42}) {
            CHECK(a.f(x, th) == doctest::Approx(b.f(x, th)));
            CHECK(a.omega(x, th) == doctest::Approx(b.omega(x, th)));
            CHECK(a.df_dx(x, th) == doctest::Approx(b.df_dx(x, th)));
            CHECK(a.domega_dtheta(x, th) == doctest::Approx(b.domega_dtheta(x, th)));
        }
}

TEST_CASE("non-expanding or non-periodic maps are rejected") {
    CHECK_THROWS_AS(make_from_expressions("x/2", "cos(2*pi*x)", {}, 1e-3), config_error);
    CHECK_THROWS_AS(make_from_expressions("2*x", "x", {}, 1e-3), config_error);
}

TEST_CASE("slope recursion stays inside the invariant cone") {
    for (const char* name : {"doubling-cos", "perturbed-doubling"}) {
        auto sys = make_preset(name, 1e-3);
        TrajectoryState s0{0.3, {0.7}};
        auto traj = simulate(sys, s0, 200);
        auto rep = slope_recursion(sys, traj);
        CHECK(rep.cone_ok);
        for (double u : rep.u) CHECK(std::fabs(u) <= rep.cone_bound + 1e-12);
    }
}

TEST_CASE("shadow reconstruction: residual and theta error") {
    auto sys = make_doubling_cos(1e-4);
    auto rep = shadow_reconstruct(sys, 0.377, 0.51, 30, 0.5);
    CHECK(rep.residual <= 1e-10);
    // theta error carries the initial offset plus an O(n eps) drift correction
    CHECK(rep.theta_error_max <= 0.01 + 30 * 1e-4 * 1.5 + 1e-6);
}

TEST_CASE("shadowing precondition violations throw") {
    auto sys = make_doubling_cos(1e-2);
    CHECK_THROWS_AS(shadow_reconstruct(sys, 0.1, 0.9, 30, 0.5), config_error);   // |th0-th*| > 0.1
    CHECK_THROWS_AS(shadow_reconstruct(sys, 0.1, 0.5, 20000, 0.5), config_error);  // eps n^2 > 1
}

TEST_CASE("shadow error constant stable under eps halving") {
    const long n = 30;
    double prev = 0.0;
    for (double eps : {2e-4, 1e-4}) {
        auto sys = make_doubling_cos(eps);
        auto rep = shadow_averaged(sys, 0.71, 0.5, n, [](double) { return 0.5; });
        CHECK(rep.residual <= 1e-10);
        if (prev > 0.0) {
            CHECK(rep.eta_bound_const <= prev * 1.3 + 1e-14);
            CHECK(rep.eta_bound_const >= prev * 0.7 - 1e-14);
        }
        prev = rep.eta_bound_const;
    }
}
