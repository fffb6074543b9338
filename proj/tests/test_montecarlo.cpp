#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fastslow/montecarlo.hpp"

using namespace fastslow;

TEST_CASE("initial density sampling") {
    auto uni = InitialDensity::uniform();
    CHECK(uni.sample(0.37) == doctest::Approx(0.37));
    // rho(x) = 2x has CDF x^2, so the inverse map is sqrt
    auto tri = InitialDensity::from([](double x) { return 2.0 * x; });
    for (double u : {0.04, 0.25, 0.81})
        CHECK(tri.sample(u) == doctest::Approx(std::sqrt(u)).epsilon(1e-3));
    CHECK_THROWS_AS(InitialDensity::from([](double x) { return x - 0.5; }), config_error);
    CHECK_THROWS_AS(InitialDensity::from([](double) { return 0.0; }), config_error);
    auto a = sample_initial(tri, 100, 5);
    auto b = sample_initial(tri, 100, 5);
    CHECK(a == b);
    auto c = sample_initial(tri, 100, 6);
    CHECK(a != c);
}

TEST_CASE("jitter keeps the doubling chain unbiased and off spurious fixed points") {
    auto sys = make_doubling_cos(1e-3);
    CounterRng rng(123, 0);
    double x = 0.377, mean = 0.0;
    const long n = 200000;
    for (long k = 0; k < n; ++k) {
        mean += std::cos(kTwoPi * x);
        x = detail::jitter_step(sys, x, 0.0, rng);
    }
    mean /= n;
    CHECK(std::fabs(mean) <= 0.01);  // E[cos(2 pi x)] = 0 under Lebesgue
    CHECK(x != 0.0);                 // without jitter the orbit hits 0 after ~53 steps
}

TEST_CASE("ensemble paths: grid, determinism across thread counts, budget") {
    auto sys = make_doubling_cos(1e-3);
    auto e1 = ensemble_paths(sys, 0.25, InitialDensity::uniform(), 1.0, 50, 9, 0.05, 1);
    auto e3 = ensemble_paths(sys, 0.25, InitialDensity::uniform(), 1.0, 50, 9, 0.05, 3);
    CHECK(e1.t_grid.front() == 0.0);
    CHECK(e1.t_grid.back() == doctest::Approx(1.0));
    for (long p = 0; p < 50; ++p) {
        CHECK(e1.theta[p][0] == 0.25);
        for (std::size_t g = 0; g < e1.t_grid.size(); ++g)
            CHECK(e1.theta[p][g] == e3.theta[p][g]);  // bit-identical
    }
    FastSlowSystem tiny = sys;
    tiny.eps = 1e-6;
    CHECK_THROWS_AS(ensemble_paths(tiny, 0.25, InitialDensity::uniform(), 2.0, 1000, 9, 0.05),
                    resource_error);
    tiny.eps = 0.0;
    CHECK_THROWS_AS(ensemble_paths(tiny, 0.25, InitialDensity::uniform(), 1.0, 10, 9, 0.05),
                    config_error);
}

TEST_CASE("averaging error quantiles are ordered and O(sqrt(eps))-sized") {
    auto sys = make_doubling_cos(1e-3);
    ThetaTable table(sys, 256);
    auto ens = ensemble_paths(sys, 0.25, InitialDensity::uniform(), 1.0, 200, 11, 0.05);
    auto ap = solve_averaged(table, 0.25, 1.0, 1e-3);
    auto ae = averaging_error(ens, ap);
    CHECK(ae.per_path_sup.size() == 200);
    CHECK(ae.q50 <= ae.q90);
    CHECK(ae.q90 <= ae.q99);
    CHECK(ae.q50 > 1e-4);
    CHECK(ae.q99 < 0.2);
    auto short_ap = solve_averaged(table, 0.25, 0.5, 1e-3);
    CHECK_THROWS_AS(averaging_error(ens, short_ap), interface_error);
}

TEST_CASE("linearized deviation process tracks theta - theta_bar") {
    auto sys = make_doubling_cos(1e-3);
    ThetaTable table(sys, 256);
    auto er = etaref_process(sys, 0.25, InitialDensity::uniform(), 0.5, 200, 11, table);
    CHECK(er.H.size() == 200);
    // the discrete variation-of-constants solution stays within the quadratic
    // remainder of the true deviation (both are ~3e-2 here)
    CHECK(er.max_diff <= 3e-3);
    double hsup = 0.0;
    for (double h : er.H) hsup = std::max(hsup, std::fabs(h));
    CHECK(hsup > 1e-3);
}

TEST_CASE("local-limit smoke test at moderate eps") {
    auto sys = make_doubling_cos(1e-3);
    const double var1 = 0.079429127434822902;
    auto rep = llt_check(sys, 0.5, 1.0, 0.0, 40, 20000, 3, var1, 0.5);
    CHECK(rep.ks <= 0.05);
    CHECK(rep.variance_ratio == doctest::Approx(1.0).epsilon(0.1));
    CHECK(std::fabs(rep.sample_mean) <= 0.05);
    CHECK_FALSE(rep.insufficient_window);
    CHECK(rep.window_density == doctest::Approx(rep.window_predicted).epsilon(0.15));
    CHECK(rep.bin_centers.size() == 40);
}

TEST_CASE("moderate-deviation probe: validation and internal consistency") {
    auto sys = make_doubling_cos(1e-2);
    ThetaTable table(sys, 64);
    Sigma2Table sigma2(sys, 32);
    CHECK_THROWS_AS(moderate_probe(sys, 0.1, 1.0, 0.2, {1e-2}, 0.2, 100, 1, table, sigma2),
                    config_error);
    CHECK_THROWS_AS(moderate_probe(sys, 0.1, 1.0, 0.5, {1e-2}, 0.2, 100, 1, table, sigma2),
                    config_error);
    CHECK_THROWS_AS(
        moderate_probe(sys, 0.1, 1.0, 0.4, {1e-2}, 0.2, 100, 1, table, sigma2, 1, 1),
        config_error);
    auto tab = moderate_probe(sys, 0.1, 1.0, 0.4, {1e-2}, 0.2, 2000, 1, table, sigma2);
    REQUIRE(tab.rows.size() == 1);
    const auto& r = tab.rows[0];
    CHECK(r.p_hat == doctest::Approx(static_cast<double>(r.hits) / 2000.0));
    CHECK(r.wilson_lo <= r.p_hat + 1e-12);
    CHECK(r.wilson_hi >= r.p_hat - 1e-12);
    CHECK(r.wilson_hi <= 1.0);
    CHECK(r.wilson_lo >= 0.0);
    CHECK(tab.target == doctest::Approx(0.2 / (2.0 * sigma2.eval(0.1))));
    if (!r.zero_hits) CHECK(r.scaled_log_p == doctest::Approx(-std::pow(1e-2, 0.2) * std::log(r.p_hat)));
}

TEST_CASE("MGF probe: validation and reproducibility") {
    auto sys = make_doubling_cos(1e-3);
    CHECK_THROWS_AS(mgf_probe(sys, 0.5, 0.3, 0.2, 100, 1, 0.0), config_error);
    CHECK_THROWS_AS(mgf_probe(sys, 0.5, 0.1, 0.2, 100, 1, 0.0, 1, 5), interface_error);
    auto p1 = mgf_probe(sys, 0.5, 0.1, 0.2, 2000, 4, 0.0);
    auto p2 = mgf_probe(sys, 0.5, 0.1, 0.2, 2000, 4, 0.0, 2);
    CHECK(p1.empirical == p2.empirical);
    CHECK(p1.ess > 100.0);
    CHECK_FALSE(p1.flagged);
    // one-step sanity: the scaled exponent is small and positive-ish at T=0.2
    CHECK(std::fabs(p1.empirical) < 0.01);
}
