#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "fastslow/io.hpp"
#include "fastslow/ldp.hpp"
#include "fastslow/montecarlo.hpp"
#include "fastslow/standard_pairs.hpp"
#include "fastslow/statistics.hpp"
#include "fastslow/system.hpp"
#include "fastslow/transfer.hpp"

namespace fastslow {

inline constexpr const char* kToolVersion = "1.0.0";

struct RunConfig {
    std::string command;
    Json config;          // full config object (system + params)
    std::string out_dir;
    std::uint64_t seed = 0;
    int threads = 1;
};

namespace detail {

inline void check_keys(const Json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
    if (!j.is_object()) throw config_error(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& a : allowed) ok = ok || it.key() == a;
        if (!ok) throw config_error("unknown key \"" + it.key() + "\" in " + where);
    }
}

inline double get_num(const Json& j, const std::string& key, double def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_number()) throw config_error("key \"" + key + "\" must be a number");
    return j[key].get<double>();
}

inline double need_num(const Json& j, const std::string& key) {
    if (!j.contains(key)) throw config_error("missing required key \"" + key + "\"");
    if (!j[key].is_number()) throw config_error("key \"" + key + "\" must be a number");
    return j[key].get<double>();
}

inline long get_int(const Json& j, const std::string& key, long def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_number_integer()) throw config_error("key \"" + key + "\" must be an integer");
    return j[key].get<long>();
}

inline std::string get_str(const Json& j, const std::string& key, const std::string& def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_string()) throw config_error("key \"" + key + "\" must be a string");
    return j[key].get<std::string>();
}

inline Disc parse_disc(const std::string& s) {
    if (s == "fourier") return Disc::Fourier;
    if (s == "ulam") return Disc::Ulam;
    throw config_error("discretization must be \"fourier\" or \"ulam\"");
}

inline FastSlowSystem system_from_config(const Json& cfg) {
    if (!cfg.contains("system")) throw config_error("missing \"system\" object");
    const Json& s = cfg["system"];
    check_keys(s, {"preset", "f", "omega", "observables", "eps"}, "system");
    const double eps = get_num(s, "eps", 0.0);
    if (s.contains("preset")) {
        if (s.contains("f") || s.contains("omega"))
            throw config_error("give either \"preset\" or expressions, not both");
        return make_preset(s["preset"].get<std::string>(), eps);
    }
    if (!s.contains("f") || !s.contains("omega"))
        throw config_error("custom system needs \"f\" and \"omega\" expressions");
    std::vector<std::string> extra;
    if (s.contains("observables"))
        for (const auto& o : s["observables"]) extra.push_back(o.get<std::string>());
    return make_from_expressions(s["f"].get<std::string>(), s["omega"].get<std::string>(), extra,
                                 eps);
}

inline const Json& params_of(const Json& cfg) {
    static const Json empty = Json::object();
    check_keys(cfg, {"system", "params"}, "config");
    return cfg.contains("params") ? cfg["params"] : empty;
}

// potential expression over (x, theta), evaluated at a fixed theta
inline std::function<cdouble(double)> potential_from(const Json& p, double theta) {
    if (!p.contains("potential")) return nullptr;
    expr::NodePtr node = expr::parse_expression(p["potential"].get<std::string>());
    return [node, theta](double x) -> cdouble { return expr::eval(*node, x, theta); };
}

}  // namespace detail

// Each subcommand returns the CSV text plus manifest extras; run() owns the
// writing so outputs stay byte-identical across reruns of the same manifest.
struct CommandResult {
    CsvWriter csv;
    Json extras = Json::object();
};

inline CommandResult run_simulate(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta0", "x0", "n_steps"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta0 = detail::need_num(p, "theta0");
    const double x0 = detail::get_num(p, "x0", 0.0);
    const long n = detail::get_int(p, "n_steps", 1000);
    if (n < 1 || n > 100000000L) throw resource_error("n_steps outside [1, 1e8]");
    TrajectoryState s0;
    s0.x = x0;
    s0.z.assign(sys.observables.size(), 0.0);
    s0.z[0] = theta0;
    auto traj = simulate(sys, s0, n);
    CommandResult res{CsvWriter({"k", "x", "theta"})};
    for (long k = 0; k < static_cast<long>(traj.size()); ++k)
        res.csv.row({k, traj[k].x, traj[k].z[0]});
    return res;
}

inline CommandResult run_spectrum(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta", "size", "disc", "potential"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta = detail::need_num(p, "theta");
    OperatorSpec spec;
    spec.theta = theta;
    spec.size = static_cast<int>(detail::get_int(p, "size", 128));
    spec.disc = detail::parse_disc(detail::get_str(p, "disc", "fourier"));
    spec.potential = detail::potential_from(p, theta);
    EigenData e = leading_eigentriple(sys, spec);
    CommandResult res{CsvWriter({"j", "x", "h_re", "h_im", "m_re", "m_im"})};
    for (long j = 0; j < static_cast<long>(e.grid.size()); ++j)
        res.csv.row({j, e.grid[j], e.h[j].real(), e.h[j].imag(), e.m[j].real(), e.m[j].imag()});
    res.extras["lambda_re"] = e.lambda.real();
    res.extras["lambda_im"] = e.lambda.imag();
    res.extras["chi"] = e.chi;
    res.extras["gap"] = e.gap;
    res.extras["near_degenerate"] = e.near_degenerate;
    return res;
}

inline CommandResult run_average(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"n_theta", "size", "disc"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const long nt = detail::get_int(p, "n_theta", 64);
    if (nt < 1 || nt > 100000) throw config_error("n_theta outside [1, 1e5]");
    const int size = static_cast<int>(detail::get_int(p, "size", 128));
    const Disc disc = detail::parse_disc(detail::get_str(p, "disc", "fourier"));
    std::vector<std::string> header{"theta"};
    for (std::size_t a = 0; a < sys.observables.size(); ++a)
        header.push_back("abar_" + std::to_string(a));
    CommandResult res{CsvWriter(header)};
    for (long j = 0; j < nt; ++j) {
        const double th = static_cast<double>(j) / nt;
        auto abar = averaged_observables(sys, th, disc, size);
        std::vector<CsvField> row{th};
        for (double v : abar) row.push_back(v);
        res.csv.row(row);
    }
    return res;
}

inline CommandResult run_variance(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta0", "T", "dt", "nodes", "size"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta0 = detail::need_num(p, "theta0");
    const double T = detail::need_num(p, "T");
    const double dt = detail::get_num(p, "dt", 1e-3);
    const int nodes = static_cast<int>(detail::get_int(p, "nodes", 64));
    const int size = static_cast<int>(detail::get_int(p, "size", 128));
    ThetaTable table(sys, 256, Disc::Fourier, size);
    Sigma2Table sigma2(sys, nodes, Disc::Fourier, size);
    AveragedPath path = solve_averaged(table, theta0, T, dt);
    VarianceProfile prof = variance_profile(table, sigma2, path);
    CommandResult res{CsvWriter({"t", "var_t"})};
    for (std::size_t k = 0; k < prof.t_grid.size(); ++k)
        res.csv.row({prof.t_grid[k], prof.var_t[k]});
    res.extras["ode_error_estimate"] = path.error_estimate;
    return res;
}

inline CommandResult run_rate_table(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta", "b_min", "b_max", "b_step", "size", "sigma_max"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta = detail::need_num(p, "theta");
    const double b0 = detail::get_num(p, "b_min", -0.2);
    const double b1 = detail::get_num(p, "b_max", 0.2);
    const double db = detail::get_num(p, "b_step", 0.05);
    if (!(db > 0.0 && b1 >= b0)) throw config_error("need b_step > 0 and b_max >= b_min");
    const double sigma_max = detail::get_num(p, "sigma_max", 20.0);
    ChiSolver cs(sys, theta, Disc::Fourier, static_cast<int>(detail::get_int(p, "size", 128)));
    CommandResult res{CsvWriter({"b", "sigma", "in_domain", "Z"})};
    const int nb = static_cast<int>(std::round((b1 - b0) / db));
    for (int k = 0; k <= nb; ++k) {
        const double b = b0 + k * db;
        SigmaResult sr = stationary_sigma(cs, b, sigma_max);
        const double Z = sr.in_domain ? sr.sigma * (b - cs.abar()) - cs.chi(sr.sigma)
                                      : kRateInfinity;
        res.csv.row({b, sr.sigma, static_cast<long>(sr.in_domain ? 1 : 0),
                     std::isfinite(Z) ? format_double(Z) : std::string("inf")});
    }
    res.extras["abar"] = cs.abar();
    return res;
}

inline CommandResult run_path_rate(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta0", "path_t", "path_v", "mode", "quad_dt", "size"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta0 = detail::need_num(p, "theta0");
    if (!p.contains("path_t") || !p.contains("path_v"))
        throw config_error("path-rate needs \"path_t\" and \"path_v\" arrays");
    PathSpec gamma;
    for (const auto& v : p["path_t"]) gamma.t.push_back(v.get<double>());
    for (const auto& v : p["path_v"]) gamma.v.push_back(v.get<double>());
    const std::string mode_s = detail::get_str(p, "mode", "frozen");
    const PathRateMode mode =
        mode_s == "moving" ? PathRateMode::Moving : PathRateMode::Frozen;
    if (mode_s != "frozen" && mode_s != "moving")
        throw config_error("mode must be \"frozen\" or \"moving\"");
    const double quad_dt = detail::get_num(p, "quad_dt", 1e-2);
    const int size = static_cast<int>(detail::get_int(p, "size", 128));
    ThetaTable table(sys, 256, Disc::Fourier, size);
    Sigma2Table sigma2(sys, 64, Disc::Fourier, size);
    AveragedPath avg = solve_averaged(table, theta0, gamma.t.back(), 1e-3);
    const double rate = path_rate(sys, gamma, theta0, avg, quad_dt, mode, Disc::Fourier, size);
    const double quad = rate_quadratic(sys, gamma, theta0, avg, table, sigma2, quad_dt);
    CommandResult res{CsvWriter({"mode", "rate", "quadratic_rate"})};
    res.csv.row({mode_s, std::isfinite(rate) ? format_double(rate) : std::string("inf"), quad});
    return res;
}

inline CommandResult run_domain(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta", "p_max"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta = detail::need_num(p, "theta");
    const int p_max = static_cast<int>(detail::get_int(p, "p_max", 8));
    DomainEstimate dom = domain_estimate(sys, theta, p_max);
    CommandResult res{CsvWriter({"period", "orbit_average"})};
    for (std::size_t k = 0; k < dom.periods.size(); ++k)
        res.csv.row({static_cast<long>(dom.periods[k]), dom.orbit_averages[k]});
    res.extras["hull_lo"] = dom.hull_lo;
    res.extras["hull_hi"] = dom.hull_hi;
    res.extras["skipped"] = dom.skipped;
    return res;
}

inline CommandResult run_pairs(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta0", "a", "len", "n_steps", "potentials"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta0 = detail::need_num(p, "theta0");
    const double a = detail::get_num(p, "a", 0.0);
    const double len = detail::get_num(p, "len", 0.05);
    const int n = static_cast<int>(detail::get_int(p, "n_steps", 3));
    if (n < 0 || n > 12) throw config_error("n_steps outside [0, 12]");
    std::vector<PairPotential> phis;
    if (p.contains("potentials"))
        for (const auto& text : p["potentials"]) {
            expr::NodePtr node = expr::parse_expression(text.get<std::string>());
            phis.push_back([node](double x, double th) -> std::complex<double> {
                return expr::eval(*node, x, th);
            });
        }
    StandardFamily fam;
    fam.pairs.push_back(make_uniform_pair(a, len, theta0));
    fam.nu.push_back(1.0);
    fam = iterate_family(std::move(fam), phis, n, sys);
    CommandResult res{CsvWriter({"index", "a", "len", "nu_re", "nu_im"})};
    std::complex<double> mass = 0.0;
    for (long k = 0; k < static_cast<long>(fam.pairs.size()); ++k) {
        res.csv.row({k, fam.pairs[k].a, fam.pairs[k].len, fam.nu[k].real(), fam.nu[k].imag()});
        mass += fam.nu[k];
    }
    res.extras["n_pairs"] = fam.pairs.size();
    res.extras["total_mass_re"] = mass.real();
    res.extras["total_mass_im"] = mass.imag();
    return res;
}

inline CommandResult run_mgf(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta0", "sigma", "T", "n_paths", "size", "obs"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta0 = detail::need_num(p, "theta0");
    const double sigma = detail::need_num(p, "sigma");
    const double T = detail::need_num(p, "T");
    const long n_paths = detail::get_int(p, "n_paths", 100000);
    const int size = static_cast<int>(detail::get_int(p, "size", 128));
    const int obs = static_cast<int>(detail::get_int(p, "obs", 0));
    ThetaTable table(sys, 256, Disc::Fourier, size);
    AveragedPath avg = solve_averaged(table, theta0, T, 1e-3);
    const double predicted = mgf_predict(
        sys, [sigma](double) { return sigma; }, theta0, T, avg, Disc::Fourier, size, 1e-3, obs);
    MgfProbe probe =
        mgf_probe(sys, theta0, sigma, T, n_paths, rc.seed, predicted, rc.threads, obs);
    CommandResult res{CsvWriter({"sigma", "empirical", "predicted", "ess", "flagged"})};
    res.csv.row({sigma, probe.empirical, probe.predicted, probe.ess,
                 static_cast<long>(probe.flagged ? 1 : 0)});
    return res;
}

inline CommandResult run_llt(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta0", "t", "shift", "bins", "n_paths", "size"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta0 = detail::need_num(p, "theta0");
    const double t = detail::need_num(p, "t");
    const double shift = detail::get_num(p, "shift", 0.0);
    const int bins = static_cast<int>(detail::get_int(p, "bins", 64));
    const long n_paths = detail::get_int(p, "n_paths", 100000);
    const int size = static_cast<int>(detail::get_int(p, "size", 128));
    ThetaTable table(sys, 256, Disc::Fourier, size);
    Sigma2Table sigma2(sys, 64, Disc::Fourier, size);
    AveragedPath path = solve_averaged(table, theta0, t, 1e-3);
    VarianceProfile prof = variance_profile(table, sigma2, path);
    LLTReport rep = llt_check(sys, theta0, t, shift, bins, n_paths, rc.seed, prof.var_t.back(),
                              path.theta_bar.back(), rc.threads);
    CommandResult res{CsvWriter({"bin_center", "empirical_density", "predicted_density"})};
    for (std::size_t k = 0; k < rep.bin_centers.size(); ++k)
        res.csv.row({rep.bin_centers[k], rep.empirical_density[k], rep.predicted_density[k]});
    res.extras["ks"] = rep.ks;
    res.extras["variance_ratio"] = rep.variance_ratio;
    res.extras["target_var"] = rep.target_var;
    res.extras["sample_var"] = rep.sample_var;
    res.extras["window_count"] = rep.window_count;
    res.extras["window_density"] = rep.window_density;
    res.extras["window_predicted"] = rep.window_predicted;
    res.extras["insufficient_window"] = rep.insufficient_window;
    return res;
}

inline CommandResult run_ldp_probe(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta0", "C", "beta", "T", "eps_list", "n_paths", "size", "grid"},
                       "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta0 = detail::need_num(p, "theta0");
    const double C = detail::get_num(p, "C", 1.0);
    const double beta = detail::get_num(p, "beta", 0.4);
    const double T = detail::need_num(p, "T");
    const long n_paths = detail::get_int(p, "n_paths", 100000);
    const int size = static_cast<int>(detail::get_int(p, "size", 128));
    std::vector<double> eps_list;
    if (p.contains("eps_list"))
        for (const auto& v : p["eps_list"]) eps_list.push_back(v.get<double>());
    else
        eps_list = {1e-2, 3e-3, 1e-3};
    ThetaTable table(sys, 256, Disc::Fourier, size);
    Sigma2Table sigma2(sys, 64, Disc::Fourier, size);
    ModerateTable tab =
        moderate_probe(sys, theta0, C, beta, eps_list, T, n_paths, rc.seed, table, sigma2,
                       rc.threads, static_cast<int>(detail::get_int(p, "grid", 25)));
    CommandResult res{
        CsvWriter({"eps", "hits", "p_hat", "wilson_lo", "wilson_hi", "scaled_log_p"})};
    for (const auto& r : tab.rows)
        res.csv.row({r.eps, r.hits, r.p_hat, r.wilson_lo, r.wilson_hi, r.scaled_log_p});
    res.extras["target"] = tab.target;
    return res;
}

inline CommandResult run_dolgopyat_scan(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta", "varsigma_list", "n", "size"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta = detail::need_num(p, "theta");
    const int n = static_cast<int>(detail::get_int(p, "n", 40));
    const int size = static_cast<int>(detail::get_int(p, "size", 256));
    std::vector<double> vs;
    if (p.contains("varsigma_list"))
        for (const auto& v : p["varsigma_list"]) vs.push_back(v.get<double>());
    else
        vs = {5.0, 10.0, 20.0, 50.0};
    CommandResult res{CsvWriter({"varsigma", "n", "radius"})};
    for (double v : vs) {
        const int n_eff =
            std::max(n, static_cast<int>(std::ceil(8.0 * std::log(std::fabs(v)))));
        const double r = spectral_radius_complex(sys, theta, v, n_eff, Disc::Fourier, size);
        res.csv.row({v, static_cast<long>(n_eff), r});
    }
    return res;
}

inline CommandResult run_uni(const RunConfig& rc) {
    const Json& p = detail::params_of(rc.config);
    detail::check_keys(p, {"theta", "n", "grid"}, "params");
    FastSlowSystem sys = detail::system_from_config(rc.config);
    const double theta = detail::need_num(p, "theta");
    const int n = static_cast<int>(detail::get_int(p, "n", 10));
    const int grid = static_cast<int>(detail::get_int(p, "grid", 2048));
    CommandResult res{CsvWriter({"n", "uni_bound"})};
    for (int k = 1; k <= n; ++k) res.csv.row({static_cast<long>(k), uni_estimate(sys, theta, k, grid)});
    return res;
}

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{
        "simulate", "spectrum", "average",  "variance",       "rate-table", "path-rate", "domain",
        "pairs",    "mgf",      "llt",      "ldp-probe",      "dolgopyat-scan", "uni"};
    return names;
}

inline CommandResult dispatch(const RunConfig& rc) {
    if (rc.command == "simulate") return run_simulate(rc);
    if (rc.command == "spectrum") return run_spectrum(rc);
    if (rc.command == "average") return run_average(rc);
    if (rc.command == "variance") return run_variance(rc);
    if (rc.command == "rate-table") return run_rate_table(rc);
    if (rc.command == "path-rate") return run_path_rate(rc);
    if (rc.command == "domain") return run_domain(rc);
    if (rc.command == "pairs") return run_pairs(rc);
    if (rc.command == "mgf") return run_mgf(rc);
    if (rc.command == "llt") return run_llt(rc);
    if (rc.command == "ldp-probe") return run_ldp_probe(rc);
    if (rc.command == "dolgopyat-scan") return run_dolgopyat_scan(rc);
    if (rc.command == "uni") return run_uni(rc);
    throw config_error("unknown subcommand \"" + rc.command + "\"");
}

// Execute a subcommand and write <out>/<command>.csv plus
// <out>/manifest.json.  Returns the process exit code; error text goes to
// `err` (standard error in the tool).
inline int run(const RunConfig& rc, std::ostream& err) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        CommandResult res = dispatch(rc);
        std::filesystem::create_directories(rc.out_dir);
        const std::string csv_path = rc.out_dir + "/" + rc.command + ".csv";
        res.csv.save(csv_path);
        Json manifest;
        manifest["command"] = rc.command;
        manifest["config"] = rc.config;
        manifest["seed"] = rc.seed;
        manifest["threads"] = rc.threads;
        manifest["versions"] = {{"tool", kToolVersion},
                                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                              std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                              std::to_string(EIGEN_MINOR_VERSION)}};
        manifest["outputs"] = {csv_path};
        manifest["results"] = res.extras;
        manifest["wall_time_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        save_json(manifest, rc.out_dir + "/manifest.json");
        return 0;
    } catch (const resource_error& e) {
        err << "resource limit: " << e.what() << "\n";
        return 4;
    } catch (const config_error& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "numeric failure: " << e.what() << "\n";
        return 3;
    }
}

// A manifest doubles as a config: extract the embedded command and config so
// reruns reproduce byte-identical CSVs.
inline RunConfig config_from_json(const Json& j, const std::string& command,
                                  const std::string& out_dir, std::uint64_t seed, int threads) {
    RunConfig rc;
    if (j.contains("command") && j.contains("config")) {
        rc.command = j["command"].get<std::string>();
        rc.config = j["config"];
        if (j.contains("seed")) rc.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("threads")) rc.threads = j["threads"].get<int>();
    } else {
        rc.command = command;
        rc.config = j;
        rc.seed = seed;
        rc.threads = threads;
    }
    if (!command.empty()) rc.command = command;
    rc.out_dir = out_dir;
    if (seed != 0) rc.seed = seed;
    if (threads != 0) rc.threads = threads;
    if (rc.threads <= 0) rc.threads = 1;
    return rc;
}

}  // namespace fastslow
