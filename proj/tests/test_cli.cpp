#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* p = std::getenv("FASTSLOW_CLI");
    REQUIRE_MESSAGE(p != nullptr, "FASTSLOW_CLI must point at the tool binary");
    return p;
}

fs::path work_dir() {
    static fs::path d = [] {
        fs::path p = fs::temp_directory_path() / "fastslow_cli_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return d;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

int run_cli(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WEXITSTATUS(st);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("variance command reproduces the equilibrium profile") {
    const fs::path cfg = work_dir() / "variance.json";
    write_file(cfg, R"({"system":{"preset":"doubling-cos","eps":1e-3},
                        "params":{"theta0":0.5,"T":1.0}})");
    const fs::path out = work_dir() / "var_out";
    REQUIRE(run_cli("variance --config " + cfg.string() + " --out " + out.string()) == 0);
    auto rows = lines_of(slurp(out / "variance.csv"));
    REQUIRE(rows.size() >= 2);
    CHECK(rows[0] == "t,var_t");
    const auto& last = rows.back();
    const double var = std::stod(last.substr(last.find(',') + 1));
    CHECK(var == doctest::Approx(0.079429127434822902).epsilon(1e-9));
    CHECK(fs::exists(out / "manifest.json"));
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli("no-such-command") == 2);
    CHECK(run_cli("simulate") == 2);  // missing --config
    const fs::path bad = work_dir() / "bad.json";
    write_file(bad, "{not json");
    CHECK(run_cli("simulate --config " + bad.string() + " --out " +
                  (work_dir() / "bad_out").string()) == 2);
    const fs::path unknown = work_dir() / "unknown_key.json";
    write_file(unknown, R"({"system":{"preset":"doubling-cos","eps":1e-3},
                            "params":{"theta0":0.5,"bogus":1}})");
    CHECK(run_cli("simulate --config " + unknown.string() + " --out " +
                  (work_dir() / "unk_out").string()) == 2);
}

TEST_CASE("resource limits exit with code 4") {
    const fs::path cfg = work_dir() / "huge.json";
    write_file(cfg, R"({"system":{"preset":"doubling-cos","eps":1e-3},
                        "params":{"theta0":0.5,"n_steps":100000001}})");
    CHECK(run_cli("simulate --config " + cfg.string() + " --out " +
                  (work_dir() / "huge_out").string()) == 4);
}

TEST_CASE("manifest rerun reproduces byte-identical output") {
    const fs::path cfg = work_dir() / "sim.json";
    write_file(cfg, R"({"system":{"preset":"perturbed-doubling","eps":1e-3},
                        "params":{"theta0":0.25,"x0":0.37,"n_steps":200}})");
    const fs::path out1 = work_dir() / "sim1", out2 = work_dir() / "sim2";
    REQUIRE(run_cli("simulate --config " + cfg.string() + " --out " + out1.string() +
                    " --seed 7") == 0);
    REQUIRE(run_cli("--config " + (out1 / "manifest.json").string() + " --out " +
                    out2.string()) == 0);
    const std::string c1 = slurp(out1 / "simulate.csv");
    const std::string c2 = slurp(out2 / "simulate.csv");
    CHECK(!c1.empty());
    CHECK(c1 == c2);
    auto rows = lines_of(c1);
    CHECK(rows[0] == "k,x,theta");
    CHECK(rows.size() == 202);  // header + n_steps + 1 states
}

TEST_CASE("spectrum on a custom expression system") {
    const fs::path cfg = work_dir() / "spec.json";
    write_file(cfg,
               R"json({"system":{"f":"2*x","omega":"cos(2*pi*x)+0.5*sin(2*pi*theta)","eps":1e-3},
                   "params":{"theta":0.5,"size":64}})json");
    const fs::path out = work_dir() / "spec_out";
    REQUIRE(run_cli("spectrum --config " + cfg.string() + " --out " + out.string()) == 0);
    const std::string man = slurp(out / "manifest.json");
    CHECK(man.find("\"chi\"") != std::string::npos);
    CHECK(man.find("\"gap\"") != std::string::npos);
    auto rows = lines_of(slurp(out / "spectrum.csv"));
    CHECK(rows[0] == "j,x,h_re,h_im,m_re,m_im");
    CHECK(rows.size() == 65);
}
