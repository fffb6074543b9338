#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fastslow/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"fast-slow skew product toolkit"};
    app.require_subcommand(0, 1);

    std::string config_path, out_dir = "out";
    std::uint64_t seed = 0;
    int threads = 0;
    app.add_option("--config", config_path, "JSON config (or a previous run manifest)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "RNG seed");
    app.add_option("--threads", threads, "worker thread count");

    for (const auto& name : fastslow::command_names())
        app.add_subcommand(name, "")->fallthrough();
    app.allow_extras();  // catch unknown subcommands ourselves for exit code 2

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, std::cout, std::cerr);
        return rc == 0 ? 0 : 2;
    }

    std::string command;
    for (const auto* sub : app.get_subcommands()) command = sub->get_name();
    if (command.empty() && !app.remaining().empty()) {
        std::cerr << "unknown subcommand \"" << app.remaining().front() << "\"\n"
                  << app.help() << std::endl;
        return 2;
    }

    try {
        if (config_path.empty()) {
            std::cerr << "--config is required\n" << app.help() << std::endl;
            return 2;
        }
        fastslow::Json cfg = fastslow::load_json(config_path);
        fastslow::RunConfig rc =
            fastslow::config_from_json(cfg, command, out_dir, seed, threads);
        if (rc.command.empty()) {
            std::cerr << "no subcommand given\n" << app.help() << std::endl;
            return 2;
        }
        return fastslow::run(rc, std::cerr);
    } catch (const fastslow::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    }
}
