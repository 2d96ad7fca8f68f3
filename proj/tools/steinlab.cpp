// Command-line front end: config parsing, seed management, and experiment
// dispatch. Commands mirror the library operations; see README for examples.
#include "steinlab/runner.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

using namespace steinlab;

int main(int argc, char** argv) {
    CLI::App app{"steinlab: Langevin / Stein-equation numerical laboratory"};
    app.require_subcommand(0, 1);

    std::string config_path;
    app.add_option("--config", config_path, "flat key = value configuration file");

    // Flag values are collected as (key, raw string) so that file values and
    // defaults are overridden only where a flag was actually given.
    std::vector<std::pair<std::string, std::string>> overrides;
    auto mirror = [&](CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
        cmd->add_option_function<std::string>(
               flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); }, help)
            ->expected(1);
    };
    auto add_common = [&](CLI::App* cmd) {
        mirror(cmd, "--seed", "seed", "64-bit reproducibility seed");
        mirror(cmd, "--workers", "workers", "worker threads (0 = hardware)");
        mirror(cmd, "--out", "out", "output directory");
        mirror(cmd, "--model", "model.kind", "linear | power | counterexample");
        mirror(cmd, "--dim", "model.dim", "state dimension");
        mirror(cmd, "--A", "model.a", "identity | diag:a,b | row-major entries");
        mirror(cmd, "--c", "model.c", "power drift scale c");
        mirror(cmd, "--p", "model.p", "power drift exponent p");
        mirror(cmd, "--dt", "grid.dt", "time step");
        mirror(cmd, "--T", "grid.T", "horizon");
        mirror(cmd, "--replicas", "budget.replicas", "Monte Carlo replicas");
        mirror(cmd, "--samples", "budget.samples", "samples per empirical measure");
        mirror(cmd, "--seeds", "budget.seeds", "replicate seeds for experiments");
        mirror(cmd, "--test-fn", "h", "test function: x | square | abs | sin");
        mirror(cmd, "--x0", "x0", "initial point (comma list)");
        mirror(cmd, "--points", "points", "evaluation points (comma list)");
        mirror(cmd, "--steps", "ula.steps", "step-size grid (comma list)");
        mirror(cmd, "--step", "pair.step", "single chain step size");
        mirror(cmd, "--break-pair", "pair.break", "decouple W' (negative control): 0|1");
        mirror(cmd, "--pair-kind", "pair.kind", "ula | clt");
        mirror(cmd, "--n-grid", "clt.n", "sum sizes for clt-rate (comma list)");
        mirror(cmd, "--dist", "clt.dist", "rademacher | bounded_uniform");
        mirror(cmd, "--t-grid", "contraction.t", "time grid (comma list)");
        mirror(cmd, "--fd-eps", "bel.fd_eps", "finite-difference epsilon");
        mirror(cmd, "--dump-paths", "dump_paths", "write per-replica path CSVs: 0|1");
        mirror(cmd, "--mean-method", "mean.method", "auto | gauss | ergodic");
    };
    add_common(&app);
    for (const auto& name : known_commands()) add_common(app.add_subcommand(name, ""));

    CLI11_PARSE(app, argc, argv);

    RunConfig cfg;
    try {
        if (!config_path.empty()) load_config_file(cfg, config_path);
        for (auto* sub : app.get_subcommands()) cfg.command = sub->get_name();
        for (const auto& [key, value] : overrides) apply_config_key(cfg, key, value);  // flag wins
        if (cfg.command.empty()) {
            std::cerr << "no command given (subcommand or 'command = ...' in the config file)\n";
            return 2;
        }
        validate_config(cfg);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    return run(cfg);
}
