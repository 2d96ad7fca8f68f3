// Run configuration: a flat `key = value` format with dotted namespaces,
// mirrored one-to-one by command-line flags (flags win on conflict). A run
// serializes its resolved configuration next to its outputs, and every output
// file carries the configuration hash.
#pragma once

#include "steinlab/common.hpp"

#include <cstdint>
#include <limits>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace steinlab {

struct RunConfig {
    std::string command;

    // model
    std::string model_kind = "linear";  // linear | power | counterexample
    int dim = 1;
    std::string model_a = "identity";  // identity | diag:a,b,... | row-major comma list
    double model_c = 1.0;
    double model_p = 2.0;
    // optional overrides of the derived dissipativity parameters (nan = derived)
    double theta0 = std::numeric_limits<double>::quiet_NaN();
    double theta1 = std::numeric_limits<double>::quiet_NaN();
    double theta2 = std::numeric_limits<double>::quiet_NaN();
    double theta3 = std::numeric_limits<double>::quiet_NaN();
    double theta4 = std::numeric_limits<double>::quiet_NaN();

    // numerics
    double dt = 1e-3;
    double horizon = 10.0;
    std::size_t replicas = 100000;
    std::size_t samples = 4000;
    int seeds = 5;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    std::string out_dir = "steinlab_out";

    // per-command knobs
    std::vector<double> ula_steps = {0.2, 0.1, 0.05, 0.025};
    std::vector<double> clt_n = {8, 16, 32, 64, 128};
    std::string clt_dist = "rademacher";  // rademacher | bounded_uniform
    std::vector<double> contraction_t = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
    std::vector<double> points = {-1.0, -0.5, 0.0, 0.5, 1.0};
    Vec x0 = Vec::Constant(1, 3.0);
    std::string test_function = "x";  // x | square | abs | sin
    double pair_step = 0.1;
    bool pair_break = false;        // negative control: decouple W' from W
    std::string pair_kind = "ula";  // ula | clt
    double fd_eps = 1e-3;
    bool dump_paths = false;
    std::string mean_method = "auto";  // auto | gauss | ergodic
};

namespace detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    auto e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<double> parse_list(const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(std::stod(item));
    }
    if (out.empty()) throw std::invalid_argument("empty list value");
    return out;
}

inline std::string format_list(const std::vector<double>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        os << buf;
    }
    return os.str();
}

}  // namespace detail

inline const std::vector<std::string>& known_commands() {
    static const std::vector<std::string> cmds = {"probe",      "simulate",  "bismut-check", "stein-solve",
                                                  "residual",   "pair-bound", "ula-scaling",  "clt-rate",
                                                  "contraction", "lemma-suite"};
    return cmds;
}

// Applies one key = value assignment; throws naming unknown keys.
inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_list;
    if (key == "command") cfg.command = value;
    else if (key == "model.kind") cfg.model_kind = value;
    else if (key == "model.dim") cfg.dim = std::stoi(value);
    else if (key == "model.a") cfg.model_a = value;
    else if (key == "model.c") cfg.model_c = std::stod(value);
    else if (key == "model.p") cfg.model_p = std::stod(value);
    else if (key == "model.theta0") cfg.theta0 = std::stod(value);
    else if (key == "model.theta1") cfg.theta1 = std::stod(value);
    else if (key == "model.theta2") cfg.theta2 = std::stod(value);
    else if (key == "model.theta3") cfg.theta3 = std::stod(value);
    else if (key == "model.theta4") cfg.theta4 = std::stod(value);
    else if (key == "grid.dt") cfg.dt = std::stod(value);
    else if (key == "grid.T") cfg.horizon = std::stod(value);
    else if (key == "budget.replicas") cfg.replicas = std::stoull(value);
    else if (key == "budget.samples") cfg.samples = std::stoull(value);
    else if (key == "budget.seeds") cfg.seeds = std::stoi(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "workers") cfg.workers = static_cast<unsigned>(std::stoul(value));
    else if (key == "out") cfg.out_dir = value;
    else if (key == "ula.steps") cfg.ula_steps = parse_list(value);
    else if (key == "ula.step" || key == "pair.step") cfg.pair_step = std::stod(value);
    else if (key == "pair.break") cfg.pair_break = value == "true" || value == "1";
    else if (key == "pair.kind") cfg.pair_kind = value;
    else if (key == "clt.n") cfg.clt_n = parse_list(value);
    else if (key == "clt.dist") cfg.clt_dist = value;
    else if (key == "contraction.t") cfg.contraction_t = parse_list(value);
    else if (key == "points") cfg.points = parse_list(value);
    else if (key == "x0") {
        auto vals = parse_list(value);
        cfg.x0 = Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    } else if (key == "h") cfg.test_function = value;
    else if (key == "bel.fd_eps") cfg.fd_eps = std::stod(value);
    else if (key == "dump_paths") cfg.dump_paths = value == "true" || value == "1";
    else if (key == "mean.method") cfg.mean_method = value;
    else throw std::invalid_argument("unknown config key: " + key);
}

inline void validate_config(const RunConfig& cfg) {
    bool known = false;
    for (const auto& c : known_commands()) known = known || c == cfg.command;
    if (!known) throw std::invalid_argument("unknown command: '" + cfg.command + "'");
    if (cfg.dt <= 0) throw std::invalid_argument("grid.dt must be positive");
    if (cfg.horizon <= 0) throw std::invalid_argument("grid.T must be positive");
    if (cfg.dim < 1) throw std::invalid_argument("model.dim must be a positive integer");
    const double inv_e = 1.0 / std::exp(1.0);
    if (cfg.pair_step >= inv_e) throw std::invalid_argument("step must satisfy s < 1/e");
    for (double s : cfg.ula_steps)
        if (s >= inv_e) throw std::invalid_argument("step must satisfy s < 1/e");
    if (cfg.fd_eps < 1e-4 || cfg.fd_eps > 1e-2)
        throw std::invalid_argument("bel.fd_eps must lie in [1e-4, 1e-2]");
    if (cfg.clt_dist != "rademacher" && cfg.clt_dist != "bounded_uniform")
        throw std::invalid_argument("clt.dist must be rademacher or bounded_uniform (bounded support required)");
    if (cfg.mean_method != "auto" && cfg.mean_method != "gauss" && cfg.mean_method != "ergodic")
        throw std::invalid_argument("mean.method must be auto, gauss, or ergodic");
    if (cfg.pair_kind != "ula" && cfg.pair_kind != "clt")
        throw std::invalid_argument("pair.kind must be ula or clt");
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config file not found: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key = value");
        apply_config_key(cfg, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
}

// Canonical serialization: sorted keys, full precision; re-parsing the output
// reproduces the configuration exactly.
inline std::string serialize_config(const RunConfig& cfg) {
    std::map<std::string, std::string> kv;
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    kv["command"] = cfg.command;
    kv["model.kind"] = cfg.model_kind;
    kv["model.dim"] = std::to_string(cfg.dim);
    kv["model.a"] = cfg.model_a;
    kv["model.c"] = num(cfg.model_c);
    kv["model.p"] = num(cfg.model_p);
    if (!std::isnan(cfg.theta0)) kv["model.theta0"] = num(cfg.theta0);
    if (!std::isnan(cfg.theta1)) kv["model.theta1"] = num(cfg.theta1);
    if (!std::isnan(cfg.theta2)) kv["model.theta2"] = num(cfg.theta2);
    if (!std::isnan(cfg.theta3)) kv["model.theta3"] = num(cfg.theta3);
    if (!std::isnan(cfg.theta4)) kv["model.theta4"] = num(cfg.theta4);
    kv["grid.dt"] = num(cfg.dt);
    kv["grid.T"] = num(cfg.horizon);
    kv["budget.replicas"] = std::to_string(cfg.replicas);
    kv["budget.samples"] = std::to_string(cfg.samples);
    kv["budget.seeds"] = std::to_string(cfg.seeds);
    kv["seed"] = std::to_string(cfg.seed);
    kv["workers"] = std::to_string(cfg.workers);
    kv["out"] = cfg.out_dir;
    kv["ula.steps"] = detail::format_list(cfg.ula_steps);
    kv["pair.step"] = num(cfg.pair_step);
    kv["pair.break"] = cfg.pair_break ? "1" : "0";
    kv["pair.kind"] = cfg.pair_kind;
    kv["clt.n"] = detail::format_list(cfg.clt_n);
    kv["clt.dist"] = cfg.clt_dist;
    kv["contraction.t"] = detail::format_list(cfg.contraction_t);
    kv["points"] = detail::format_list(cfg.points);
    std::vector<double> x0v(cfg.x0.data(), cfg.x0.data() + cfg.x0.size());
    kv["x0"] = detail::format_list(x0v);
    kv["h"] = cfg.test_function;
    kv["bel.fd_eps"] = num(cfg.fd_eps);
    kv["dump_paths"] = cfg.dump_paths ? "1" : "0";
    kv["mean.method"] = cfg.mean_method;
    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
    return os.str();
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
    // FNV-1a over the canonical serialization
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : serialize_config(cfg)) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace steinlab
