#include "steinlab/config.hpp"
#include "steinlab/runner.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace steinlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("steinlab_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("minimal config fills documented defaults") {
    auto dir = temp_dir("cfg1");
    auto file = dir / "run.cfg";
    std::ofstream(file) << "command = lemma-suite\nmodel.kind = linear\nmodel.a = identity\n"
                        << "model.dim = 1\nseed = 42\n";
    RunConfig cfg;
    load_config_file(cfg, file.string());
    CHECK(cfg.command == "lemma-suite");
    CHECK(cfg.seed == 42);
    CHECK(cfg.dt == 1e-3);            // default preserved
    CHECK(cfg.replicas == 100000);    // default preserved
    CHECK_NOTHROW(validate_config(cfg));
}

TEST_CASE("out-of-range step is rejected citing the bound") {
    RunConfig cfg;
    cfg.command = "ula-scaling";
    cfg.ula_steps = {0.5};
    try {
        validate_config(cfg);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("s < 1/e") != std::string::npos);
    }
}

TEST_CASE("unknown keys are rejected by name") {
    RunConfig cfg;
    try {
        apply_config_key(cfg, "grid.DT", "0.1");
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("grid.DT") != std::string::npos);
    }
}

TEST_CASE("config serialization round-trips") {
    RunConfig cfg;
    cfg.command = "contraction";
    cfg.model_kind = "power";
    cfg.model_c = 0.7;
    cfg.model_p = 2.5;
    cfg.dim = 2;
    cfg.seed = 123456789;
    cfg.ula_steps = {0.123, 0.0456};
    cfg.x0 = Vec::Constant(2, 1.5);
    auto dir = temp_dir("cfg2");
    auto file = dir / "rt.cfg";
    std::ofstream(file) << serialize_config(cfg);
    RunConfig back;
    load_config_file(back, file.string());
    CHECK(serialize_config(back) == serialize_config(cfg));
    CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("runs are deterministic and outputs carry the config hash") {
    RunConfig cfg;
    cfg.command = "pair-bound";
    cfg.model_kind = "linear";
    cfg.dim = 1;
    cfg.pair_step = 0.1;
    cfg.samples = 3000;
    cfg.seed = 7;
    auto dir1 = temp_dir("run1"), dir2 = temp_dir("run2");
    cfg.out_dir = dir1.string();
    REQUIRE(run(cfg) == 0);
    cfg.out_dir = dir2.string();
    REQUIRE(run(cfg) == 0);
    auto csv1 = slurp(dir1 / "pair_bound.csv");
    auto csv2 = slurp(dir2 / "pair_bound.csv");
    // The out directory is part of the config (and its hash); strip the hash
    // comment line before comparing the data payload byte for byte.
    auto body = [](const std::string& s) { return s.substr(s.find('\n') + 1); };
    CHECK(body(csv1) == body(csv2));
    CHECK(csv1.rfind("# config=", 0) == 0);
    // resolved config sidecar re-parses to the same configuration
    RunConfig back;
    back.out_dir = cfg.out_dir;  // out is resolved, differs per run dir
    load_config_file(back, (dir2 / "resolved_config.txt").string());
    CHECK(serialize_config(back) == serialize_config(cfg));
}

TEST_CASE("error paths emit a machine-readable error json") {
    RunConfig cfg;
    cfg.command = "stein-solve";
    cfg.model_kind = "counterexample";  // fails the probe gate inside estimators
    cfg.dim = 1;
    cfg.replicas = 2000;
    cfg.horizon = 60.0;
    auto dir = temp_dir("err1");
    cfg.out_dir = dir.string();
    CHECK(run(cfg) == 2);
    CHECK(fs::exists(dir / "error.json"));
    CHECK(slurp(dir / "error.json").find("error") != std::string::npos);
}
