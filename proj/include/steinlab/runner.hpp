// Dispatches a validated RunConfig to the module operations and writes CSV
// and JSON artifacts. Exit status 0 means every check the command asserts
// passed; module errors become a machine-readable error JSON and status 2.
#pragma once

#include "steinlab/config.hpp"
#include "steinlab/exchangeable.hpp"
#include "steinlab/experiments.hpp"
#include "steinlab/gaussian.hpp"
#include "steinlab/io.hpp"
#include "steinlab/stein.hpp"
#include "steinlab/wasserstein.hpp"

#include <filesystem>
#include <iostream>

namespace steinlab {

struct ModelSetup {
    DriftModel model;
    ThetaParams theta;
    double rate_c = 0;
};

inline ModelSetup build_model(const RunConfig& cfg) {
    ModelSetup s;
    if (cfg.model_kind == "linear") {
        Mat a;
        if (cfg.model_a == "identity") {
            a = Mat::Identity(cfg.dim, cfg.dim);
        } else if (cfg.model_a.rfind("diag:", 0) == 0) {
            auto vals = detail::parse_list(cfg.model_a.substr(5));
            a = Mat::Zero(static_cast<Eigen::Index>(vals.size()), static_cast<Eigen::Index>(vals.size()));
            for (std::size_t i = 0; i < vals.size(); ++i) a(i, i) = vals[i];
        } else {
            auto vals = detail::parse_list(cfg.model_a);
            int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(vals.size()))));
            if (d * d != static_cast<int>(vals.size()))
                throw std::invalid_argument("model.a: need d*d entries (row-major)");
            a = Eigen::Map<const Mat>(vals.data(), d, d).transpose();
        }
        auto [m, th] = make_linear_model(a);
        s.model = std::move(m);
        s.theta = th;
        s.rate_c = contraction_constants(s.model).c;
    } else if (cfg.model_kind == "power") {
        auto [m, th] = make_power_model(cfg.model_c, cfg.model_p, cfg.dim);
        s.model = std::move(m);
        s.theta = th;
        ProbedKappaOptions kopt;
        for (double r = 0.5; r <= 4.01; r += 0.5) kopt.radii.push_back(r);
        kopt.pairs_per_radius = 3000;
        kopt.seed = cfg.seed + 101;
        auto cc = contraction_constants_probed(s.model, kopt);
        if (!cc.ok) throw std::runtime_error("probed contraction constants undefined for this model");
        s.rate_c = cc.c;
    } else if (cfg.model_kind == "counterexample") {
        s.model = make_counterexample_drift(cfg.model_c, std::max(cfg.model_p, 2.0), cfg.dim);
        s.theta.theta0 = 0.01;  // no admissible theta exists; used by the probe demo
        s.theta.theta1 = 0.0;
        s.theta.theta2 = 1.0;
        s.theta.theta3 = 100.0;
        s.theta.theta4 = 1.0;
        s.rate_c = 0.1;
    } else {
        throw std::invalid_argument("unknown model.kind: " + cfg.model_kind);
    }
    if (!std::isnan(cfg.theta0)) s.theta.theta0 = cfg.theta0;
    if (!std::isnan(cfg.theta1)) s.theta.theta1 = cfg.theta1;
    if (!std::isnan(cfg.theta2)) s.theta.theta2 = cfg.theta2;
    if (!std::isnan(cfg.theta3)) s.theta.theta3 = cfg.theta3;
    if (!std::isnan(cfg.theta4)) s.theta.theta4 = cfg.theta4;
    return s;
}

inline TestFunction build_test_function(const RunConfig& cfg, int dim) {
    if (cfg.test_function == "x") return h_coordinate(dim, 0);
    if (cfg.test_function == "square") return h_square(dim);
    if (cfg.test_function == "abs") return h_abs(dim);
    if (cfg.test_function == "sin") return h_sin(dim);
    throw std::invalid_argument("unknown test function h: " + cfg.test_function);
}

inline TargetMean resolve_target_mean(const RunConfig& cfg, const ModelSetup& setup, const TestFunction& h) {
    bool gauss = cfg.mean_method == "gauss" ||
                 (cfg.mean_method == "auto" && setup.model.kind == DriftKind::Linear);
    if (gauss) return target_mean_quadrature(setup.model, h);
    ErgodicMeanOptions opt;
    opt.seed = cfg.seed + 7;
    return target_mean_ergodic(setup.model, setup.theta, h, opt);
}

namespace detail {

inline nlohmann::json check_json(const IdentityCheck& c) {
    return {{"check", c.check}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"se", c.se}, {"pass", c.pass}};
}

inline nlohmann::json estimate_json(const SteinEstimate& e) {
    return {{"value", e.value},
            {"se", e.std_error},
            {"tail", e.truncation_tail},
            {"horizon", e.horizon},
            {"replicas", e.replicas}};
}

inline void write_scaling_csv(const std::filesystem::path& p, std::uint64_t hash, const ScalingResult& res) {
    CsvWriter csv(p, hash,
                  {"param", "seed", "raw_w1", "baseline_w1", "corrected_w1", "crn_w1", "analytic_w1",
                   "term_delta3", "term_r1", "term_r2", "bound_total"});
    for (const auto& r : res.rows)
        csv.row({format_full(r.param), std::to_string(r.seed), format_full(r.raw_w1),
                 format_full(r.baseline_w1), format_full(r.corrected_w1), format_full(r.crn_w1),
                 format_full(r.analytic_w1), format_full(r.term_delta3), format_full(r.term_r1),
                 format_full(r.term_r2), format_full(r.bound_total)});
}

inline nlohmann::json scaling_summary_json(const ScalingResult& res) {
    nlohmann::json j;
    j["name"] = res.name;
    j["fitted_exponent"] = res.fitted_exponent.slope;
    j["fitted_exponent_se_fit"] = res.fitted_exponent.slope_se;
    j["fitted_exponent_se_seeds"] = res.exponent_se_seeds;
    for (const auto& [k, v] : res.summary) j[k] = v;
    return j;
}

}  // namespace detail

// Runs one command; returns the process exit status.
inline int run(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    validate_config(cfg);
    fs::path out(cfg.out_dir);
    fs::create_directories(out);
    const std::uint64_t hash = config_hash(cfg);
    write_text(out / "resolved_config.txt", "# config=" + hash_hex(hash) + "\n" + serialize_config(cfg));

    try {
        auto setup = build_model(cfg);
        const int d = setup.model.dim;

        if (cfg.command == "probe") {
            auto probes = make_probe_grid(d, 400, 10.0, cfg.seed + 1);
            auto rep = probe_assumption(setup.model, setup.theta, probes);
            nlohmann::json j = {{"pass", rep.pass},
                                {"worst_a2_slack", rep.worst_a2_slack},
                                {"worst_a3_slack", rep.worst_a3_slack},
                                {"n_probes", rep.n_probes},
                                {"theta0", setup.theta.theta0},
                                {"theta1", setup.theta.theta1},
                                {"theta2", setup.theta.theta2},
                                {"theta3", setup.theta.theta3},
                                {"theta4", setup.theta.theta4}};
            write_json(out / "probe_summary.json", j);
            std::cout << j.dump(2) << "\n";
            return rep.pass ? 0 : 1;
        }

        if (cfg.command == "simulate") {
            TimeGrid grid(cfg.horizon, std::max(8, static_cast<int>(std::lround(cfg.horizon / cfg.dt))));
            CounterRng rng(cfg.seed);
            Vec x0 = cfg.x0.size() == d ? cfg.x0 : Vec::Ones(d);
            Vec u1 = Vec::Unit(d, 0);
            std::vector<double> terminal_sq(cfg.samples);
            for (std::size_t r = 0; r < cfg.samples; ++r) {
                auto noise = make_brownian_path(rng, r, grid, d);
                auto bundle = make_flow_bundle(setup.model, x0, grid, noise, u1, Vec(), {});
                terminal_sq[r] = bundle.state.col(grid.steps).squaredNorm();
                if (cfg.dump_paths) {
                    std::vector<std::string> cols = {"step", "t"};
                    for (int k = 0; k < d; ++k) cols.push_back("x" + std::to_string(k));
                    for (int k = 0; k < d; ++k) cols.push_back("var1_" + std::to_string(k));
                    CsvWriter csv(out / ("path_" + std::to_string(r) + ".csv"), hash, cols);
                    for (int k = 0; k <= grid.steps; ++k) {
                        std::vector<std::string> cells = {std::to_string(k), format_full(grid.time(k))};
                        for (int a = 0; a < d; ++a) cells.push_back(format_full(bundle.state(a, k)));
                        for (int a = 0; a < d; ++a) cells.push_back(format_full(bundle.var1(a, k)));
                        csv.row(cells);
                    }
                }
            }
            auto ms = mean_se(terminal_sq);
            nlohmann::json j = {{"terminal_second_moment", ms.mean},
                                {"se", ms.se},
                                {"samples", cfg.samples},
                                {"horizon", cfg.horizon}};
            write_json(out / "simulate_summary.json", j);
            std::cout << j.dump(2) << "\n";
            return 0;
        }

        if (cfg.command == "bismut-check") {
            TimeGrid grid(cfg.horizon, std::max(8, static_cast<int>(std::lround(cfg.horizon / cfg.dt))));
            auto h = build_test_function(cfg, d);
            Vec x0 = cfg.x0.size() == d ? cfg.x0 : Vec::Ones(d);
            Vec u = Vec::Unit(d, 0);
            McOptions opt;
            opt.replicas = cfg.replicas;
            opt.seed = cfg.seed;
            opt.workers = cfg.workers;
            auto ibp = verify_ibp(setup.model, x0, grid, h, u, opt);
            auto bel = verify_bel(setup.model, x0, grid, h, u, cfg.fd_eps, opt);
            auto second = verify_second_order_identity(setup.model, x0, grid, h_square(d), u, u, opt);
            nlohmann::json j = nlohmann::json::array();
            j.push_back(detail::check_json(ibp));
            j.push_back(detail::check_json(bel.identity));
            j.push_back(detail::check_json(second));
            write_json(out / "bismut_checks.json", j);
            std::cout << j.dump(2) << "\n";
            return ibp.pass && bel.identity.pass && second.pass ? 0 : 1;
        }

        if (cfg.command == "stein-solve" || cfg.command == "residual") {
            auto h = build_test_function(cfg, d);
            SteinOptions sopt;
            sopt.dt = cfg.dt;
            sopt.replicas = cfg.replicas;
            sopt.cache_replicas = std::max<std::size_t>(cfg.replicas / 10, 1000);
            sopt.seed = cfg.seed;
            sopt.workers = cfg.workers;
            auto ctx = make_stein_context(setup.model, setup.theta, setup.rate_c, sopt);
            auto mu = resolve_target_mean(cfg, setup, h);
            double horizon = std::max(cfg.horizon, 5.0 / setup.rate_c);
            auto grad_field = build_grad_field(ctx, h, horizon);
            bool all_pass = true;
            nlohmann::json rows = nlohmann::json::array();
            CsvWriter csv(out / (cfg.command + ".csv"), hash,
                          cfg.command == "residual"
                              ? std::vector<std::string>{"point", "residual", "se", "pass"}
                              : std::vector<std::string>{"point", "f", "f_se", "f_tail", "grad", "grad_se",
                                                         "hess", "hess_se"});
            for (double p : cfg.points) {
                Vec x = Vec::Constant(d, p);
                if (cfg.command == "residual") {
                    auto rep = stein_residual(ctx, h, x, horizon, mu, grad_field);
                    all_pass = all_pass && rep.pass();
                    rows.push_back({{"point", p},
                                    {"residual", rep.residual},
                                    {"se", rep.se},
                                    {"pass", rep.pass()}});
                    csv.row({format_full(p), format_full(rep.residual), format_full(rep.se),
                             rep.pass() ? "1" : "0"});
                } else {
                    Vec u = Vec::Unit(d, 0);
                    auto f = estimate_f(ctx, h, x, horizon);
                    auto g = estimate_grad_f(ctx, h, x, u, horizon);
                    auto hs = estimate_hess_f(ctx, h, x, u, u, horizon, grad_field);
                    nlohmann::json row = {{"point", p},
                                          {"direction", 0},
                                          {"seed", cfg.seed},
                                          {"f", detail::estimate_json(f)},
                                          {"grad", detail::estimate_json(g)},
                                          {"hess", detail::estimate_json(hs)}};
                    rows.push_back(row);
                    csv.row({format_full(p), format_full(f.value), format_full(f.std_error),
                             format_full(f.truncation_tail), format_full(g.value), format_full(g.std_error),
                             format_full(hs.value), format_full(hs.std_error)});
                }
            }
            nlohmann::json j = {{"rows", rows}, {"mu", mu.value}, {"mu_error", mu.error_estimate}};
            write_json(out / (cfg.command + "_summary.json"), j);
            std::cout << j.dump(2) << "\n";
            return cfg.command == "residual" ? (all_pass ? 0 : 1) : 0;
        }

        if (cfg.command == "pair-bound") {
            PairBatch batch;
            if (cfg.pair_kind == "clt") {
                const int n = static_cast<int>(std::lround(cfg.clt_n.front()));
                CounterRng rng(cfg.seed);
                std::vector<Mat> xs, xps;
                for (std::size_t b = 0; b < cfg.samples; ++b) {
                    Mat x(d, n), xp(d, n);
                    for (int i = 0; i < n; ++i)
                        for (int k = 0; k < d; ++k) {
                            x(k, i) = rng.uniform(b, rng_index(rng_tag::kSampling, 3,
                                                               static_cast<std::uint64_t>(i) * 8 + k)) < 0.5
                                          ? -1.0
                                          : 1.0;
                            xp(k, i) = rng.uniform(b, rng_index(rng_tag::kSampling, 4,
                                                                static_cast<std::uint64_t>(i) * 8 + k)) < 0.5
                                           ? -1.0
                                           : 1.0;
                        }
                    xs.push_back(std::move(x));
                    xps.push_back(std::move(xp));
                }
                batch = clt_pair(xs, xps, cfg.seed + 1);
            } else {
                auto draws = ula_stationary_draws(setup.model, setup.theta, cfg.pair_step, cfg.samples,
                                                  {.seed = cfg.seed});
                if (!draws.stationary) throw std::runtime_error("chain failed the stationarity check");
                batch = ula_pair(setup.model, cfg.pair_step, draws.samples, cfg.seed + 1);
            }
            if (cfg.pair_break) {
                // negative control: keep both marginals, destroy the coupling
                auto donor = batch.samples;
                for (std::size_t i = 0; i < batch.samples.size(); ++i) {
                    const auto& nxt = donor[(i + 1) % donor.size()];
                    batch.samples[i].w_prime = nxt.w_prime;
                    batch.samples[i].delta = nxt.w_prime - batch.samples[i].w;
                }
            }
            auto rep = bound_terms(batch, d);
            bool conforms = true;
            nlohmann::json diag_json;
            if (d <= 2 && cfg.pair_kind == "ula") {
                auto diag = regress_conditional_structure(batch, setup.model);
                conforms = diag.conforms;
                diag_json = {{"lambda_hat", diag.lambda_hat},
                             {"lambda_se", diag.lambda_se},
                             {"max_r1_z", diag.max_r1_z},
                             {"max_second_moment_z", diag.max_second_moment_z},
                             {"conforms", diag.conforms}};
            }
            CsvWriter csv(out / "pair_bound.csv", hash,
                          {"pair_kind", "step", "lambda", "term_delta3", "se_delta3", "term_r1", "se_r1",
                           "term_r2", "se_r2", "total"});
            csv.row({batch.kind, format_full(cfg.pair_step), format_full(batch.lambda),
                     format_full(rep.term_delta3), format_full(rep.se_delta3), format_full(rep.term_r1),
                     format_full(rep.se_r1), format_full(rep.term_r2), format_full(rep.se_r2),
                     format_full(rep.total)});
            nlohmann::json j = {{"pair_kind", batch.kind},
                                {"lambda", batch.lambda},
                                {"term_delta3", rep.term_delta3},
                                {"term_r1", rep.term_r1},
                                {"term_r2", rep.term_r2},
                                {"total", rep.total},
                                {"diagnostics", diag_json}};
            write_json(out / "pair_bound_summary.json", j);
            std::cout << j.dump(2) << "\n";
            return conforms ? 0 : 1;
        }

        if (cfg.command == "ula-scaling") {
            UlaScalingConfig ucfg;
            ucfg.steps = cfg.ula_steps;
            ucfg.n_samples = cfg.samples;
            ucfg.seeds = cfg.seeds;
            ucfg.seed = cfg.seed;
            auto res = ula_scaling(setup.model, setup.theta, ucfg);
            detail::write_scaling_csv(out / "ula_scaling.csv", hash, res);
            auto j = detail::scaling_summary_json(res);
            write_json(out / "ula_scaling_summary.json", j);
            std::cout << j.dump(2) << "\n";
            return res.summary.at("bound_dominates") == 1.0 ? 0 : 1;
        }

        if (cfg.command == "clt-rate") {
            CltRateConfig ccfg;
            ccfg.dist = cfg.clt_dist == "rademacher" ? CltDistribution::Rademacher
                                                     : CltDistribution::BoundedUniform;
            ccfg.dim = d;
            ccfg.n_grid.clear();
            for (double n : cfg.clt_n) ccfg.n_grid.push_back(static_cast<int>(std::lround(n)));
            ccfg.replicas = cfg.samples;
            ccfg.seeds = cfg.seeds;
            ccfg.seed = cfg.seed;
            auto res = clt_rate(ccfg);
            detail::write_scaling_csv(out / "clt_rate.csv", hash, res);
            auto j = detail::scaling_summary_json(res);
            write_json(out / "clt_rate_summary.json", j);
            std::cout << j.dump(2) << "\n";
            return 0;
        }

        if (cfg.command == "contraction") {
            auto cc = setup.model.kind == DriftKind::Linear
                          ? contraction_constants(setup.model)
                          : ContractionConstants{true, 0.0, std::sqrt(2.0 / setup.rate_c), setup.rate_c, {}};
            ContractionConfig ccfg;
            ccfg.x0 = cfg.x0.size() == d ? cfg.x0 : Vec::Constant(d, 3.0);
            ccfg.t_grid = cfg.contraction_t;
            ccfg.n_samples = cfg.samples;
            ccfg.seeds = cfg.seeds;
            ccfg.dt = cfg.dt;
            ccfg.seed = cfg.seed;
            auto res = contraction_decay(setup.model, setup.theta, cc, ccfg);
            detail::write_scaling_csv(out / "contraction.csv", hash, res);
            auto j = detail::scaling_summary_json(res);
            j["kappa"] = cc.kappa ? cc.kappa(1.0) : 0.0;
            j["r1"] = cc.r1;
            j["c"] = cc.c;
            write_json(out / "contraction_summary.json", j);
            std::cout << j.dump(2) << "\n";
            bool ok = res.summary.at("ergodic_inequality_holds") == 1.0 &&
                      res.summary.at("decay_rate") >= cc.c - 0.1;
            return ok ? 0 : 1;
        }

        if (cfg.command == "lemma-suite") {
            auto ledger = lemma_suite(setup.model, setup.theta, cfg.seed);
            nlohmann::json j = nlohmann::json::array();
            for (const auto& c : ledger.checks)
                j.push_back({{"name", c.name},
                             {"pass", c.pass},
                             {"statistic", c.statistic},
                             {"threshold", c.threshold}});
            write_json(out / "lemma_suite.json", j);
            std::cout << j.dump(2) << "\n";
            return ledger.all_pass() ? 0 : 1;
        }

        throw std::invalid_argument("unhandled command: " + cfg.command);
    } catch (const std::exception& e) {
        nlohmann::json err = {{"error", e.what()}, {"command", cfg.command}};
        write_json(out / "error.json", err);
        std::cerr << err.dump() << "\n";
        return 2;
    }
}

}  // namespace steinlab
