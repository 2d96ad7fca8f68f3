#include "steinlab/exchangeable.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace steinlab;

namespace {

DriftModel zero_drift(int d) {
    DriftModel m;
    m.dim = d;
    m.name = "zero";
    m.drift = [](const Vec&, Vec& out) { out.setZero(); };
    m.jacobian_action = [](const Vec&, const Vec&, Vec& out) { out.setZero(); };
    m.hessian_action = [](const Vec&, const Vec&, const Vec&, Vec& out) { out.setZero(); };
    return m;
}

Mat rademacher_dataset(CounterRng& rng, std::uint64_t tag, int d, int n) {
    Mat x(d, n);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k)
            x(k, i) = rng.uniform(tag, static_cast<std::uint64_t>(i) * 8 + k) < 0.5 ? -1.0 : 1.0;
    return x;
}

}  // namespace

TEST_CASE("ula chain reaches the known stationary law") {
    auto [model, theta] = make_linear_model(Mat::Identity(1, 1));
    double s = 0.1;
    auto draws = ula_stationary_draws(model, theta, s, 20000, {.seed = 3});
    CHECK(draws.stationary);
    double var = draws.samples.row(0).array().square().mean();
    double exact = 1.0 / (1.0 - s / 2.0);
    CHECK(var == Catch::Approx(exact).epsilon(0.05));
    CHECK_THROWS_AS(ula_stationary_draws(model, theta, 0.5, 100), std::invalid_argument);
}

TEST_CASE("ula pair conditional structure") {
    auto [model, theta] = make_linear_model(Mat::Identity(1, 1));
    const double s = 0.05;
    auto draws = ula_stationary_draws(model, theta, s, 20000, {.seed = 5});
    auto batch = ula_pair(model, s, draws.samples, 7);

    SECTION("regression recovers lambda = s with flat residual field") {
        auto diag = regress_conditional_structure(batch, model);
        CHECK(diag.lambda_hat == Catch::Approx(s).margin(3.0 * diag.lambda_se + 1e-12));
        CHECK(diag.lambda_matches);
        CHECK(diag.max_r1_z < 5.0);
        CHECK(diag.conforms);
        for (double z : diag.exchangeability_z) REQUIRE(std::abs(z) < 4.0);
    }
    SECTION("conditional second moment: delta^2 - 2s - s^2 g^2 centers at zero") {
        std::vector<double> resid(batch.samples.size());
        Vec g(1);
        for (std::size_t i = 0; i < batch.samples.size(); ++i) {
            model.drift(batch.samples[i].w, g);
            double d2 = batch.samples[i].delta[0] * batch.samples[i].delta[0];
            resid[i] = d2 - 2.0 * s - s * s * g[0] * g[0];
        }
        auto ms = mean_se(resid);
        CHECK(std::abs(ms.mean) <= 3.0 * ms.se);
    }
    SECTION("rank-1 factors reconstruct the analytic R2 exactly") {
        Vec g(1);
        for (const auto& ps : batch.samples) {
            model.drift(ps.w, g);
            REQUIRE(ps.r2_factors.size() == 1);
            Mat rec = ps.r2_factors[0].first * ps.r2_factors[0].second.transpose();
            Mat full = 0.5 * s * g * g.transpose();
            REQUIRE((rec - full).norm() <= 1e-14 * (1.0 + full.norm()));
        }
    }
    SECTION("step size at or above 1/e is rejected") {
        CHECK_THROWS_AS(ula_pair(model, 0.4, draws.samples), std::invalid_argument);
    }
}

TEST_CASE("pure diffusion pair has no R2 term") {
    auto model = zero_drift(1);
    Mat w = Mat::Zero(1, 2000);
    auto batch = ula_pair(model, 0.1, w, 11);
    auto rep = bound_terms(batch, 1);
    CHECK(rep.term_r2 == 0.0);
    CHECK(rep.term_r1 == 0.0);
    CHECK(rep.term_delta3 > 0.0);
}

TEST_CASE("clt pair enumeration oracles") {
    SECTION("n=2, d=2 Rademacher: E[delta|X] = -W/n by exhaustive enumeration") {
        Mat x(2, 2);
        x << 1.0, -1.0, 1.0, 1.0;  // realized sample, columns are X_1, X_2
        const double root_n = std::sqrt(2.0);
        Vec w = x.rowwise().sum() / root_n;
        Vec mean_delta = Vec::Zero(2);
        int outcomes = 0;
        for (int idx = 0; idx < 2; ++idx)
            for (int b0 = -1; b0 <= 1; b0 += 2)
                for (int b1 = -1; b1 <= 1; b1 += 2) {
                    Vec xprime(2);
                    xprime << b0, b1;
                    mean_delta += (xprime - x.col(idx)) / root_n;
                    ++outcomes;
                }
        mean_delta /= outcomes;
        REQUIRE((mean_delta + w / 2.0).norm() < 1e-14);
    }
    SECTION("n=3, d=1 signs: E[delta^2|X] = 2 lambda (1 + R2) exactly") {
        Vec x(3);
        x << 1.0, -1.0, 1.0;
        const double root_n = std::sqrt(3.0);
        double mean_d2 = 0;
        int outcomes = 0;
        for (int idx = 0; idx < 3; ++idx)
            for (int b = -1; b <= 1; b += 2) {
                double delta = (b - x[idx]) / root_n;
                mean_d2 += delta * delta;
                ++outcomes;
            }
        mean_d2 /= outcomes;
        double lambda = 1.0 / 3.0;
        double r2 = 0.5 * (x.squaredNorm() / 3.0 - 1.0);  // = 0 for signs
        REQUIRE(r2 == 0.0);
        REQUIRE(mean_d2 == Catch::Approx(2.0 * lambda * (1.0 + r2)).margin(1e-14));
    }
    SECTION("sampled pairs agree: diagonal of R2 vanishes for signs") {
        CounterRng rng(13);
        std::vector<Mat> xs, xps;
        for (int b = 0; b < 2000; ++b) {
            xs.push_back(rademacher_dataset(rng, 100 + b, 2, 8));
            xps.push_back(rademacher_dataset(rng, 5000 + b, 2, 8));
        }
        auto batch = clt_pair(xs, xps, 17);
        CHECK(batch.lambda == Catch::Approx(1.0 / 8.0));
        for (const auto& ps : batch.samples) {
            REQUIRE(std::abs(ps.r2_full(0, 0)) < 1e-14);
            REQUIRE(std::abs(ps.r2_full(1, 1)) < 1e-14);
        }
        std::vector<double> anti(batch.samples.size());
        for (std::size_t i = 0; i < batch.samples.size(); ++i)
            anti[i] = batch.samples[i].w[0] - batch.samples[i].w_prime[0];
        auto ms = mean_se(anti);
        CHECK(std::abs(ms.mean) <= 3.0 * ms.se);
    }
}

TEST_CASE("bound terms") {
    SECTION("all-zero deltas contribute nothing (removable singularity)") {
        CHECK(cubed_log_factor(0.0) == 0.0);
        auto model = zero_drift(1);
        PairBatch batch;
        batch.kind = "degenerate";
        batch.lambda = 1.0;
        batch.dim = 1;
        batch.r2_mode = R2Mode::AnalyticRank1;
        for (int i = 0; i < 10; ++i) {
            PairSample ps;
            ps.w = Vec::Zero(1);
            ps.w_prime = Vec::Zero(1);
            ps.delta = Vec::Zero(1);
            batch.samples.push_back(ps);
        }
        auto rep = bound_terms(batch, 1);
        CHECK(rep.term_delta3 == 0.0);
        CHECK(rep.total == 0.0);
    }
    SECTION("unit jump with lambda = 1: the log factor clamps to 1") {
        PairBatch batch;
        batch.lambda = 1.0;
        batch.dim = 1;
        batch.r2_mode = R2Mode::AnalyticRank1;
        PairSample ps;
        ps.w = Vec::Zero(1);
        ps.w_prime = Vec::Ones(1);
        ps.delta = Vec::Ones(1);
        batch.samples.push_back(ps);
        auto rep = bound_terms(batch, 1);
        CHECK(rep.term_delta3 == Catch::Approx(1.0));
    }
    SECTION("delta3 term scales like sqrt(s) once the log factor is removed") {
        auto [model, theta] = make_linear_model(Mat::Identity(1, 1));
        std::vector<double> svals = {0.2, 0.1, 0.05, 0.025};
        std::vector<double> stripped;
        for (std::size_t si = 0; si < svals.size(); ++si) {
            double s = svals[si];
            auto draws = ula_stationary_draws(model, theta, s, 20000, {.seed = 19 + si});
            auto batch = ula_pair(model, s, draws.samples, 23 + si);
            std::vector<double> d3(batch.samples.size());
            for (std::size_t i = 0; i < batch.samples.size(); ++i) {
                double nd = batch.samples[i].delta.norm();
                d3[i] = nd * nd * nd / s;
            }
            stripped.push_back(mean_se(d3).mean);
        }
        auto fit = fit_loglog(svals, stripped);
        CHECK(fit.slope == Catch::Approx(0.5).margin(0.1));
    }
}

TEST_CASE("broken pair is flagged as non-conforming") {
    auto [model, theta] = make_linear_model(Mat::Identity(1, 1));
    const double s = 0.05;
    auto draws = ula_stationary_draws(model, theta, s, 20000, {.seed = 29});
    auto batch = ula_pair(model, s, draws.samples, 31);
    // Destroy the coupling but keep both marginals: shift W' by one sample.
    auto broken = batch;
    for (std::size_t i = 0; i < broken.samples.size(); ++i) {
        const auto& donor = batch.samples[(i + 1) % batch.samples.size()];
        broken.samples[i].w_prime = donor.w_prime;
        broken.samples[i].delta = donor.w_prime - broken.samples[i].w;
    }
    auto diag = regress_conditional_structure(broken, model);
    for (double z : diag.exchangeability_z) CHECK(std::abs(z) < 4.0);  // marginals intact
    CHECK_FALSE(diag.lambda_matches);
    CHECK_FALSE(diag.conforms);

    auto good = regress_conditional_structure(batch, model);
    CHECK(good.conforms);
}
