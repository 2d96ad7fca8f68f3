#include "steinlab/wasserstein.hpp"

#include "steinlab/rng.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

using namespace steinlab;

namespace {

EmpiricalMeasure random_cloud(CounterRng& rng, std::uint64_t tag, int d, int n, double spread = 1.0) {
    Mat pts(d, n);
    Vec z(d);
    for (int i = 0; i < n; ++i) {
        rng.normal_vector(tag, static_cast<std::uint64_t>(i) * 4, z);
        pts.col(i) = spread * z;
    }
    return EmpiricalMeasure::uniform(std::move(pts));
}

std::vector<Vec> columns(const EmpiricalMeasure& m) {
    std::vector<Vec> out;
    for (int i = 0; i < m.size(); ++i) out.push_back(m.points.col(i));
    return out;
}

}  // namespace

TEST_CASE("point-mass transport") {
    EmpiricalMeasure p, q;
    p.points = Mat::Zero(1, 1);
    p.weights = Vec::Ones(1);
    q.points = Mat::Constant(1, 1, 1.0);
    q.weights = Vec::Ones(1);
    CHECK(w1_exact(p, q) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("two atoms onto one: uniform {0,2} vs delta_1") {
    EmpiricalMeasure p, q;
    p.points.resize(1, 2);
    p.points << 0.0, 2.0;
    p.weights = Vec::Constant(2, 0.5);
    q.points = Mat::Constant(1, 1, 1.0);
    q.weights = Vec::Ones(1);
    // Only one feasible plan: both half-masses travel distance 1.
    CHECK(w1_exact(p, q) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("solver matches permutation brute force on small instances") {
    CounterRng rng(404);
    for (int inst = 0; inst < 40; ++inst) {
        int n = 2 + static_cast<int>(rng.uniform(inst, 900) * 7);  // 2..8
        int d = 1 + static_cast<int>(rng.uniform(inst, 901) * 3);  // 1..3
        auto p = random_cloud(rng, 1000 + inst, d, n);
        auto q = random_cloud(rng, 2000 + inst, d, n, 1.5);
        double solver = w1_exact(p, q);
        double brute = oracles::w1_brute_force(columns(p), columns(q));
        REQUIRE(solver == Catch::Approx(brute).margin(1e-9));
    }
}

TEST_CASE("solver matches the 1-d sorted-coupling oracle") {
    CounterRng rng(405);
    for (int inst = 0; inst < 25; ++inst) {
        const int n = 100;
        auto p = random_cloud(rng, 3000 + inst, 1, n);
        auto q = random_cloud(rng, 4000 + inst, 1, n, 2.0);
        std::vector<double> a(n), b(n);
        for (int i = 0; i < n; ++i) {
            a[i] = p.points(0, i);
            b[i] = q.points(0, i);
        }
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        double sorted = 0;
        for (int i = 0; i < n; ++i) sorted += std::abs(a[i] - b[i]);
        sorted /= n;
        REQUIRE(w1_exact(p, q) == Catch::Approx(sorted).margin(1e-10));
    }
}

TEST_CASE("metric axioms on empirical measures") {
    CounterRng rng(406);
    auto p = random_cloud(rng, 1, 2, 40);
    auto q = random_cloud(rng, 2, 2, 40, 1.3);
    auto r = random_cloud(rng, 3, 2, 40, 0.8);
    double pq = w1_exact(p, q), qp = w1_exact(q, p);
    CHECK(pq == Catch::Approx(qp).margin(1e-12));
    CHECK(w1_exact(p, p) == 0.0);
    double pr = w1_exact(p, r), qr = w1_exact(q, r);
    CHECK(pq <= pr + qr + 1e-9);

    Vec shift(2);
    shift << 3.0, -2.0;
    CHECK(w1_exact(p.translated(shift), q.translated(shift)) == Catch::Approx(pq).margin(1e-12));
}

TEST_CASE("weighted atoms against uniform atoms") {
    // Binomial-style weighted source vs a uniform grid, checked against the
    // 1-d quantile-coupling integral.
    EmpiricalMeasure p;
    p.points.resize(1, 3);
    p.points << -1.0, 0.0, 1.0;
    p.weights.resize(3);
    p.weights << 0.25, 0.5, 0.25;
    const int n = 2000;
    auto q = gaussian_quantile_measure(n, 0.0, 1.0);
    auto quantile_p = [](double u) { return u < 0.25 ? -1.0 : (u < 0.75 ? 0.0 : 1.0); };
    auto quantile_q = [](double u) { return normal_quantile(u); };
    double oracle = oracles::w1_quantile_integral(quantile_p, quantile_q, 400000);
    CHECK(w1_exact(p, q) == Catch::Approx(oracle).margin(2e-3));
}

TEST_CASE("input validation") {
    EmpiricalMeasure p, q;
    p.points = Mat::Zero(1, 2);
    p.weights = Vec::Constant(2, 0.4);  // sums to 0.8
    q.points = Mat::Zero(1, 1);
    q.weights = Vec::Ones(1);
    CHECK_THROWS_AS(w1_exact(p, q), std::invalid_argument);
    p.weights = Vec::Constant(2, 0.5);
    q.points = Mat::Zero(2, 1);
    CHECK_THROWS_AS(w1_exact(p, q), std::invalid_argument);
}

TEST_CASE("gaussian isotropic closed form") {
    CHECK(w1_gaussian_isotropic(1.0, 1.0, 3) == 0.0);
    CHECK(w1_gaussian_isotropic(1.02598, 1.0, 1) == Catch::Approx(0.02598 * std::sqrt(2.0 / kPi)).epsilon(1e-9));
    CHECK(w1_gaussian_isotropic(2.0, 1.0, 2) == Catch::Approx(std::sqrt(kPi / 2.0)).epsilon(1e-12));
}

TEST_CASE("gaussian scaling coupling validated against the exact solver") {
    auto p = gaussian_quantile_measure(800, 0.0, 1.5);
    auto q = gaussian_quantile_measure(800, 0.0, 1.0);
    CHECK(w1_exact(p, q) == Catch::Approx(w1_gaussian_isotropic(1.5, 1.0, 1)).margin(4e-3));
}

TEST_CASE("lipschitz lower bound") {
    CounterRng rng(407);
    std::vector<TestFunction> probes = {h_coordinate(1, 0), h_abs(1), h_sin(1)};
    SECTION("identical measures give zero") {
        auto p = random_cloud(rng, 9, 1, 50);
        CHECK(w1_lip_lower_bound(p, p, probes) == 0.0);
    }
    SECTION("bounded by the exact distance on random instances") {
        for (int inst = 0; inst < 50; ++inst) {
            auto p = random_cloud(rng, 5000 + inst, 1, 30);
            auto q = random_cloud(rng, 6000 + inst, 1, 30, 1.4);
            REQUIRE(w1_lip_lower_bound(p, q, probes) <= w1_exact(p, q) + 1e-9);
        }
    }
    SECTION("linear probe is tight for shifted point masses") {
        EmpiricalMeasure p, q;
        p.points = Mat::Zero(1, 1);
        p.weights = Vec::Ones(1);
        q.points = Mat::Constant(1, 1, 1.0);
        q.weights = Vec::Ones(1);
        CHECK(w1_lip_lower_bound(p, q, {h_coordinate(1, 0)}) == Catch::Approx(1.0));
    }
    SECTION("non-Lipschitz probe rejected") {
        auto p = random_cloud(rng, 10, 1, 30, 2.0);
        TestFunction bad;
        bad.name = "steep";
        bad.eval = [](const Vec& x) { return 5.0 * x[0]; };
        bad.grad = [](const Vec&) { return Vec(Vec::Constant(1, 5.0)); };
        CHECK_THROWS_AS(w1_lip_lower_bound(p, p, {bad}), std::invalid_argument);
    }
}
