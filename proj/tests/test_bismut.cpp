#include "steinlab/bismut.hpp"

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

FlowBundle ou_bundle(std::uint64_t replica, const TimeGrid& grid, std::uint64_t seed = 101) {
    auto [model, th] = make_linear_model(Mat::Identity(1, 1));
    CounterRng rng(seed);
    auto noise = make_brownian_path(rng, replica, grid, 1);
    return make_flow_bundle(model, Vec::Ones(1), grid, noise, Vec::Ones(1), Vec::Ones(1),
                            {.malliavin = true});
}

}  // namespace

TEST_CASE("weight preconditions") {
    TimeGrid grid(1.0, 200);
    auto b = ou_bundle(0, grid);
    CHECK_THROWS_AS(weight_first(b, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(weight_first(b, 0.5), std::invalid_argument);  // horizon mismatch
    TimeGrid tiny(0.01, 2);
    auto btiny = ou_bundle(0, tiny);
    CHECK_THROWS_AS(weight_first(btiny, 0.01), std::invalid_argument);  // t < 4 dt
}

TEST_CASE("first weight: zero mean and Ito-isometry variance") {
    TimeGrid grid(1.0, 250);
    const std::size_t n = 20000;
    std::vector<double> iu(n);
    for (std::size_t r = 0; r < n; ++r) iu[r] = weight_first(ou_bundle(r, grid), 1.0);
    auto ms = mean_se(iu);
    CHECK(std::abs(ms.mean) <= 3.0 * ms.se);

    double var = 0;
    for (double v : iu) var += (v - ms.mean) * (v - ms.mean);
    var /= (n - 1);
    // (1/2t^2) int_0^t e^{-2s} ds
    double exact = (1.0 - std::exp(-2.0)) / 4.0;
    CHECK(std::abs(var - exact) <= 3.0 * exact * std::sqrt(2.0 / n) + 5.0 * grid.dt());
}

TEST_CASE("malliavin weight is deterministic for linear drift") {
    TimeGrid grid(1.0, 400);
    double exact = (1.0 - std::exp(-2.0)) / 4.0;
    for (std::uint64_t r = 0; r < 5; ++r) {
        double v = weight_malliavin(ou_bundle(r, grid), 1.0);
        REQUIRE(v == Catch::Approx(exact).margin(5.0 * grid.dt()));
    }
}

TEST_CASE("malliavin weight vanishes when u1 = 0") {
    auto [model, th] = make_linear_model(Mat::Identity(1, 1));
    TimeGrid grid(1.0, 200);
    CounterRng rng(7);
    auto noise = make_brownian_path(rng, 0, grid, 1);
    auto b = make_flow_bundle(model, Vec::Ones(1), grid, noise, Vec::Zero(1), Vec::Ones(1),
                              {.malliavin = true});
    CHECK(weight_first(b, 1.0) == 0.0);
    CHECK(weight_malliavin(b, 1.0) == 0.0);
}

TEST_CASE("second weight is the exact combination by construction") {
    TimeGrid grid(1.0, 200);
    auto b = ou_bundle(3, grid);
    auto w = compute_weights(b, 1.0);
    CHECK(w.i_u1_u2 == w.i_u1 * w.i_u2 - w.dv2_i_u1);
    CHECK(weight_second(b, 1.0) == w.i_u1_u2);
}

TEST_CASE("E[I_{u,u}] vanishes for the OU bundle") {
    TimeGrid grid(1.0, 250);
    const std::size_t n = 20000;
    std::vector<double> w2(n);
    for (std::size_t r = 0; r < n; ++r) w2[r] = weight_second(ou_bundle(r, grid), 1.0);
    auto ms = mean_se(w2);
    CHECK(std::abs(ms.mean) <= 3.0 * ms.se + 5.0 * grid.dt());
}

TEST_CASE("left-point Ito convention: midpoint variant differs by O(dt)") {
    auto [model, th] = make_linear_model(Mat::Identity(1, 1));
    auto gap = [&](int m) {
        TimeGrid grid(1.0, m);
        CounterRng rng(55);
        auto noise = make_brownian_path(rng, 0, grid, 1);
        auto b = make_flow_bundle(model, Vec::Ones(1), grid, noise, Vec::Ones(1), Vec(), {});
        double left = weight_first(b, 1.0);
        KahanSum mid;
        for (int k = 0; k < m; ++k)
            mid.add(0.5 * (b.var1.col(k) + b.var1.col(k + 1)).dot(b.noise.increments.col(k)));
        return std::abs(left - mid.value() / kSqrt2);
    };
    double g1 = gap(128), g2 = gap(512);
    CHECK(g2 < g1);  // refinement shrinks the convention gap
    CHECK(g1 < 0.05);
}

TEST_CASE("weight moment scaling in t (small-dissipation linear model)") {
    auto [model, th] = make_linear_model(0.05 * Mat::Identity(1, 1));
    McOptions opt;
    opt.replicas = 20000;
    opt.seed = 17;
    auto ms = weight_moment_scaling(model, Vec::Zero(1), Vec::Ones(1), Vec::Ones(1),
                                    {0.25, 0.5, 1.0, 2.0, 4.0}, 1.0 / 128.0, opt);
    CHECK(ms.fit_i.slope == Catch::Approx(-0.5).margin(0.15));
    CHECK(ms.fit_dvi.slope == Catch::Approx(-1.0).margin(0.15));
    CHECK(ms.fit_i2.slope == Catch::Approx(-1.0).margin(0.15));
}

TEST_CASE("integration by parts, deterministic direction and zero drift") {
    auto model = zero_drift(2);
    Vec a(2);
    a << 0.7, -0.2;
    Vec u(2);
    u << 1.0, 0.5;
    McOptions opt;
    opt.replicas = 5000;
    opt.seed = 23;
    TimeGrid grid(1.0, 100);
    auto chk = verify_ibp(model, Vec::Zero(2), grid, h_linear(a), u, opt);
    CHECK(chk.lhs == Catch::Approx(a.dot(u)).margin(1e-12));  // deterministic side
    CHECK(chk.pass);
}

TEST_CASE("integration by parts on OU models") {
    McOptions opt;
    opt.replicas = 20000;
    opt.seed = 29;
    TimeGrid grid(1.0, 250);
    SECTION("d=2, h = x1") {
        auto [model, th] = make_linear_model(Mat::Identity(2, 2));
        Vec x0(2);
        x0 << 1.0, 0.0;
        auto chk = verify_ibp(model, x0, grid, h_coordinate(2, 0), Vec::Unit(2, 0), opt);
        CHECK(chk.pass);
        CHECK(chk.lhs == Catch::Approx(std::exp(-1.0)).margin(0.02));
    }
    SECTION("d=1, h = x^2 (product-rule consequence)") {
        auto [model, th] = make_linear_model(Mat::Identity(1, 1));
        auto chk = verify_ibp(model, Vec::Ones(1), grid, h_square(1), Vec::Ones(1), opt);
        CHECK(chk.pass);
    }
    SECTION("replica floor enforced") {
        auto [model, th] = make_linear_model(Mat::Identity(1, 1));
        McOptions low;
        low.replicas = 10;
        CHECK_THROWS_AS(verify_ibp(model, Vec::Ones(1), grid, h_square(1), Vec::Ones(1), low),
                        std::invalid_argument);
    }
}

TEST_CASE("Bismut-Elworthy-Li against finite differences") {
    McOptions opt;
    opt.replicas = 20000;
    opt.seed = 37;
    TimeGrid grid(1.0, 250);
    auto [model, th] = make_linear_model(Mat::Identity(1, 1));
    SECTION("constant h gives zero on both sides") {
        auto chk = verify_bel(model, Vec::Ones(1), grid, h_constant(1, 3.0), Vec::Ones(1), 1e-3, opt);
        CHECK(chk.fd_value == 0.0);
        CHECK(std::abs(chk.bismut_value) <= 3.0 * chk.bismut_se);
    }
    SECTION("h = x recovers exp(-t)") {
        auto chk = verify_bel(model, Vec::Ones(1), grid, h_coordinate(1, 0), Vec::Ones(1), 1e-3, opt);
        CHECK(chk.identity.pass);
        CHECK(chk.fd_value == Catch::Approx(std::exp(-1.0)).margin(0.01));
        CHECK(chk.bismut_value == Catch::Approx(std::exp(-1.0)).margin(0.02));
    }
    SECTION("fd_eps outside [1e-4, 1e-2] rejected") {
        CHECK_THROWS_AS(verify_bel(model, Vec::Ones(1), grid, h_coordinate(1, 0), Vec::Ones(1), 0.5, opt),
                        std::invalid_argument);
    }
}

TEST_CASE("second-order Bismut identity for h = x^2") {
    McOptions opt;
    opt.replicas = 20000;
    opt.seed = 41;
    TimeGrid grid(1.0, 250);
    auto [model, th] = make_linear_model(Mat::Identity(1, 1));
    auto chk = verify_second_order_identity(model, Vec::Ones(1), grid, h_square(1), Vec::Ones(1),
                                            Vec::Ones(1), opt);
    CHECK(chk.pass);
    // Closed form of both sides: E[2 X_t e^{-t} I] = 2 e^{-2t}.
    CHECK(chk.lhs == Catch::Approx(2.0 * std::exp(-2.0)).margin(0.03));
}

TEST_CASE("gradient bound |grad_u E h(X_t)| <= |grad h| |u|") {
    auto [model, th] = make_power_model(1.0, 2.0, 2);
    TimeGrid grid(1.0, 200);
    CounterRng rng(43);
    auto h = h_sin(2);
    Vec u(2);
    u << 0.6, -0.8;
    const std::size_t n = 10000;
    std::vector<double> dirs(n);
    for (std::size_t r = 0; r < n; ++r) {
        auto noise = make_brownian_path(rng, r, grid, 2);
        Mat state = simulate_state(model, Vec::Ones(2), grid, noise);
        Mat var1 = simulate_variation1(model, state, u, grid);
        dirs[r] = h.grad(state.col(grid.steps)).dot(var1.col(grid.steps));
    }
    auto ms = mean_se(dirs);
    CHECK(std::abs(ms.mean) <= h.lip_bound * u.norm() + 3.0 * ms.se);
}
