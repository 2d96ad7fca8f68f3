#include "steinlab/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

using namespace steinlab;

// Reference vectors from the Random123 distribution (philox4x32, 10 rounds).
TEST_CASE("philox4x32-10 known-answer vectors") {
    auto out0 = Philox4x32::block({0u, 0u, 0u, 0u}, {0u, 0u});
    CHECK(out0 == std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});

    auto out1 = Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                  {0xffffffffu, 0xffffffffu});
    CHECK(out1 == std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});

    auto out2 = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                  {0xa4093822u, 0x299f31d0u});
    CHECK(out2 == std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("counter rng is a pure function of (seed, indices)") {
    CounterRng r1(42), r2(42), r3(43);
    CHECK(r1.uniform(7, 9) == r2.uniform(7, 9));
    CHECK(r1.normal(1, 2) == r2.normal(1, 2));
    CHECK(r1.uniform(7, 9) != r3.uniform(7, 9));
    CHECK(r1.uniform(7, 9) != r1.uniform(9, 7));
}

TEST_CASE("uniforms live strictly inside (0,1)") {
    CounterRng r(123);
    for (std::uint64_t i = 0; i < 10000; ++i) {
        double u = r.uniform(0, i);
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("normal draws have sane first moments") {
    CounterRng r(2024);
    const std::size_t n = 200000;
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto [z1, z2] = r.normal_pair(i, 0);
        s += z1 + z2;
        s2 += z1 * z1 + z2 * z2;
    }
    double mean = s / (2.0 * n);
    double var = s2 / (2.0 * n) - mean * mean;
    CHECK(std::abs(mean) < 4.0 / std::sqrt(2.0 * n));
    CHECK(std::abs(var - 1.0) < 6.0 / std::sqrt(2.0 * n));
}

TEST_CASE("normal_vector fills odd dimensions deterministically") {
    CounterRng r(5);
    Vec a(3), b(3);
    r.normal_vector(11, 22, a);
    r.normal_vector(11, 22, b);
    CHECK(a == b);
    std::set<double> distinct(a.data(), a.data() + a.size());
    CHECK(distinct.size() == 3);
}
