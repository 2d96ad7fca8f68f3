// Counter-based random numbers (Philox4x32-10, Salmon et al. SC'11).
// Every draw is a pure function of (seed, stream, index), so replicas can be
// generated in any order or thread and still reproduce bit-for-bit.
#pragma once

#include "steinlab/common.hpp"

#include <array>
#include <cstdint>

namespace steinlab {

struct Philox4x32 {
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
            std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
            std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
            std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kW0;
            key[1] += kW1;
        }
        return ctr;
    }
};

// One logical stream of doubles keyed by a 64-bit seed; draws are addressed
// by two 64-bit indices (caller convention: a = replica, b = purpose/step).
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Derived generator with a statistically independent seed; used to give
    // cache nodes and experiment cells their own streams.
    CounterRng fork(std::uint64_t stream) const {
        auto r = raw(stream, 0x5eed5eed5eed5eedull);
        return CounterRng((static_cast<std::uint64_t>(r[0]) << 32) | r[1]);
    }

    std::array<std::uint32_t, 4> raw(std::uint64_t a, std::uint64_t b) const {
        std::array<std::uint32_t, 4> ctr = {
            static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
            static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
        std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                            static_cast<std::uint32_t>(seed_ >> 32)};
        return Philox4x32::block(ctr, key);
    }

    // Uniform on (0,1), open at both ends.
    double uniform(std::uint64_t a, std::uint64_t b) const {
        auto r = raw(a, b);
        std::uint64_t u = (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
        return (static_cast<double>(u >> 11) + 0.5) * 0x1.0p-53;
    }

    // Two independent standard normals from one block (Box-Muller).
    std::pair<double, double> normal_pair(std::uint64_t a, std::uint64_t b) const {
        auto r = raw(a, b);
        std::uint64_t w1 = (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
        std::uint64_t w2 = (static_cast<std::uint64_t>(r[2]) << 32) | r[3];
        double u1 = (static_cast<double>(w1 >> 11) + 0.5) * 0x1.0p-53;
        double u2 = (static_cast<double>(w2 >> 11) + 0.5) * 0x1.0p-53;
        double rad = std::sqrt(-2.0 * std::log(u1));
        double ang = 2.0 * kPi * u2;
        return {rad * std::cos(ang), rad * std::sin(ang)};
    }

    double normal(std::uint64_t a, std::uint64_t b) const { return normal_pair(a, b).first; }

    // Fills out with i.i.d. N(0,1); consumes ceil(d/2) blocks at (a, b + k).
    void normal_vector(std::uint64_t a, std::uint64_t b, Vec& out) const {
        const Eigen::Index d = out.size();
        for (Eigen::Index i = 0; i < d; i += 2) {
            auto [z1, z2] = normal_pair(a, b + static_cast<std::uint64_t>(i / 2));
            out[i] = z1;
            if (i + 1 < d) out[i + 1] = z2;
        }
    }

  private:
    std::uint64_t seed_;
};

// Tags keep unrelated draw purposes on disjoint counters within one seed.
namespace rng_tag {
constexpr std::uint64_t kBrownian = 1;
constexpr std::uint64_t kInitial = 2;
constexpr std::uint64_t kChain = 3;
constexpr std::uint64_t kPair = 4;
constexpr std::uint64_t kSampling = 5;
}  // namespace rng_tag

// b-index layout helper: (tag in top byte | sub in next 16 bits | index).
inline std::uint64_t rng_index(std::uint64_t tag, std::uint64_t sub, std::uint64_t idx) {
    return (tag << 56) | ((sub & 0xFFFFu) << 40) | (idx & 0xFFFFFFFFFFull);
}

}  // namespace steinlab
