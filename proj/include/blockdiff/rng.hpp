#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace blockdiff {

// Counter-based RNG (Philox 4x32-10, Salmon et al. SC'11). Stateless: every
// draw is a pure function of (seed, counter words), so any element of any run
// can be regenerated independently and runs are bit-reproducible.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::array<std::uint32_t, 4> block(std::uint32_t c0, std::uint32_t c1, std::uint32_t c2,
                                       std::uint32_t c3) const {
        std::uint32_t k0 = static_cast<std::uint32_t>(seed_ & 0xffffffffu);
        std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
        std::array<std::uint32_t, 4> ctr = {c0, c1, c2, c3};
        for (int round = 0; round < 10; ++round) {
            ctr = philox_round(ctr, k0, k1);
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        return ctr;
    }

    /// Uniform double in [0, 1) from the first two output words.
    double uniform(std::uint32_t c0, std::uint32_t c1, std::uint32_t c2, std::uint32_t c3) const {
        auto out = block(c0, c1, c2, c3);
        std::uint64_t r = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
        return static_cast<double>(r >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on one block.
    double normal(std::uint32_t c0, std::uint32_t c1, std::uint32_t c2, std::uint32_t c3) const {
        auto out = block(c0, c1, c2, c3);
        std::uint64_t ra = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
        std::uint64_t rb = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
        double u1 = (static_cast<double>(ra >> 11) + 0.5) * 0x1.0p-53;  // (0,1)
        double u2 = static_cast<double>(rb >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    static std::array<std::uint32_t, 4> philox_round(const std::array<std::uint32_t, 4>& c,
                                                     std::uint32_t k0, std::uint32_t k1) {
        auto mulhilo = [](std::uint32_t a, std::uint32_t b, std::uint32_t& hi) {
            std::uint64_t p = static_cast<std::uint64_t>(a) * b;
            hi = static_cast<std::uint32_t>(p >> 32);
            return static_cast<std::uint32_t>(p);
        };
        std::uint32_t hi0, hi1;
        std::uint32_t lo0 = mulhilo(0xD2511F53u, c[0], hi0);
        std::uint32_t lo1 = mulhilo(0xCD9E8D57u, c[2], hi1);
        return {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
    }

    std::uint64_t seed_;
};

/// Inverse-CDF draw from an (unnormalized is fine) nonnegative weight vector.
inline int sample_categorical(const std::vector<double>& probs, double u) {
    if (probs.empty()) throw std::invalid_argument("sample_categorical: empty distribution");
    double total = 0.0;
    for (double p : probs) total += p;
    double target = u * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (target < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

/// Counter purposes keep draw streams for distinct uses disjoint.
namespace rng_purpose {
constexpr std::uint32_t kElementNoise = 1;
constexpr std::uint32_t kTimeDraw = 2;
constexpr std::uint32_t kShuffle = 3;
constexpr std::uint32_t kParamInit = 4;
constexpr std::uint32_t kGenerate = 5;
constexpr std::uint32_t kDataset = 6;
constexpr std::uint32_t kTest = 7;
}  // namespace rng_purpose

}  // namespace blockdiff
