#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace evfl {

// Deterministic random source. mt19937_64 supplies raw bits; every
// distribution mapping is implemented here rather than with <random>
// distribution objects, whose output is implementation-defined. Two builds on
// different standard libraries therefore draw identical streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    double gaussian(double mean, double stddev);

    // Unbiased draw from [0, n); n must be positive.
    std::size_t index(std::size_t n);

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = index(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Splitmix-style finalizer used to derive independent seed streams from one
// master seed plus a stream tag; avoids correlated mt19937 seedings.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

// Four-part derivation: (tag, round) then (party, epoch). The federation and
// the centralized baselines must agree on this so their batch streams line up.
inline std::uint64_t chain_seed(std::uint64_t master, std::uint64_t tag,
                                std::uint64_t round, std::uint64_t a = 0,
                                std::uint64_t b = 0) {
    return derive_seed(derive_seed(master, tag, round), a, b);
}

// Stream tags. Values are part of the reproducibility contract: changing them
// changes every seeded draw in the simulator.
namespace seed_tag {
inline constexpr std::uint64_t kSynth = 0x01;
inline constexpr std::uint64_t kTestSplit = 0x02;
inline constexpr std::uint64_t kAlignedSplit = 0x03;
inline constexpr std::uint64_t kImbalance = 0x04;
inline constexpr std::uint64_t kMajorityPick = 0x05;
inline constexpr std::uint64_t kExtractorInit = 0x10;
inline constexpr std::uint64_t kClassifierInit = 0x11;
inline constexpr std::uint64_t kAdaptorInit = 0x12;
inline constexpr std::uint64_t kPrototypeInit = 0x13;
inline constexpr std::uint64_t kLocalBatch = 0x20;
inline constexpr std::uint64_t kHeadBatch = 0x21;
inline constexpr std::uint64_t kNoiseRepr = 0x30;
inline constexpr std::uint64_t kNoiseProto = 0x31;
inline constexpr std::uint64_t kScenario = 0x40;
}  // namespace seed_tag

}  // namespace evfl
