#pragma once

#include <bit>
#include <cstdint>
#include <string>

#include "evfl/matrix.hpp"
#include "evfl/mlp.hpp"
#include "evfl/priors.hpp"

namespace evfl {

// FNV-1a over parameter bytes; doubles hashed by their IEEE bit patterns so
// two digests match only on bitwise-equal state.
struct Fnv1a {
    std::uint64_t h = 1469598103934665603ULL;

    void byte(std::uint8_t b) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) byte(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
    void real(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void mat(const Matrix& m) {
        u64(m.rows());
        u64(m.cols());
        for (double v : m.data()) real(v);
    }
    void mlp(const MlpParams& p) {
        u64(p.layers.size());
        for (const MlpLayer& layer : p.layers) {
            mat(layer.weight);
            u64(layer.bias.size());
            for (double v : layer.bias) real(v);
            u64(layer.act == Activation::relu ? 1 : 0);
        }
    }
    void prior(const PriorVector& p) {
        u64(p.classes());
        for (double v : p.p) real(v);
    }
    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        for (int i = 0; i < 16; ++i)
            out[static_cast<std::size_t>(i)] = digits[(h >> (60 - 4 * i)) & 0xF];
        return out;
    }
};

}  // namespace evfl
