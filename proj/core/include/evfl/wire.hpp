#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "evfl/matrix.hpp"

namespace evfl {

// Coordinator -> party: current prototypes (classes x dim) and the global
// class prior (classes x 1).
struct ProtoDown {
    std::uint32_t round = 0;
    Matrix prototypes;
    Matrix global_prior;
};

// Party -> coordinator: refreshed aligned representations (rows x dim) and
// the locally estimated prior (classes x 1).
struct ReprUp {
    std::uint32_t round = 0;
    std::uint32_t party_id = 0;
    Matrix aligned_reps;
    Matrix local_prior;
};

using RoundMessage = std::variant<ProtoDown, ReprUp>;

inline constexpr std::uint8_t kTagProtoDown = 1;
inline constexpr std::uint8_t kTagReprUp = 2;

// Frame layout: u32 payload length, u8 tag, payload. Payload: u32 round,
// u32 party id (0 in ProtoDown), then each matrix as u32 rows, u32 cols,
// row-major doubles. All integers and doubles little-endian.
std::vector<std::uint8_t> encode_message(const RoundMessage& message);

struct DecodeResult {
    RoundMessage message;
    std::size_t consumed = 0;  // frame bytes eaten; trailing input is untouched
};
DecodeResult decode_message(const std::uint8_t* data, std::size_t size);
DecodeResult decode_message(const std::vector<std::uint8_t>& bytes);

std::size_t frame_size_proto_down(std::size_t classes, std::size_t dim);
std::size_t frame_size_repr_up(std::size_t rows, std::size_t dim, std::size_t classes);

}  // namespace evfl
