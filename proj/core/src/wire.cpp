#include "evfl/wire.hpp"

#include <bit>
#include <cstring>
#include <limits>
#include <string>

#include "evfl/errors.hpp"

namespace evfl {

namespace {

constexpr std::size_t kHeaderBytes = 5;   // u32 length + u8 tag
constexpr std::size_t kPayloadLead = 8;   // u32 round + u32 party id
constexpr std::size_t kMatrixLead = 8;    // u32 rows + u32 cols

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint32_t>::max())
        throw DomainError(std::string("encode_message: ") + what +
                          " exceeds 32-bit count");
    return static_cast<std::uint32_t>(v);
}

void put_matrix(std::vector<std::uint8_t>& out, const Matrix& m, const char* what) {
    put_u32(out, checked_u32(m.rows(), what));
    put_u32(out, checked_u32(m.cols(), what));
    const double* p = m.data().data();
    std::size_t n = m.rows() * m.cols();
    for (std::size_t i = 0; i < n; ++i) put_f64(out, p[i]);
}

std::size_t matrix_bytes(std::size_t rows, std::size_t cols) {
    return kMatrixLead + 8 * rows * cols;
}

struct Reader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos = 0;

    std::uint32_t u32(const char* what) {
        if (pos + 4 > size)
            throw FramingError(std::string("decode_message: truncated ") + what);
        std::uint32_t v = static_cast<std::uint32_t>(data[pos]) |
                          static_cast<std::uint32_t>(data[pos + 1]) << 8 |
                          static_cast<std::uint32_t>(data[pos + 2]) << 16 |
                          static_cast<std::uint32_t>(data[pos + 3]) << 24;
        pos += 4;
        return v;
    }

    double f64() {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(data[pos + static_cast<std::size_t>(i)])
                    << (8 * i);
        pos += 8;
        return std::bit_cast<double>(bits);
    }

    Matrix matrix(const char* what) {
        std::uint64_t rows = u32(what);
        std::uint64_t cols = u32(what);
        std::uint64_t cells = rows * cols;  // both < 2^32, product < 2^64
        if (cells > (size - pos) / 8)
            throw FramingError(std::string("decode_message: truncated ") + what);
        Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
        double* p = m.data().data();
        for (std::uint64_t i = 0; i < cells; ++i) p[i] = f64();
        return m;
    }
};

void require_prior(const Matrix& prior, const char* what) {
    if (prior.cols() != 1 || prior.rows() == 0)
        throw ProtocolError(std::string("decode_message: ") + what +
                            " prior must be a nonempty column");
}

}  // namespace

std::size_t frame_size_proto_down(std::size_t classes, std::size_t dim) {
    return kHeaderBytes + kPayloadLead + matrix_bytes(classes, dim) +
           matrix_bytes(classes, 1);
}

std::size_t frame_size_repr_up(std::size_t rows, std::size_t dim, std::size_t classes) {
    return kHeaderBytes + kPayloadLead + matrix_bytes(rows, dim) +
           matrix_bytes(classes, 1);
}

std::vector<std::uint8_t> encode_message(const RoundMessage& message) {
    std::vector<std::uint8_t> payload;
    std::uint8_t tag = 0;
    if (const ProtoDown* down = std::get_if<ProtoDown>(&message)) {
        if (down->global_prior.cols() != 1)
            throw ShapeError("encode_message: global prior must be a column");
        if (down->prototypes.rows() != down->global_prior.rows())
            throw ShapeError("encode_message: one prior entry per prototype required");
        tag = kTagProtoDown;
        put_u32(payload, down->round);
        put_u32(payload, 0);
        put_matrix(payload, down->prototypes, "prototype matrix");
        put_matrix(payload, down->global_prior, "global prior");
    } else {
        const ReprUp& up = std::get<ReprUp>(message);
        if (up.local_prior.cols() != 1)
            throw ShapeError("encode_message: local prior must be a column");
        tag = kTagReprUp;
        put_u32(payload, up.round);
        put_u32(payload, up.party_id);
        put_matrix(payload, up.aligned_reps, "representation matrix");
        put_matrix(payload, up.local_prior, "local prior");
    }
    checked_u32(payload.size(), "payload length");
    std::vector<std::uint8_t> frame;
    frame.reserve(kHeaderBytes + payload.size());
    put_u32(frame, static_cast<std::uint32_t>(payload.size()));
    frame.push_back(tag);
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

DecodeResult decode_message(const std::uint8_t* data, std::size_t size) {
    if (size < kHeaderBytes)
        throw FramingError("decode_message: truncated frame header");
    Reader header{data, size};
    std::uint32_t payload_len = header.u32("frame header");
    std::uint8_t tag = data[4];
    std::size_t frame_len = kHeaderBytes + payload_len;
    if (size < frame_len)
        throw FramingError("decode_message: frame shorter than its declared length");
    if (tag != kTagProtoDown && tag != kTagReprUp)
        throw ProtocolError("decode_message: unknown variant tag " +
                            std::to_string(static_cast<int>(tag)));

    Reader body{data + kHeaderBytes, payload_len};
    std::uint32_t round = body.u32("round");
    std::uint32_t party = body.u32("party id");
    DecodeResult out;
    if (tag == kTagProtoDown) {
        if (party != 0)
            throw ProtocolError("decode_message: ProtoDown carries party id " +
                                std::to_string(party) + ", expected 0");
        ProtoDown down;
        down.round = round;
        down.prototypes = body.matrix("prototype matrix");
        down.global_prior = body.matrix("global prior");
        require_prior(down.global_prior, "ProtoDown");
        if (down.prototypes.rows() != down.global_prior.rows())
            throw ProtocolError(
                "decode_message: prototype count and prior length differ");
        out.message = std::move(down);
    } else {
        ReprUp up;
        up.round = round;
        up.party_id = party;
        up.aligned_reps = body.matrix("representation matrix");
        up.local_prior = body.matrix("local prior");
        require_prior(up.local_prior, "ReprUp");
        out.message = std::move(up);
    }
    if (body.pos != payload_len)
        throw FramingError("decode_message: payload length disagrees with content");
    out.consumed = frame_len;
    return out;
}

DecodeResult decode_message(const std::vector<std::uint8_t>& bytes) {
    return decode_message(bytes.data(), bytes.size());
}

}  // namespace evfl
