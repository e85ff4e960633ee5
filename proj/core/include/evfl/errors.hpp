#pragma once

#include <stdexcept>
#include <string>

namespace evfl {

// Base type for every failure the library raises, so the CLI boundary can
// catch one thing and turn it into an exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand dimensions do not line up.
struct ShapeError : Error {
    using Error::Error;
};

// Numerically degenerate input: zero-norm vector, empty batch, all-zero prior.
struct DomainError : Error {
    using Error::Error;
};

// Malformed external data (CSV rows, state files).
struct IngestError : Error {
    using Error::Error;
};

// A scenario cannot be realised as requested (class deficits, bad splits).
struct ScenarioError : Error {
    using Error::Error;
};

// Invalid experiment configuration; message names the offending fields.
struct ConfigError : Error {
    using Error::Error;
};

// Byte stream too short or length prefix inconsistent with its payload.
struct FramingError : Error {
    using Error::Error;
};

// Structurally complete frame with contents the protocol forbids.
struct ProtocolError : Error {
    using Error::Error;
};

// The underlying channel failed to move bytes.
struct TransportError : Error {
    using Error::Error;
};

// Filesystem-level read or write failure.
struct IoError : Error {
    using Error::Error;
};

}  // namespace evfl
