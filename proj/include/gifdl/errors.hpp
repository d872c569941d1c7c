#pragma once

#include <stdexcept>
#include <string>

namespace gifdl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched image/grid dimensions.
struct ShapeError : Error {
    using Error::Error;
};

// Malformed file contents (PGM headers, manifests, checkpoints, ...).
struct ParseError : Error {
    using Error::Error;
};

// Input outside an operation's mathematical domain.
struct DomainError : Error {
    using Error::Error;
};

// Message does not fit the embedding capacity.
struct PayloadError : Error {
    using Error::Error;
};

// No admissible embedding exists (e.g. wet pixels block every path).
struct InfeasibleError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Non-finite values inside a network; carries the offending layer name.
struct NumericError : Error {
    using Error::Error;
};

struct EvalError : Error {
    using Error::Error;
};

// Generation backend failed; message echoes the request.
struct BackendError : Error {
    using Error::Error;
};

// Fluctuation build ran out of retries; carries how many members were accepted.
struct GenerationExhausted : Error {
    GenerationExhausted(const std::string& msg, int accepted_count)
        : Error(msg), accepted(accepted_count) {}
    int accepted;
};

}  // namespace gifdl
