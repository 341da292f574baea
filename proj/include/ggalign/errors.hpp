#pragma once

#include <stdexcept>
#include <string>

namespace ggalign {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension disagreement between operands.
struct ShapeError : Error {
    using Error::Error;
};

// Input that is structurally valid but numerically unusable
// (zero-norm vector, empty node set, covariance of a single row).
struct DegenerateInputError : Error {
    using Error::Error;
};

// Operation called in the wrong lifecycle phase
// (accumulate after finalize, finalize with no samples).
struct StateError : Error {
    using Error::Error;
};

// Non-finite value produced or supplied where finite math is required.
struct NumericError : Error {
    using Error::Error;
};

// Malformed configuration file or unknown key.
struct ConfigError : Error {
    ConfigError(const std::string& msg, int line = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
          line_number(line) {}
    int line_number;
};

}  // namespace ggalign
