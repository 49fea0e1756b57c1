#pragma once

#include <stdexcept>
#include <string>

namespace nli {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer shape mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Bad input data: labels out of range, malformed lines, empty sequences.
struct DataError : Error {
    using Error::Error;
};

// Invalid configuration: bad rates, duplicate ids, unknown filters.
struct ConfigError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Structurally broken files (truncated checkpoint, bad magic).
struct FormatError : Error {
    using Error::Error;
};

// Checkpoint/vocabulary mismatch.
struct CompatibilityError : Error {
    using Error::Error;
};

}  // namespace nli
