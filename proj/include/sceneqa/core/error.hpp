#pragma once

#include <stdexcept>
#include <string>

namespace sceneqa {

// Shape/dimension violations (mismatched operands, bad extents).
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Out-of-range indices (token ids, row selections).
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Bad call arguments detected before any work runs.
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Inconsistent configuration, rejected at construction time.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A forward operation produced NaN/Inf; the message names the operation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or unreadable input data (files, schemas).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corrupt or truncated serialized payload (length/checksum mismatch).
struct IntegrityError : DataError {
    using DataError::DataError;
};

}  // namespace sceneqa
