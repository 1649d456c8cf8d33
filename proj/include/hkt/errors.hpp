#pragma once

#include <stdexcept>
#include <string>

namespace hkt {

/// Base type for every error this library raises on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or dimension disagreement between operands.
struct DimensionError : Error {
    using Error::Error;
};

/// Input values outside the accepted domain (labels, sizes, ...).
struct ValidationError : Error {
    using Error::Error;
};

/// API misuse: wrong call order, missing tape, missing grad.
struct UsageError : Error {
    using Error::Error;
};

/// An operation produced or met a non-finite value.
struct NumericError : Error {
    using Error::Error;
};

/// Bad configuration file, flag, or constraint violation.
struct ConfigError : Error {
    using Error::Error;
};

/// File system or stream failure.
struct IoError : Error {
    using Error::Error;
};

/// Checkpoint carries an unsupported format version.
struct CheckpointVersionError : IoError {
    using IoError::IoError;
};

/// Checkpoint file ends before the declared payload.
struct CheckpointTruncatedError : IoError {
    using IoError::IoError;
};

/// Checkpoint declares shapes that disagree with the stored data.
struct CheckpointShapeError : IoError {
    using IoError::IoError;
};

/// Training aborted; message carries the step and loss diagnostics.
struct TrainingError : Error {
    using Error::Error;
};

}  // namespace hkt
