#pragma once

#include <stdexcept>
#include <string>

namespace milseg {

// Shape/axis mismatch between tensors or between a tensor and a layer.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (rates, sizes, fold counts, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse (backward on a non-scalar, stepping without gradients, ...).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad input data (labels out of range, empty bags, ...).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File I/O and parse failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint-specific load failures, kept distinct so callers can tell
// a wrong file from a damaged one.
struct CheckpointMagicError : IoError {
  using IoError::IoError;
};
struct CheckpointTruncatedError : IoError {
  using IoError::IoError;
};
struct CheckpointCorruptError : IoError {
  using IoError::IoError;
};

}  // namespace milseg
