#pragma once

#include <stdexcept>
#include <string>

namespace relmap {

// Shape disagreement between tensors; message names both shapes.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration value (out-of-range hyperparameter, unknown key).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad runtime input (label out of range, empty list, ...).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation called in an invalid state (backward without forward, ...).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed on-disk data (IDX files, checkpoints).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace relmap
