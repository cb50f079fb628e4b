#pragma once

#include <stdexcept>
#include <string>

namespace gupdm {

// Tensor/operand shapes do not fit the operation.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A forward or backward pass produced NaN/Inf.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An API was called outside its contract (e.g. backward on a non-scalar).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File/stream level failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or unsupported file content.
struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gupdm
