#pragma once

#include <stdexcept>
#include <string>

namespace petnas {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (bad model shape, unknown site name, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Tensor shape mismatch.
struct DimensionError : Error {
  using Error::Error;
};

// Bad external input (labels out of range, malformed files).
struct InputError : Error {
  using Error::Error;
};

// API misuse (backward on a non-scalar, evaluating an empty split).
struct UsageError : Error {
  using Error::Error;
};

struct InternalError : Error {
  using Error::Error;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
  DivergenceError(int step_index, const std::string& msg)
      : Error(msg), step(step_index) {}
  int step;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace petnas
