#pragma once

#include <stdexcept>
#include <string>

namespace gtrans {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration: unknown keys, invalid ranges, malformed synthetic specs.
struct ConfigError : Error {
  using Error::Error;
};

// Bad data: missing dataset directories, corrupt samples, empty splits,
// unloadable or version-mismatched checkpoints.
struct DataError : Error {
  using Error::Error;
};

// Array shape mismatches between operands.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid numeric input to an operation (negative weights, degenerate images).
struct InvalidInputError : Error {
  using Error::Error;
};

// A metric is undefined for the given inputs (single-class labels, no anomalous
// pixels anywhere).
struct MetricError : Error {
  using Error::Error;
};

// Training produced a non-finite loss.
struct DivergedError : Error {
  explicit DivergedError(const std::string& msg, long long step = -1)
      : Error(msg), step(step) {}
  long long step;
};

}  // namespace gtrans
