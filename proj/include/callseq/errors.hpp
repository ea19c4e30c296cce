#pragma once

#include <stdexcept>
#include <string>

namespace callseq {

// Bad configuration, file format, or missing input. CLI maps this to exit 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor dimension mismatch or out-of-range index. CLI maps this to exit 2.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf where a finite value is required. CLI maps this to exit 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace callseq
