#pragma once

#include <stdexcept>
#include <string>

namespace textnas {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or configuration dimensions.
struct DimensionError : Error {
  using Error::Error;
};

/// Invalid hyper-parameter or argument value.
struct ParameterError : Error {
  using Error::Error;
};

/// API misuse: second backward, missing gradients, empty inputs.
struct UsageError : Error {
  using Error::Error;
};

/// Malformed or out-of-range input data.
struct DataError : Error {
  using Error::Error;
};

/// Malformed file contents (parse errors carry a line number).
struct FormatError : Error {
  using Error::Error;
};

/// A computation would exceed a caller-supplied cap.
struct ResourceError : Error {
  using Error::Error;
};

/// NaN or Inf produced by an operation.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace textnas
