#pragma once

#include <stdexcept>
#include <string>

namespace sitehet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data or configuration. The CLI maps this to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

/// The data are valid but an estimator cannot be computed on them
/// (singular moment matrix, weak first stage, non-positive denominator).
/// The CLI maps this to exit code 3.
class EstimationError : public Error {
 public:
  using Error::Error;
};

}  // namespace sitehet
