#pragma once

#include <stdexcept>
#include <string>

namespace giram {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or a precondition on counts/sizes that cannot hold.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-range input data (CSV rows, ids, snapshot files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or other numeric breakdowns during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace giram
