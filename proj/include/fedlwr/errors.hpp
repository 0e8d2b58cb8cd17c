#pragma once

#include <stdexcept>
#include <string>

namespace fedlwr {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/matrix shapes that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by (or fed into) a numeric operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A value outside an operation's domain (non-binary mask, n < 2, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class UnknownTopology : public Error {
 public:
  using Error::Error;
};

// Dataset file errors.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedlwr
