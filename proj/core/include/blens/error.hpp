#pragma once

#include <stdexcept>
#include <string>

namespace blens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A file on disk does not match the expected container layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument was violated (empty set, bad config, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or infinity.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace blens
