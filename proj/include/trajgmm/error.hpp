#pragma once

#include <stdexcept>
#include <string>

namespace trajgmm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates an operation precondition (sizes, ranges, counts).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A linear system or factorization could not be completed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Fatal I/O or format problem (unreadable stream, malformed model file).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace trajgmm
