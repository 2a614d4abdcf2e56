#pragma once

#include <stdexcept>
#include <string>

namespace aofd {

// Base of every error raised by the library. The three subclasses map onto
// the tool's exit codes (usage = 1, data = 2, invariant = 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (bad argument, bad config value).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Input data on disk is missing or malformed.
class DataError : public Error {
 public:
  using Error::Error;
};

// An internal invariant failed at runtime (e.g. a non-finite loss).
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace aofd
