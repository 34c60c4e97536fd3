#pragma once

#include <stdexcept>
#include <string>

namespace nsg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument: mismatched dimensions, out-of-range parameters.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File I/O or on-disk format failure.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Numerical procedure failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace nsg
