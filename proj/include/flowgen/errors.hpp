#pragma once

#include <stdexcept>
#include <string>

namespace flowgen {

/// Base for every error raised by the library. The CLI maps each subclass
/// onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or parameter ranges.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss, gradient or parameter.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowgen
