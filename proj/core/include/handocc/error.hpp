#pragma once

#include <stdexcept>
#include <string>

namespace handocc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. a non-scalar objective passed to grad_check.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Procrustes alignment on a degenerate point configuration.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Synthetic sample generation could not satisfy its configuration.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace handocc
