#pragma once

#include <stdexcept>
#include <string>

namespace seqrisk {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system failures: missing files, unwritable paths, truncated archives.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A domain invariant was violated. The message names the offending field.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or unknown configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Undefined or non-finite numerical results (no events, NaN losses, failed factorizations).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace seqrisk
