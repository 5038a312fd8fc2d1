#pragma once

#include <stdexcept>
#include <string>

namespace jamlab {

/// Invalid or inconsistent run configuration. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure. Maps to CLI exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A persisted file whose header or size does not match what the reader expects.
class CorruptFileError : public IoError {
 public:
  using IoError::IoError;
};

/// Non-finite values where finite ones are required (e.g. training loss). Exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tone or carrier outside the representable band (-Fs/2, Fs/2).
class AliasingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace jamlab
