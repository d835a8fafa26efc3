#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pharos {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed arguments: non-finite values, empty pools, zero label vectors.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Length / dimension disagreement between two operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Bad hyperparameters or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An operation refused because its input is outside a hard size guard.
class GuardError : public Error {
 public:
  using Error::Error;
};

// A computation produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Corrupt or truncated file. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace pharos
