#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace amcl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes, flags or hyperparameters that cannot work together.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied data (labels out of range, empty splits, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered in a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An operation was called in the wrong lifecycle phase.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Requested analysis is not defined for the trained method.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace amcl
