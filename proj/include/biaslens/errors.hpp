#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace biaslens {

/// Base for every failure caused by bad input (shapes, arguments, file contents).
/// The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ArgumentError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Raised when an estimator has no meaningful value for the input (zero variance, empty denominators).
class DegenerateInputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Operation called out of order, e.g. backward() without a cached forward pass.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed binary file. Carries the byte offset at which decoding failed.
class FormatError : public ValidationError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : ValidationError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Filesystem failures. The CLI maps these to exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace biaslens
