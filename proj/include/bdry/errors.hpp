#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bdry {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input does not match the shape or domain an operation expects.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed model, tensor or config file. Carries the byte offset where
/// decoding stopped (or 0 for text formats).
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Local linear model requested at a point lying on an activation facet.
class BoundaryPointError : public Error {
 public:
  using Error::Error;
};

/// Refinement asked to bisect between two points with the same label.
class SameLabelError : public Error {
 public:
  using Error::Error;
};

/// No decision boundary available (failed search, or none in the domain).
class NoBoundaryError : public Error {
 public:
  using Error::Error;
};

/// Brute-force geometry requested in too many input dimensions.
class ScaleError : public Error {
 public:
  using Error::Error;
};

/// A metric whose denominator vanishes on the given attribution map.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a formula.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Training produced non-finite loss or parameters.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace bdry
