#pragma once

#include <stdexcept>
#include <string>

namespace ovd {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor dimension / rank mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Violated operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Mask with no valid entries where at least one is required.
class MaskError : public Error {
 public:
  using Error::Error;
};

// Requested more items than are available (slots, tokens, ...).
class CapacityError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by an exposed operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// File or parse failure, with location context where possible.
class IoError : public Error {
 public:
  using Error::Error;
};

// Scene synthesis could not satisfy a placement constraint.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// Evaluation protocol applied to an empty class split.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace ovd
