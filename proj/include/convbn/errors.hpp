// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace convbn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible or malformed tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Arithmetic outside the operation's domain (division by zero, rsqrt of x <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed CBNT container.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Operation not valid for the block or graph mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

/// Graph JSON that violates the cbn-graph/1 schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Bad user input (label range, missing tensors, bad flags).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Batch statistics requested over too few elements.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace convbn
