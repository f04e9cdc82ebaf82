// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every clipforge module.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace clipforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation precondition (non-scalar backward root, unnormalized embeddings, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed user input: bad token rows, empty class lists, impossible metric pairs.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A value outside its permitted range (e.g. schedule step past the end).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// A named parameter whose shape disagrees with the model configuration or a checkpoint.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or unrecognized file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File ended early or length prefixes disagree; carries the byte offset of the fault.
class CorruptionError : public FormatError {
 public:
  CorruptionError(const std::string& what, std::uint64_t offset)
      : FormatError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Training cannot continue: loss scale underflow or a non-finite loss at the scale floor.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error("config field '" + field + "': " + what), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace clipforge
