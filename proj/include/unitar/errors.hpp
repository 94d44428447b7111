// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace unitar {

// Decode failure in a binary or text artifact; offset is the byte position
// at which the input stopped making sense.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, size_t offset)
      : std::runtime_error(msg + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  size_t offset() const { return offset_; }

 private:
  size_t offset_;
};

// Scheme-spec string rejected; offset is the byte position of the offending
// character.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, size_t offset)
      : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  size_t offset() const { return offset_; }

 private:
  size_t offset_;
};

// File could not be opened, read, or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A well-formedness invariant of a data structure does not hold
// (ownership overlap/gap, shape drift, corrupted sequence).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an ordering or state-machine contract.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Components wired together with incompatible roles/directions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite value where one is forbidden.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A training run left its sane operating region.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace unitar
