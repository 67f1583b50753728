#pragma once

#include <stdexcept>
#include <string>

namespace sintra {

/// Base class for every error the library throws.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unusable input data (bad MIDI bytes, unseen pitch groups, short segments).
class DataError : public Error {
public:
  using Error::Error;
};

/// MIDI byte-level parse failure. Carries the offending byte offset.
class ParseError : public DataError {
public:
  ParseError(const std::string& what, std::size_t offset)
      : DataError(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

/// NaN/Inf in activations, gradients, or losses.
class NumericError : public Error {
public:
  using Error::Error;
};

/// API misuse (shape mismatch, backward twice, bad arguments).
class UsageError : public Error {
public:
  using Error::Error;
};

}  // namespace sintra
