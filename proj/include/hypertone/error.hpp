#pragma once

#include <stdexcept>
#include <string>

namespace hypertone {

// Error classes map one-to-one onto CLI exit codes (see tools/hypertone.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition: bad shapes, short audio, missing conditioning.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Unsupported or malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class RateMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IntegrityError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Non-finite values in training, modulation, or the streaming engine.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Attempt to update parameters that have been frozen.
class FrozenError : public Error {
 public:
  using Error::Error;
};

[[noreturn]] inline void contract_fail(const std::string& what) { throw ContractError(what); }

inline void require(bool ok, const char* what) {
  if (!ok) throw ContractError(what);
}

}  // namespace hypertone
