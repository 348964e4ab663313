// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace miml {

/// Root of every error raised by the library. Each subclass maps onto one
/// CLI exit code (see cli/commands.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Batch statistics cannot be formed (single element per channel).
class DegenerateStatisticsError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Name lookup failed (unknown task, missing parameter).
class LookupError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity reached a place that requires finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint and dataset (or config) describe different task sets.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FileNotFoundError : public IoError {
 public:
  using IoError::IoError;
};

/// Malformed binary container. `field()` names the part that failed to parse.
class FormatError : public IoError {
 public:
  FormatError(std::string field, const std::string& what)
      : IoError(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace miml
