#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evopose {

enum class ErrorCode {
  DegeneratePose,
  InvalidBone,
  DegenerateFrame,
  ZeroBone,
  InvalidTree,
  EmptyPopulation,
  InvalidCrossoverPoint,
  FactorOutOfRange,
  InvalidConfig,
  BehindCamera,
  BatchTooSmall,
  NumericalDivergence,
  InvalidInput,
  ShapeMismatch,
  DegenerateAlignment,
  EmptyEval,
  BadMagic,
  VersionMismatch,
  TruncatedFile,
  InvariantViolation,
  IoError,
  NotFound,
  EmptyHistory,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every module reports failures through this type; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Error raised by the file readers when a record breaks a domain invariant.
class RecordError : public Error {
 public:
  RecordError(ErrorCode code, std::size_t record, const std::string& message);

  std::size_t record() const noexcept { return record_; }

 private:
  std::size_t record_;
};

}  // namespace evopose
