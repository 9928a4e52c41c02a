#include "evopose/error.hpp"

namespace evopose {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegeneratePose: return "DegeneratePose";
    case ErrorCode::InvalidBone: return "InvalidBone";
    case ErrorCode::DegenerateFrame: return "DegenerateFrame";
    case ErrorCode::ZeroBone: return "ZeroBone";
    case ErrorCode::InvalidTree: return "InvalidTree";
    case ErrorCode::EmptyPopulation: return "EmptyPopulation";
    case ErrorCode::InvalidCrossoverPoint: return "InvalidCrossoverPoint";
    case ErrorCode::FactorOutOfRange: return "FactorOutOfRange";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::NumericalDivergence: return "NumericalDivergence";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateAlignment: return "DegenerateAlignment";
    case ErrorCode::EmptyEval: return "EmptyEval";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::EmptyHistory: return "EmptyHistory";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

RecordError::RecordError(ErrorCode code, std::size_t record, const std::string& message)
    : Error(code, "record " + std::to_string(record) + ": " + message), record_(record) {}

}  // namespace evopose
