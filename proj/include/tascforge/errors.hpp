#pragma once

#include <stdexcept>
#include <string>

namespace tascforge {

enum class ErrorCode {
  NotPositiveDefinite,
  SingularMatrix,
  ShapeMismatch,
  DimensionMismatch,
  InvalidConfig,
  SpaceTooLarge,
  EmptyCandidatePool,
  ArchitectureInfeasible,
  NonFiniteLoss,
  ZeroNormVector,
  LayerIneligible,
  InconsistentShapes,
  InsufficientDistinctFilters,
  GroupMismatch,
  WouldEmptyLayer,
  BadMagic,
  CountMismatch,
  TruncatedFile,
  ClassTooSmall,
  EmptyClass,
  InvalidArgument,
  IoError,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::SpaceTooLarge: return "SpaceTooLarge";
    case ErrorCode::EmptyCandidatePool: return "EmptyCandidatePool";
    case ErrorCode::ArchitectureInfeasible: return "ArchitectureInfeasible";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ZeroNormVector: return "ZeroNormVector";
    case ErrorCode::LayerIneligible: return "LayerIneligible";
    case ErrorCode::InconsistentShapes: return "InconsistentShapes";
    case ErrorCode::InsufficientDistinctFilters: return "InsufficientDistinctFilters";
    case ErrorCode::GroupMismatch: return "GroupMismatch";
    case ErrorCode::WouldEmptyLayer: return "WouldEmptyLayer";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

}  // namespace tascforge
