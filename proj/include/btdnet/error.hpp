#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace btdnet {

enum class ErrorCode {
  kMissingModality,
  kCorruptSlice,
  kManifestMismatch,
  kEmptyVolume,
  kDegenerateRegion,
  kVolumeTooLong,
  kInvalidParameter,
  kShapeMismatch,
  kInvalidLength,
  kNonFiniteInput,
  kInsufficientClass,
  kEmptyFold,
  kCheckpointMismatch,
  kEmptyInput,
  kIoError,
  kConfigError,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingModality: return "MissingModality";
    case ErrorCode::kCorruptSlice: return "CorruptSlice";
    case ErrorCode::kManifestMismatch: return "ManifestMismatch";
    case ErrorCode::kEmptyVolume: return "EmptyVolume";
    case ErrorCode::kDegenerateRegion: return "DegenerateRegion";
    case ErrorCode::kVolumeTooLong: return "VolumeTooLong";
    case ErrorCode::kInvalidParameter: return "InvalidParameter";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kInvalidLength: return "InvalidLength";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kInsufficientClass: return "InsufficientClass";
    case ErrorCode::kEmptyFold: return "EmptyFold";
    case ErrorCode::kCheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message is prefixed with the code name so CLI output is greppable.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace btdnet
