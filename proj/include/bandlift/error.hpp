#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bandlift {

enum class ErrorCode {
  MalformedContainer,
  UnsupportedEncoding,
  EmptyAudio,
  IoFailure,
  RateMismatch,
  NonInvertibleConfig,
  UnstableDesign,
  CutoffOutOfRange,
  SilentInput,
  ShapeMismatch,
  StepOutOfRange,
  DivergedTraining,
  InvalidArgument,
  CheckpointMismatch,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedContainer: return "MalformedContainer";
    case ErrorCode::UnsupportedEncoding: return "UnsupportedEncoding";
    case ErrorCode::EmptyAudio: return "EmptyAudio";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::RateMismatch: return "RateMismatch";
    case ErrorCode::NonInvertibleConfig: return "NonInvertibleConfig";
    case ErrorCode::UnstableDesign: return "UnstableDesign";
    case ErrorCode::CutoffOutOfRange: return "CutoffOutOfRange";
    case ErrorCode::SilentInput: return "SilentInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map them onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace bandlift
