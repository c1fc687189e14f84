#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dancemeld {

// Every failure surfaced by the library carries one of these kinds so the
// CLI and the HTTP layer can map it to an exit status / response code.
enum class ErrorKind {
  DegenerateRotation,
  NotARotation,
  SequenceTooShort,
  FormatError,
  IoError,
  InvalidTempo,
  BadLength,
  DimMismatch,
  LengthMismatch,
  ShapeMismatch,
  DivergenceDetected,
  InvalidSteps,
  StepOutOfRange,
  InvalidStepCount,
  TooFewSamples,
  NoMusicBeats,
  IndexOutOfRange,
  RatioViolation,
  InvalidArgument,
  ClipTooShort,
  InvariantViolation,
  NotFound,
  ModelsNotLoaded,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateRotation: return "DegenerateRotation";
    case ErrorKind::NotARotation: return "NotARotation";
    case ErrorKind::SequenceTooShort: return "SequenceTooShort";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidTempo: return "InvalidTempo";
    case ErrorKind::BadLength: return "BadLength";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::InvalidSteps: return "InvalidSteps";
    case ErrorKind::StepOutOfRange: return "StepOutOfRange";
    case ErrorKind::InvalidStepCount: return "InvalidStepCount";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::NoMusicBeats: return "NoMusicBeats";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::RatioViolation: return "RatioViolation";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ClipTooShort: return "ClipTooShort";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::ModelsNotLoaded: return "ModelsNotLoaded";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view name() const noexcept { return to_string(kind_); }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

#define DM_THROW_IF(cond, kind, msg)                        \
  do {                                                      \
    if (cond) {                                             \
      throw ::dancemeld::Error(::dancemeld::ErrorKind::kind, (msg)); \
    }                                                       \
  } while (false)

}  // namespace dancemeld
