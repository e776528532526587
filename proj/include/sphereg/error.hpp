#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sphereg {

enum class ErrorCode {
  NotARotation,
  BadFocal,
  NotUnit,
  ShapeMismatch,
  DegenerateRay,
  BadEnergy,
  SolveFailed,
  Diverged,
  EmptySpec,
  NoLandmarks,
  EmptyInput,
  InvalidConfig,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotARotation: return "NotARotation";
    case ErrorCode::BadFocal: return "BadFocal";
    case ErrorCode::NotUnit: return "NotUnit";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateRay: return "DegenerateRay";
    case ErrorCode::BadEnergy: return "BadEnergy";
    case ErrorCode::SolveFailed: return "SolveFailed";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::EmptySpec: return "EmptySpec";
    case ErrorCode::NoLandmarks: return "NoLandmarks";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
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

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace sphereg
