#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace overhmm {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  NumericalFailure,
  InfeasibleBound,
  BoundaryDensity,
  LabelOutOfRange,
  EmptyTrace,
  NoSuchModel,
  ConfigError,
  IoError,
  PoorMixing,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::InfeasibleBound: return "InfeasibleBound";
    case ErrorCode::BoundaryDensity: return "BoundaryDensity";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyTrace: return "EmptyTrace";
    case ErrorCode::NoSuchModel: return "NoSuchModel";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::PoorMixing: return "PoorMixing";
  }
  return "Unknown";
}

// Every failure raised by the library carries one of the codes above so the
// CLI can emit a machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Takes the message by reference to its original type so a string literal is
// only turned into a std::string when the check fails.
template <typename Message>
inline void require(bool condition, ErrorCode code, const Message& what) {
  if (!condition) throw Error(code, std::string(what));
}

}  // namespace overhmm
