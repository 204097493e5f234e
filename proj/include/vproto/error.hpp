#ifndef VPROTO_ERROR_HPP
#define VPROTO_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace vproto {

enum class ErrorCode {
  ZeroRow,
  InvalidTemperature,
  DimensionMismatch,
  NonFiniteEvaluation,
  ConfigInvalid,
  NotUnit,
  SpanViolation,
  NormBoundViolated,
  LabelOutOfRange,
  DivergenceDetected,
  NoDescentDirection,
  ShapeMismatch,
  UnknownClass,
  InvalidThreshold,
  EmptyMask,
  InsufficientData,
  ConfigParse,
  Io,
  Format,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::InvalidTemperature: return "InvalidTemperature";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::NotUnit: return "NotUnit";
    case ErrorCode::SpanViolation: return "SpanViolation";
    case ErrorCode::NormBoundViolated: return "NormBoundViolated";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::NoDescentDirection: return "NoDescentDirection";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::InvalidThreshold: return "InvalidThreshold";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ConfigParse: return "ConfigParse";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message is prefixed with the code name so CLI reports stay greppable.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace vproto

#endif  // VPROTO_ERROR_HPP
