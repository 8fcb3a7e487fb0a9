#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aggmarkov {

enum class ErrorCode {
  ShapeMismatch,
  ZeroRow,
  MassMismatch,
  EmptyInput,
  NonnegativityViolation,
  InfeasibleSupport,
  NonFinite,
  Infeasible,
  NotRankOne,
  InvalidTransition,
  MarginalMismatch,
  NegativeCount,
  Reducible,
  NotConverged,
  InsufficientPoints,
  NonPositiveError,
  InvalidArgument,
  Malformed,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::MassMismatch: return "MassMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NonnegativityViolation: return "NonnegativityViolation";
    case ErrorCode::InfeasibleSupport: return "InfeasibleSupport";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::NotRankOne: return "NotRankOne";
    case ErrorCode::InvalidTransition: return "InvalidTransition";
    case ErrorCode::MarginalMismatch: return "MarginalMismatch";
    case ErrorCode::NegativeCount: return "NegativeCount";
    case ErrorCode::Reducible: return "Reducible";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::NonPositiveError: return "NonPositiveError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Malformed: return "Malformed";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace aggmarkov
