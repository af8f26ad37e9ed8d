#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lrinfer {

enum class ErrorCode {
  EmptyRow,
  EmptyColumn,
  ShapeMismatch,
  NonFinite,
  InvalidArgument,
  OutOfRange,
  DidNotConverge,
  RankDeficient,
  SingularDesign,
  TooFewPeriods,
  ZeroMatrix,
  AllCandidatesFailed,
  McUnstable,
  ParseError,
  DuplicateCell,
  MixedTreatmentSchema,
  Io,
};

/// Errors caused by malformed or degenerate input data, as opposed to
/// numerical breakdown of an otherwise valid problem.
enum class ErrorCategory { Data, Numerical };

inline std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyRow: return "EmptyRow";
    case ErrorCode::EmptyColumn: return "EmptyColumn";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::DidNotConverge: return "DidNotConverge";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::TooFewPeriods: return "TooFewPeriods";
    case ErrorCode::ZeroMatrix: return "ZeroMatrix";
    case ErrorCode::AllCandidatesFailed: return "AllCandidatesFailed";
    case ErrorCode::McUnstable: return "McUnstable";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateCell: return "DuplicateCell";
    case ErrorCode::MixedTreatmentSchema: return "MixedTreatmentSchema";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

inline ErrorCategory error_category(ErrorCode code) {
  switch (code) {
    case ErrorCode::DidNotConverge:
    case ErrorCode::RankDeficient:
    case ErrorCode::SingularDesign:
    case ErrorCode::ZeroMatrix:
    case ErrorCode::AllCandidatesFailed:
    case ErrorCode::McUnstable:
    case ErrorCode::NonFinite:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

/// Base exception for everything the library reports. `index()` carries the
/// offending row, column, period or line when one exists.
class Error : public std::runtime_error {
 public:
  static constexpr std::ptrdiff_t kNoIndex = -1;

  Error(ErrorCode code, const std::string& what, std::ptrdiff_t index = kNoIndex)
      : std::runtime_error(std::string(error_name(code)) + ": " + what),
        code_(code),
        index_(index),
        message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return error_category(code_); }
  std::ptrdiff_t index() const noexcept { return index_; }
  /// The description without the error-name prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::ptrdiff_t index_;
  std::string message_;
};

namespace detail {

inline void require(bool cond, ErrorCode code, const std::string& what,
                    std::ptrdiff_t index = Error::kNoIndex) {
  if (!cond) throw Error(code, what, index);
}

}  // namespace detail

}  // namespace lrinfer
