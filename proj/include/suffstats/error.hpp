#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace suffstats {

enum class ErrorCode {
  // validation / contract violations
  DimensionMismatch,
  NonPositiveWeight,
  NonIntegerFrequencyWeight,
  MissingValue,
  SchemaMismatch,
  UnavailableStatistic,
  MissingClusters,
  RaggedCluster,
  NonStaticColumn,
  NonBinaryOutcome,
  NotBalanced,
  InvalidArgument,
  // numerical failures
  RankDeficient,
  NonPositiveDF,
  DidNotConverge,
  // file I/O
  ParseError,
  MissingColumn,
};

/// Library-wide exception. `details()` carries structured payload where an
/// error names specific columns (RankDeficient, NonStaticColumn, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  Error(ErrorCode code, std::string message, std::vector<std::string> details)
      : std::runtime_error(std::move(message)),
        code_(code),
        details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::vector<std::string>& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  std::vector<std::string> details_;
};

/// Numerical failures map to a different CLI exit code than validation ones.
inline bool is_numerical_error(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::RankDeficient:
    case ErrorCode::NonPositiveDF:
    case ErrorCode::DidNotConverge:
      return true;
    default:
      return false;
  }
}

inline Error rank_deficient_error(std::vector<std::string> columns) {
  std::string msg = "rank-deficient design; collinear column set: {";
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) msg += ", ";
    msg += columns[i];
  }
  msg += "}";
  return Error(ErrorCode::RankDeficient, std::move(msg), std::move(columns));
}

}  // namespace suffstats
