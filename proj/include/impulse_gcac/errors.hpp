#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include <Eigen/Core>

namespace impulse_gcac {

/// Machine-readable failure categories. The CLI reports these verbatim.
enum class ErrorCode {
  invalid_argument,
  parse_error,
  dimension_mismatch,
  invariant_violation,
  rank_deficient,
  unreachable,
  horizon_exhausted,
  inapplicable,
  precondition,
  numerical_failure,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::invariant_violation: return "invariant_violation";
    case ErrorCode::rank_deficient: return "rank_deficient";
    case ErrorCode::unreachable: return "unreachable";
    case ErrorCode::horizon_exhausted: return "horizon_exhausted";
    case ErrorCode::inapplicable: return "inapplicable";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Thrown when a controllability rank test fails. Carries a unit vector
/// annihilated by every observation term, when one is available.
class RankDeficientError : public Error {
 public:
  RankDeficientError(const std::string& message, Eigen::VectorXd witness = {})
      : Error(ErrorCode::rank_deficient, message), witness_(std::move(witness)) {}

  const Eigen::VectorXd& witness() const noexcept { return witness_; }

 private:
  Eigen::VectorXd witness_;
};

/// Thrown when a horizon search runs out of impulses before the control bound
/// is met. `best_sup_norm` is the smallest max_j |u_j| seen during the search.
class HorizonExhaustedError : public Error {
 public:
  HorizonExhaustedError(const std::string& message, double best_sup_norm)
      : Error(ErrorCode::horizon_exhausted, message), best_sup_norm_(best_sup_norm) {}

  double best_sup_norm() const noexcept { return best_sup_norm_; }

 private:
  double best_sup_norm_;
};

}  // namespace impulse_gcac
