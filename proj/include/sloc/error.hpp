#pragma once

#include <stdexcept>
#include <string>

namespace sloc {

enum class ErrorCode {
  invalid_spec,
  dimension_mismatch,
  singular_covariance,
  quadrature_dimension_too_high,
  non_normalizable,
  strategy_mismatch,
  covariance_floor_breach,
  quadrature_overflow,
  degenerate_cloud,
  insufficient_runs,
  inconsistent_time,
  kappa_estimation_failure,
  sample_budget_too_small,
  anisotropic_input,
  tensor_estimation_failure,
  rank_deficiency,
  miscentered_set,
  extrapolation_unstable,
  mass_too_large,
  lambda_out_of_range,
  conditioning_event_empty,
  grid_dimension_too_high,
  all_runs_excluded,
  unknown_key,
  type_mismatch,
  constraint_violation,
  io_error,
  unsupported,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_spec: return "invalid-spec";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::singular_covariance: return "singular-covariance";
    case ErrorCode::quadrature_dimension_too_high: return "quadrature-dimension-too-high";
    case ErrorCode::non_normalizable: return "non-normalizable";
    case ErrorCode::strategy_mismatch: return "strategy-mismatch";
    case ErrorCode::covariance_floor_breach: return "covariance-floor-breach";
    case ErrorCode::quadrature_overflow: return "quadrature-overflow";
    case ErrorCode::degenerate_cloud: return "degenerate-cloud";
    case ErrorCode::insufficient_runs: return "insufficient-runs";
    case ErrorCode::inconsistent_time: return "inconsistent-time";
    case ErrorCode::kappa_estimation_failure: return "kappa-estimation-failure";
    case ErrorCode::sample_budget_too_small: return "sample-budget-too-small";
    case ErrorCode::anisotropic_input: return "anisotropic-input";
    case ErrorCode::tensor_estimation_failure: return "tensor-estimation-failure";
    case ErrorCode::rank_deficiency: return "rank-deficiency";
    case ErrorCode::miscentered_set: return "miscentered-set";
    case ErrorCode::extrapolation_unstable: return "extrapolation-unstable";
    case ErrorCode::mass_too_large: return "mass-too-large";
    case ErrorCode::lambda_out_of_range: return "lambda-out-of-range";
    case ErrorCode::conditioning_event_empty: return "conditioning-event-empty";
    case ErrorCode::grid_dimension_too_high: return "grid-dimension-too-high";
    case ErrorCode::all_runs_excluded: return "all-runs-excluded";
    case ErrorCode::unknown_key: return "unknown-key";
    case ErrorCode::type_mismatch: return "type-mismatch";
    case ErrorCode::constraint_violation: return "constraint-violation";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::unsupported: return "unsupported";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace sloc
