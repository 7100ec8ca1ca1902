#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "engine.hpp"
#include "report.hpp"

namespace sloc {

struct XiTensor {
  int n = 0;
  std::vector<Vec> xi;  // row-major n x n
  Mat basis;            // columns v_1..v_n
  double t = std::numeric_limits<double>::quiet_NaN();

  const Vec& operator()(int i, int j) const { return xi[static_cast<std::size_t>(i * n + j)]; }
};

// Eigenbasis of the companion matrix (descending, deterministic signs).
inline Mat companion_basis(const StepRecord& r) { return sym_eigen(r.atilde()).vectors; }

inline void check_orthonormal(const Mat& basis, int n) {
  if (basis.rows() != n || basis.cols() != n) throw Error(ErrorCode::dimension_mismatch, "basis has wrong shape");
  if ((basis.transpose() * basis - Mat::Identity(n, n)).cwiseAbs().maxCoeff() > 1e-8)
    throw Error(ErrorCode::constraint_violation, "basis is not orthonormal");
}

// xi_ij = T(v_i, v_j, .) for the third-moment tensor of the whitened measure.
inline XiTensor xi_vectors(const Tensor3& T, const Mat& basis, double t = std::numeric_limits<double>::quiet_NaN()) {
  const int n = T.n;
  check_orthonormal(basis, n);
  XiTensor out{n, {}, basis, t};
  out.xi.reserve(static_cast<std::size_t>(n) * n);
  std::vector<Mat> slices;
  for (int i = 0; i < n; ++i) slices.push_back(T.contract(basis.col(i)));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.xi.push_back(slices[i] * basis.col(j));
  return out;
}

inline XiTensor xi_vectors(const WeightedView& m, const Vec& a, const Mat& A, const Mat& basis,
                           double t = std::numeric_limits<double>::quiet_NaN()) {
  Vec ev = sym_eigenvalues(A);
  if (!(ev(ev.size() - 1) > 1e-12 * ev(0)))
    throw Error(ErrorCode::covariance_floor_breach, "cannot whiten a singular covariance");
  if (!(m.weights.maxCoeff() > 0)) throw Error(ErrorCode::degenerate_cloud, "no positive weights");
  return xi_vectors(third_moments(whiten(*m.points, a, A), m.weights), basis, t);
}

struct FourthMoments {
  Vec values;  // E<y, v_i>^4
  double t = std::numeric_limits<double>::quiet_NaN();
};

inline FourthMoments directional_fourth_moments(const WeightedView& m, const Vec& a, const Mat& A, const Mat& basis,
                                                double t = std::numeric_limits<double>::quiet_NaN()) {
  Mat proj = basis.transpose() * whiten(*m.points, a, A);
  FourthMoments f{Vec(basis.cols()), t};
  for (Eigen::Index i = 0; i < basis.cols(); ++i) f.values(i) = proj.row(i).array().pow(4).matrix().dot(m.weights);
  return f;
}

// |xi_ii| <= sqrt(E<y,v_i>^4) and the row-sum / Hilbert-Schmidt identity.
inline CheckReport check_xi_bounds(const XiTensor& xi, const FourthMoments& fourth, const Tensor3* T = nullptr) {
  const bool both_nan = std::isnan(xi.t) && std::isnan(fourth.t);
  if (!both_nan && !(std::abs(xi.t - fourth.t) <= 1e-12))
    throw Error(ErrorCode::inconsistent_time, "xi and fourth moments come from different times");
  if (fourth.values.size() != xi.n) throw Error(ErrorCode::dimension_mismatch, "fourth moments have wrong size");
  CheckReport r;
  r.name = "xi_bounds";
  bool ok = true;
  double worst = 0;
  Json rows = Json::array();
  for (int i = 0; i < xi.n; ++i) {
    double lhs = xi(i, i).norm();
    double rhs = std::sqrt(fourth.values(i));
    ok = ok && lhs <= rhs * (1 + 1e-9) + 1e-12;
    worst = std::max(worst, lhs / rhs);
    double row = 0;
    for (int j = 0; j < xi.n; ++j) row += xi(i, j).squaredNorm();
    Json e{{"i", i}, {"xi_ii", lhs}, {"sqrt_fourth", rhs}, {"row_sum", row}};
    if (T) {
      double hs = T->contract(xi.basis.col(i)).squaredNorm();
      e["hs_squared"] = hs;
      e["identity_error"] = std::abs(row - hs);
    }
    rows.push_back(e);
  }
  r.statistic = worst;
  r.status = verdict(ok);
  r.details["rows"] = rows;
  return r;
}

// Value of a per-record statistic on a run, frozen after the run stops.
template <class F>
std::vector<std::vector<double>> aligned_series(const std::vector<Trajectory>& runs, std::size_t steps, F&& stat) {
  std::vector<std::vector<double>> out(steps, std::vector<double>(runs.size()));
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& recs = runs[r].records;
    for (std::size_t k = 0; k < steps; ++k) out[k][r] = stat(recs[std::min(k, recs.size() - 1)]);
  }
  return out;
}

inline void require_runs(const std::vector<Trajectory>& runs, std::size_t minimum) {
  if (runs.size() < minimum)
    throw Error(ErrorCode::insufficient_runs,
                "need at least " + std::to_string(minimum) + " runs, got " + std::to_string(runs.size()));
}

inline double trace_power(const Mat& m, int p) {
  Vec ev = sym_eigenvalues(m);
  return ev.array().pow(p).sum();
}

// Across-run mean of Tr(Atilde_t) equals n at every record time.
inline CheckReport trace_identity_check(const std::vector<Trajectory>& runs, double stderr_floor_fraction = 1e-2) {
  require_runs(runs, 30);
  const int n = runs.front().dim();
  std::vector<double> t = record_times(runs);
  auto tr = aligned_series(runs, t.size(), [](const StepRecord& r) { return r.atilde().trace(); });
  auto trA = aligned_series(runs, t.size(), [](const StepRecord& r) { return r.A.trace(); });
  CheckReport rep;
  rep.name = "trace_identity";
  bool ok = true;
  double worst = 0;
  Json series = Json::array();
  for (std::size_t k = 0; k < t.size(); ++k) {
    double m = stats::mean(tr[k]);
    double se = std::max(stats::stderr_of_mean(tr[k]), stderr_floor_fraction * n);
    double z = std::abs(m - n) / se;
    ok = ok && z <= 3;
    worst = std::max(worst, z);
    series.push_back({{"t", t[k]}, {"mean_trace_atilde", m}, {"stderr", stats::stderr_of_mean(tr[k])},
                      {"mean_trace_a", stats::mean(trA[k])}});
  }
  rep.statistic = worst;  // largest |mean - n| in (floored) standard errors
  rep.status = verdict(ok);
  rep.details["n"] = n;
  rep.details["runs"] = runs.size();
  rep.details["series"] = series;
  return rep;
}

// Drift of S_t = Tr(Atilde_t^p) from across-run averaged increments,
// against p^2 kappa^2 S_t. kappa comes from the records or a fixed value.
inline CheckReport trace_power_drift(const std::vector<Trajectory>& runs, int p,
                                     std::optional<double> fixed_kappa = std::nullopt, double tol = 0.1,
                                     std::uint64_t seed = 1) {
  require_runs(runs, 30);
  if (p < 1) throw Error(ErrorCode::constraint_violation, "p must be positive");
  std::vector<double> t = record_times(runs);
  if (t.size() < 2) throw Error(ErrorCode::insufficient_runs, "need at least two record times");
  auto S = aligned_series(runs, t.size(), [p](const StepRecord& r) { return trace_power(r.atilde(), p); });
  auto K2S = aligned_series(runs, t.size(), [&](const StepRecord& r) {
    double k = fixed_kappa ? *fixed_kappa : r.kappa;
    if (std::isnan(k)) throw Error(ErrorCode::kappa_estimation_failure, "records carry no kappa");
    return k * k * trace_power(r.atilde(), p);
  });
  CheckReport rep;
  rep.name = "trace_power_drift";
  Json series = Json::array();
  int violations = 0;
  double worst = -INFINITY;
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    double dt = t[k + 1] - t[k];
    std::vector<double> inc(runs.size());
    for (std::size_t r = 0; r < runs.size(); ++r) inc[r] = (S[k + 1][r] - S[k][r]) / dt;
    double drift = stats::mean(inc);
    double se = stats::stderr_of_mean(inc);
    stats::Interval ci = stats::bootstrap_mean_ci(inc, 200, 0.95, derive_seed(seed, k));
    double half = 0.5 * (ci.hi - ci.lo);
    double bound = p * p * stats::mean(K2S[k]);
    bool point_ok;
    if (p == 1) {
      point_ok = std::abs(drift) <= std::max(half, 3 * se) + 1e-12;
      worst = std::max(worst, std::abs(drift) / std::max(se, 1e-300));
    } else {
      point_ok = drift - half <= bound * (1 + tol) + 1e-12;
      if (bound > 0) worst = std::max(worst, (drift - half) / bound);
    }
    violations += !point_ok;
    series.push_back({{"t", t[k]}, {"drift", drift}, {"ci", {ci.lo, ci.hi}}, {"stderr", se}, {"bound", bound},
                      {"ok", point_ok}});
  }
  const std::size_t points = t.size() - 1;
  double frac = static_cast<double>(violations) / static_cast<double>(points);
  rep.statistic = worst;
  rep.status = verdict(p == 1 ? frac <= 0.05 : violations == 0);
  rep.details["p"] = p;
  rep.details["violation_fraction"] = frac;
  rep.details["series"] = series;
  return rep;
}

// 99th percentile of ||A_t||_OP across runs, exponential fit, and a
// monotone-decay check after the burn-in (reported, not asserted).
inline CheckReport opnorm_envelope(const std::vector<Trajectory>& runs, std::optional<double> burn_in = std::nullopt,
                                   double kappa = 1.0) {
  require_runs(runs, 30);
  const int n = runs.front().dim();
  double t0 = burn_in.value_or(1.0 / (std::pow(std::max(kappa, 1.0), 2) * std::log(std::max(n, 2))));
  std::vector<double> t = record_times(runs);
  auto op = aligned_series(runs, t.size(), [](const StepRecord& r) { return op_norm_sym(r.A); });
  std::vector<double> env(t.size()), ft, flog;
  for (std::size_t k = 0; k < t.size(); ++k) {
    env[k] = stats::quantile(op[k], 0.99);
    if (t[k] >= t0 && env[k] > 0) {
      ft.push_back(t[k]);
      flog.push_back(std::log(env[k]));
    }
  }
  int steps = 0, down = 0;
  for (std::size_t k = 1; k < t.size(); ++k)
    if (t[k - 1] >= t0) {
      ++steps;
      down += env[k] <= env[k - 1];
    }
  CheckReport rep;
  rep.name = "opnorm_envelope";
  rep.statistic = ft.size() >= 2 ? -stats::ols_slope(ft, flog) : std::nan("");  // decay rate
  rep.status = Status::report;
  rep.details["burn_in"] = t0;
  rep.details["decreasing_fraction"] = steps ? static_cast<double>(down) / steps : 1.0;
  rep.details["monotone_after_burn_in"] = steps == 0 || down >= 0.95 * steps;
  Json series = Json::array();
  for (std::size_t k = 0; k < t.size(); ++k) series.push_back({{"t", t[k]}, {"p99_opnorm", env[k]}});
  rep.details["series"] = series;
  return rep;
}

// Atilde_t - A_t is positive semidefinite at every record.
inline bool companion_dominates(const Trajectory& tr, double tol = 1e-12) {
  for (const auto& r : tr.records)
    if (lambda_min(r.int_A) < -tol) return false;
  return true;
}

// ||A_t - e^{-t} Id||_OP e^{t}: the max over runs and records, or with
// ensemble_mean the max over records of the error of the across-run mean A_t
// (particle clouds, whose per-run A_t carries importance-sampling noise).
inline CheckReport gaussian_closed_form_check(const std::vector<Trajectory>& runs, double tol,
                                              bool ensemble_mean = false) {
  if (runs.empty()) throw Error(ErrorCode::insufficient_runs, "no runs");
  CheckReport rep;
  rep.name = "gaussian_closed_form";
  auto err = [](const Mat& A, double t) {
    return op_norm_sym(A - std::exp(-t) * Mat::Identity(A.rows(), A.cols())) * std::exp(t);
  };
  double worst = 0, worst_t = 0;
  std::vector<double> per_run;
  for (const auto& run : runs) {
    double w = 0;
    for (const auto& r : run.records) {
      double e = err(r.A, r.t);
      w = std::max(w, e);
      if (e > worst) {
        worst = e;
        worst_t = r.t;
      }
    }
    per_run.push_back(w);
  }
  rep.details["per_run_worst"] = worst;
  rep.details["per_run_median"] = stats::median(per_run);
  if (ensemble_mean) {
    std::size_t steps = runs.front().records.size();
    for (const auto& run : runs) steps = std::min(steps, run.records.size());
    worst = 0;
    for (std::size_t k = 0; k < steps; ++k) {
      Mat mean = Mat::Zero(runs.front().dim(), runs.front().dim());
      for (const auto& run : runs) mean += run.records[k].A;
      mean /= static_cast<double>(runs.size());
      double e = err(mean, runs.front().records[k].t);
      if (e > worst) {
        worst = e;
        worst_t = runs.front().records[k].t;
      }
    }
  }
  rep.statistic = worst;
  rep.status = verdict(worst < tol);
  rep.details["tolerance"] = tol;
  rep.details["ensemble_mean"] = ensemble_mean;
  rep.details["worst_t"] = worst_t;
  rep.details["runs"] = runs.size();
  return rep;
}

// ||A_t||_OP lambda_min(B_t) <= ceiling at every record with t > 0.
inline CheckReport ceiling_check(const std::vector<Trajectory>& runs, double ceiling = 1.05) {
  CheckReport rep;
  rep.name = "covariance_ceiling";
  double worst = 0;
  long records = 0;
  for (const auto& run : runs)
    for (const auto& r : run.records) {
      if (!(r.t > 0)) continue;
      worst = std::max(worst, op_norm_sym(r.A) * lambda_min(r.B));
      ++records;
    }
  rep.statistic = worst;
  rep.status = verdict(worst <= ceiling);
  rep.details["ceiling"] = ceiling;
  rep.details["records"] = records;
  return rep;
}

}  // namespace sloc
