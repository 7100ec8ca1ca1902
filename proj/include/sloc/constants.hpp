#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "measures.hpp"
#include "report.hpp"
#include "tensor.hpp"

namespace sloc {

// A measure given by weighted points: a quadrature rule (n <= 3) or equal
// weight Monte Carlo draws.
struct MeasureSample {
  Mat points;
  Vec weights;  // normalized
  Eigen::Index draws = 0;  // 0 for quadrature
  std::string source;

  int dim() const { return static_cast<int>(points.rows()); }
  bool monte_carlo() const { return draws > 0; }
  WeightedView view() const { return {&points, weights}; }
};

struct SampleOptions {
  int order = 64;
  Eigen::Index mc_samples = 1000000;
  std::uint64_t seed = 1;
  bool force_monte_carlo = false;
};

inline MeasureSample measure_sample(const LogDensity& f, const SampleOptions& opt = {}) {
  MeasureSample s;
  if (f.dim() <= 3 && !opt.force_monte_carlo) {
    QuadratureRule r = f.quadrature(opt.order);
    double m = r.log_weights.maxCoeff();
    if (!std::isfinite(m)) throw Error(ErrorCode::non_normalizable, "density vanishes on the quadrature grid");
    s.weights = (r.log_weights.array() - m).exp();
    s.weights /= s.weights.sum();
    s.points = std::move(r.nodes);
    s.source = "quadrature";
    return s;
  }
  if (!f.has_sampler()) throw Error(ErrorCode::strategy_mismatch, "Monte Carlo needs an exact sampler");
  if (opt.mc_samples < 100) throw Error(ErrorCode::sample_budget_too_small, "too few Monte Carlo samples");
  Rng rng = make_rng(opt.seed, 0xc0de);
  s.points = f.sample(opt.mc_samples, rng);
  s.weights = Vec::Constant(opt.mc_samples, 1.0 / static_cast<double>(opt.mc_samples));
  s.draws = opt.mc_samples;
  s.source = "monte-carlo";
  return s;
}

inline MeasureSample from_points(Mat points) {
  MeasureSample s;
  s.draws = points.cols();
  s.weights = Vec::Constant(s.draws, 1.0 / static_cast<double>(s.draws));
  s.points = std::move(points);
  s.source = "points";
  return s;
}

inline MomentSummary sample_moments(const MeasureSample& s) {
  Vec mean = s.points * s.weights;
  Mat c = s.points.colwise() - mean;
  return {1.0, mean, symmetrize(c * s.weights.asDiagonal() * c.transpose())};
}

inline double isotropy_error(const MeasureSample& s) {
  MomentSummary m = sample_moments(s);
  const int n = s.dim();
  return std::max(m.barycenter.norm(), op_norm_sym(m.covariance - Mat::Identity(n, n)));
}

inline double default_isotropy_tol(const MeasureSample& s) {
  return s.monte_carlo() ? 10.0 * std::sqrt(static_cast<double>(s.dim()) / static_cast<double>(s.draws)) : 1e-6;
}

inline void require_full_rank(const MeasureSample& s) {
  Vec ev = sym_eigenvalues(sample_moments(s).covariance);
  if (!(ev(ev.size() - 1) > 1e-10 * std::max(ev(0), 1e-300)))
    throw Error(ErrorCode::rank_deficiency, "measure is degenerate (covariance is singular)");
}

// Delete-group jackknife standard error of stat over contiguous groups of
// equally weighted points.
template <class Stat>
double jackknife_se(const MeasureSample& s, int groups, Stat&& stat) {
  const Eigen::Index N = s.points.cols();
  std::vector<double> vals;
  for (int g = 0; g < groups; ++g) {
    Eigen::Index lo = N * g / groups, hi = N * (g + 1) / groups;
    Vec w = s.weights;
    w.segment(lo, hi - lo).setZero();
    w /= w.sum();
    vals.push_back(stat(w));
  }
  double m = stats::mean(vals), ss = 0;
  for (double v : vals) ss += (v - m) * (v - m);
  return std::sqrt((groups - 1.0) / groups * ss);
}

struct ThinShell {
  double s = 0;        // sqrt E(|X| - sqrt n)^2
  double se = 0;       // jackknife, Monte Carlo only
  std::vector<std::pair<int, double>> ladder;  // (k, s_k), median over subspace draws
};

inline double shell_square(const Mat& x, const Vec& w, const std::vector<int>& coords) {
  const double rk = std::sqrt(static_cast<double>(coords.size()));
  double acc = 0;
  for (Eigen::Index p = 0; p < x.cols(); ++p) {
    double r2 = 0;
    for (int c : coords) r2 += x(c, p) * x(c, p);
    double d = std::sqrt(r2) - rk;
    acc += w(p) * d * d;
  }
  return acc;
}

inline ThinShell thin_shell_stat(const MeasureSample& mu, const std::vector<int>& ladder = {}, int subspaces = 10,
                                 std::uint64_t seed = 7, double tolerance = INFINITY) {
  require_full_rank(mu);
  const int n = mu.dim();
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  ThinShell out;
  out.s = std::sqrt(shell_square(mu.points, mu.weights, all));
  if (mu.monte_carlo()) {
    out.se = jackknife_se(mu, 20, [&](const Vec& w) { return std::sqrt(shell_square(mu.points, w, all)); });
    if (1.96 * out.se > tolerance)
      throw Error(ErrorCode::sample_budget_too_small, "thin-shell CI wider than the requested tolerance");
  }
  Rng rng = make_rng(seed, 0x5e11);
  for (int k : ladder) {
    if (k < 1 || k > n) throw Error(ErrorCode::constraint_violation, "ladder entries must lie in 1..n");
    std::vector<double> vals;
    for (int d = 0; d < subspaces; ++d) {
      std::vector<int> perm = all;
      std::shuffle(perm.begin(), perm.end(), rng);
      perm.resize(k);
      vals.push_back(std::sqrt(shell_square(mu.points, mu.weights, perm)));
    }
    out.ladder.emplace_back(k, stats::median(vals));
  }
  return out;
}

inline void require_isotropic(const MeasureSample& mu, double tol) {
  double err = isotropy_error(mu);
  if (err > tol) throw Error(ErrorCode::anisotropic_input, "measure is not isotropic (error " + std::to_string(err) + ")");
}

struct KStat {
  double kappa = 0;
  Vec theta;   // maximizing direction
  double se = 0;
  Tensor3 tensor;
};

inline KStat k_stat(const MeasureSample& mu, std::optional<double> isotropy_tol = std::nullopt) {
  require_isotropic(mu, isotropy_tol.value_or(default_isotropy_tol(mu)));
  KStat out;
  out.tensor = third_moments(mu.points, mu.weights);
  for (double v : out.tensor.data)
    if (!std::isfinite(v)) throw Error(ErrorCode::tensor_estimation_failure, "third moments are not finite");
  auto [k, th] = kappa_of(out.tensor);
  out.kappa = k;
  out.theta = th;
  if (mu.monte_carlo())
    out.se = jackknife_se(mu, 20, [&](const Vec& w) { return kappa_of(third_moments(mu.points, w)).first; });
  return out;
}

struct QStat {
  double q = 0;
  Mat B;  // optimizing quadratic part
  Vec v;  // optimizing linear part
};

namespace detail {

// Ratio Var[Q] / E|grad Q|^2 over span of the given features.
inline QStat q_optimum(const MeasureSample& mu, bool linear) {
  const int n = mu.dim();
  const int nq = n * (n + 1) / 2;
  const int m = nq + (linear ? n : 0);
  const Eigen::Index N = mu.points.cols();
  const Mat& x = mu.points;
  Mat phi(m, N);
  Eigen::Index row = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) phi.row(row++) = x.row(i).cwiseProduct(x.row(j));
  if (linear)
    for (int i = 0; i < n; ++i) phi.row(row++) = x.row(i);
  Vec mean = phi * mu.weights;
  Mat c = phi.colwise() - mean;
  Mat cov = symmetrize(c * mu.weights.asDiagonal() * c.transpose());

  // E <grad phi_a, grad phi_b>: quadratic gradients are linear in x
  Mat second = symmetrize(x * mu.weights.asDiagonal() * x.transpose());
  Vec first = x * mu.weights;
  // gradient of feature a as (coefficient matrix G_a, constant g_a): grad = G_a x + g_a
  std::vector<Mat> G(m, Mat::Zero(n, n));
  std::vector<Vec> g(m, Vec::Zero(n));
  row = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j, ++row) {
      G[row](i, j) += 1;
      G[row](j, i) += 1;
    }
  if (linear)
    for (int i = 0; i < n; ++i, ++row) g[row](i) = 1;
  Mat M(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = a; b < m; ++b)
      M(a, b) = M(b, a) = (G[a].transpose() * G[b] * second).trace() + g[a].dot(G[b] * first) +
                          g[b].dot(G[a] * first) + g[a].dot(g[b]);
  Vec mev = sym_eigenvalues(M);
  Vec cev = sym_eigenvalues(cov);
  if (!(mev(m - 1) > 1e-10 * mev(0)) || !(cev(m - 1) > 1e-12 * cev(0)))
    throw Error(ErrorCode::rank_deficiency, "moment matrices are singular");
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(cov, M);
  Eigen::Index top = m - 1;  // ascending order
  Vec coef = ges.eigenvectors().col(top);
  QStat out;
  out.q = std::sqrt(std::max(ges.eigenvalues()(top), 0.0));
  out.B = Mat::Zero(n, n);
  out.v = Vec::Zero(n);
  row = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j, ++row) {
      if (i == j) out.B(i, i) = coef(row);
      else out.B(i, j) = out.B(j, i) = 0.5 * coef(row);
    }
  if (linear)
    for (int i = 0; i < n; ++i, ++row) out.v(i) = coef(row);
  double scale = std::max(out.B.norm(), out.v.norm());
  out.B /= scale;
  out.v /= scale;
  return out;
}

}  // namespace detail

// Quadratic-plus-linear search space: q >= 1 exactly for isotropic measures.
inline QStat q_stat(const MeasureSample& mu) { return detail::q_optimum(mu, true); }
// Pure quadratic forms <Bx, x>.
inline QStat q_quad(const MeasureSample& mu) { return detail::q_optimum(mu, false); }

inline CheckReport kappa_q_check(double kappa, double q_quadratic, double q_full, double tol = 1e-6) {
  CheckReport r;
  r.name = "kappa_q_chain";
  double rhs = std::sqrt(2.0) * q_quadratic;
  r.statistic = kappa / rhs;
  r.status = verdict(kappa <= rhs * (1 + tol));
  r.details = {{"kappa", kappa}, {"q_quad", q_quadratic}, {"q_stat", q_full},
               {"ratio_with_q_stat", kappa / (std::sqrt(2.0) * q_full)}};
  return r;
}

inline CheckReport shell_sum_diagnostic(const MeasureSample& mu, double kappa, const ThinShell& shell) {
  CheckReport r;
  r.name = "shell_sum";
  r.status = Status::report;
  double sum = 0;
  Json chain = Json::array();
  const Mat& x = mu.points;
  const int n = mu.dim();
  Rng rng = make_rng(99, 0x16);
  for (auto [k, sk] : shell.ladder) {
    sum += sk * sk / k;
    // Var|P X|^2 against k Var[Y], Y = |P X| - sqrt k, on one coordinate subspace
    std::vector<int> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(k);
    double m2 = 0, m4 = 0, my = 0, my2 = 0;
    for (Eigen::Index p = 0; p < x.cols(); ++p) {
      double r2 = 0;
      for (int c : coords) r2 += x(c, p) * x(c, p);
      double y = std::sqrt(r2) - std::sqrt(static_cast<double>(k));
      double w = mu.weights(p);
      m2 += w * r2;
      m4 += w * r2 * r2;
      my += w * y;
      my2 += w * y * y;
    }
    chain.push_back({{"k", k}, {"s_k", sk}, {"var_proj_sq", m4 - m2 * m2}, {"k_var_y", k * (my2 - my * my)}});
  }
  double rhs = std::sqrt(sum);
  r.statistic = rhs > 0 ? kappa / rhs : std::nan("");
  r.details = {{"kappa", kappa}, {"sqrt_sum_sk2_over_k", rhs}, {"chain", chain}};
  return r;
}

struct ConstantsReport {
  std::string density;
  double sigma_stat = 0;
  double k_stat = 0;
  double q_stat = 0;
  double q_quad = 0;
  std::vector<std::pair<int, double>> ladder;
  CheckReport kappa_q;
  CheckReport shell_sum;
};

inline ConstantsReport constants_report(const std::string& name, const MeasureSample& mu,
                                        const std::vector<int>& ladder) {
  ConstantsReport r;
  r.density = name;
  ThinShell shell = thin_shell_stat(mu, ladder);
  KStat k = k_stat(mu);
  r.sigma_stat = shell.s;
  r.k_stat = k.kappa;
  r.q_stat = q_stat(mu).q;
  r.q_quad = q_quad(mu).q;
  r.ladder = shell.ladder;
  r.kappa_q = kappa_q_check(r.k_stat, r.q_quad, r.q_stat);
  r.shell_sum = shell_sum_diagnostic(mu, r.k_stat, shell);
  return r;
}

inline Json to_json(const ConstantsReport& r) {
  Json ladder = Json::array();
  for (auto [k, s] : r.ladder) ladder.push_back({{"k", k}, {"s_k", s}});
  return {{"density", r.density}, {"sigma_stat", r.sigma_stat}, {"k_stat", r.k_stat}, {"q_stat", r.q_stat},
          {"q_quad", r.q_quad}, {"ladder", ladder}, {"kappa_q_chain", to_json(r.kappa_q)}, {"shell_sum", to_json(r.shell_sum)}};
}

}  // namespace sloc
