#pragma once

#include <memory>
#include <optional>
#include <string>

#include "measures.hpp"

namespace sloc {

struct TiltState {
  Vec c;
  Mat B;
  double t = 0;

  static TiltState origin(int n) { return {Vec::Zero(n), Mat::Zero(n, n), 0.0}; }
  Tilt tilt() const { return {c, B}; }
};

struct TiltedMoments {
  double V = 1;
  double log_V = 0;
  Vec a;
  Mat A;
  double n_eff = 0;
  bool ridge = false;
};

enum class StrategyKind { closed_form_gaussian, grid_quadrature, particle_weights };

inline const char* to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::closed_form_gaussian: return "closed-form-gaussian";
    case StrategyKind::grid_quadrature: return "grid-quadrature";
    case StrategyKind::particle_weights: return "particle-weights";
  }
  return "?";
}

struct MomentStrategy {
  StrategyKind kind = StrategyKind::grid_quadrature;
  int quadrature_order = 64;
  bool crop = true;
  Eigen::Index particles = 10000;
  std::uint64_t seed = 0;
  double floor_ratio = 1e-12;
  bool allow_ridge = false;
  bool whiten_cloud = true;

  static MomentStrategy closed_form() { return {StrategyKind::closed_form_gaussian}; }
  static MomentStrategy quadrature(int order = 64) {
    MomentStrategy s;
    s.quadrature_order = order;
    return s;
  }
  static MomentStrategy particles_of(Eigen::Index n, std::uint64_t seed = 0) {
    MomentStrategy s;
    s.kind = StrategyKind::particle_weights;
    s.particles = n;
    s.seed = seed;
    return s;
  }
};

// Applies the covariance floor: throws, or adds the documented ridge.
inline void enforce_floor(TiltedMoments& m, const MomentStrategy& s) {
  const Eigen::Index n = m.A.rows();
  Vec ev = sym_eigenvalues(m.A);
  if (ev(n - 1) >= s.floor_ratio * ev(0) && ev(n - 1) > 0) return;
  if (!s.allow_ridge || !(m.A.trace() > 0))
    throw Error(ErrorCode::covariance_floor_breach, "tilted covariance is not numerically positive definite");
  m.A += Mat::Identity(n, n) * (1e-10 * m.A.trace() / static_cast<double>(n));
  m.ridge = true;
}

// Fixed points with base log-weights and precomputed quadratic features
// (x_i, then x_i x_j for i <= j), so that any quadratic tilt of the log
// weights is a single matrix-vector product.
class WeightedPoints {
 public:
  WeightedPoints(Mat points, Vec base_log_weights)
      : x_(std::move(points)), base_(std::move(base_log_weights)) {
    const Eigen::Index n = x_.rows(), k = x_.cols();
    const Eigen::Index m = n + n * (n + 1) / 2;
    phi_.resize(m, k);
    phi_.topRows(n) = x_;
    Eigen::Index row = n;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j) phi_.row(row++) = x_.row(i).cwiseProduct(x_.row(j));
  }

  int dim() const { return static_cast<int>(x_.rows()); }
  Eigen::Index size() const { return x_.cols(); }
  const Mat& points() const { return x_; }
  const Vec& base_log_weights() const { return base_; }

  // log weights: base + <c,x> - <Bx,x>/2 + shift
  Vec tilt_log_weights(const Vec& c, const Mat& B, double shift = 0.0) const {
    Vec theta = coefficients(c, B);
    Vec out = phi_.transpose() * theta;
    out.array() += base_.array() + shift;
    return out;
  }

  Vec coefficients(const Vec& c, const Mat& B) const {
    const Eigen::Index n = x_.rows();
    Vec theta(phi_.rows());
    theta.head(n) = c;
    Eigen::Index row = n;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j) theta(row++) = (i == j) ? -0.5 * B(i, i) : -0.5 * (B(i, j) + B(j, i));
    return theta;
  }

  struct Evaluation {
    TiltedMoments moments;
    Vec weights;  // normalized
  };

  // log_mass_offset converts the weight sum into the mass: log V =
  // log(sum exp(l)) + offset.
  Evaluation evaluate(const Vec& log_w, double log_mass_offset = 0.0) const {
    const Eigen::Index n = x_.rows();
    double mx = log_w.maxCoeff();
    if (!std::isfinite(mx)) throw Error(ErrorCode::quadrature_overflow, "tilt exponent is not finite");
    Vec w = (log_w.array() - mx).exp();
    double s = w.sum();
    w /= s;
    Vec moments = phi_ * w;
    Evaluation out;
    TiltedMoments& tm = out.moments;
    tm.log_V = mx + std::log(s) + log_mass_offset;
    tm.V = std::exp(tm.log_V);
    tm.a = moments.head(n);
    tm.A.resize(n, n);
    Eigen::Index row = n;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j) {
        tm.A(i, j) = tm.A(j, i) = moments(row++) - tm.a(i) * tm.a(j);
      }
    // recompute centred when cancellation would dominate
    if (tm.A.trace() < 1e-6 * (tm.a.squaredNorm() + 1e-300)) {
      Mat c = x_.colwise() - tm.a;
      tm.A = symmetrize(c * w.asDiagonal() * c.transpose());
    }
    tm.n_eff = 1.0 / w.squaredNorm();
    out.weights = std::move(w);
    return out;
  }

 private:
  Mat x_;
  Vec base_;
  Mat phi_;
};

// Tilted moments of a density along a tilt path by quadrature; the rule is
// rebuilt around the current tilt only when the density admits cropping.
class QuadratureTilt {
 public:
  QuadratureTilt(LogDensity f, int order, bool crop, AxisCuts cuts = {})
      : f_(std::move(f)), order_(order), cuts_(std::move(cuts)) {
    crop_ = crop && dynamic_cast<const detail::ProductModel*>(&f_.model()) != nullptr;
    if (!crop_) points_ = make(nullptr);
  }

  std::shared_ptr<const WeightedPoints> points_for(const TiltState& s) const {
    if (!crop_) return points_;
    Tilt t = s.tilt();
    return make(&t);
  }

  const LogDensity& density() const { return f_; }

 private:
  std::shared_ptr<const WeightedPoints> make(const Tilt* t) const {
    QuadratureRule r = f_.quadrature(order_, t, cuts_);
    return std::make_shared<WeightedPoints>(std::move(r.nodes), std::move(r.log_weights));
  }

  LogDensity f_;
  int order_;
  bool crop_ = false;
  AxisCuts cuts_;
  std::shared_ptr<const WeightedPoints> points_;
};

inline TiltedMoments gaussian_tilted_moments(const TiltState& s) {
  const Eigen::Index n = s.c.size();
  Mat P = Mat::Identity(n, n) + symmetrize(s.B);
  Eigen::LLT<Mat> llt(P);
  TiltedMoments m;
  m.A = llt.solve(Mat::Identity(n, n));
  m.a = m.A * s.c;
  double logdet = 0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += 2 * std::log(llt.matrixL()(i, i));
  m.log_V = -0.5 * logdet + 0.5 * s.c.dot(m.a);
  m.V = std::exp(m.log_V);
  m.n_eff = INFINITY;
  return m;
}

inline void check_strategy(const LogDensity& f, const MomentStrategy& strategy) {
  if (strategy.kind == StrategyKind::closed_form_gaussian && f.kind() != DensityKind::standard_gaussian)
    throw Error(ErrorCode::strategy_mismatch, "closed form requires a standard Gaussian density");
  if (strategy.kind == StrategyKind::grid_quadrature && f.dim() > 3)
    throw Error(ErrorCode::strategy_mismatch, "grid quadrature requires n <= 3");
  if (strategy.kind == StrategyKind::particle_weights && !f.has_sampler())
    throw Error(ErrorCode::strategy_mismatch, "particle weights require an exact sampler");
}

inline TiltedMoments tilted_moments(const LogDensity& f, const TiltState& s, const MomentStrategy& strategy) {
  check_strategy(f, strategy);
  if (s.c.size() != f.dim() || s.B.rows() != f.dim())
    throw Error(ErrorCode::dimension_mismatch, "tilt state has wrong dimension");
  TiltedMoments m;
  switch (strategy.kind) {
    case StrategyKind::closed_form_gaussian:
      m = gaussian_tilted_moments(s);
      break;
    case StrategyKind::grid_quadrature: {
      QuadratureTilt q(f, strategy.quadrature_order, strategy.crop);
      auto pts = q.points_for(s);
      m = pts->evaluate(pts->tilt_log_weights(s.c, s.B)).moments;
      break;
    }
    case StrategyKind::particle_weights: {
      Rng rng = make_rng(strategy.seed, 0x9a);
      Mat x = f.sample(strategy.particles, rng);
      WeightedPoints wp(std::move(x), Vec::Zero(strategy.particles));
      m = wp.evaluate(wp.tilt_log_weights(s.c, s.B), -std::log(static_cast<double>(strategy.particles))).moments;
      break;
    }
  }
  enforce_floor(m, strategy);
  return m;
}

inline LogDensity conditional_density_form(const LogDensity& f, const TiltState& s, const MomentStrategy& strategy) {
  if (s.c.squaredNorm() == 0 && s.B.squaredNorm() == 0) return f;
  TiltedMoments m = tilted_moments(f, s, strategy);
  return f.tilted(s.c, s.B, m.log_V);
}

inline LogDensity conditional_density_form(const LogDensity& f, const TiltState& s) {
  MomentStrategy st = f.kind() == DensityKind::standard_gaussian ? MomentStrategy::closed_form()
                                                                   : MomentStrategy::quadrature();
  return conditional_density_form(f, s, st);
}

}  // namespace sloc
