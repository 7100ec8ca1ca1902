#pragma once

#include <cstdio>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "stats.hpp"
#include "tensor.hpp"
#include "test_set.hpp"
#include "tilt.hpp"

namespace sloc {

struct Schedule {
  double dt = 1e-3;
  double t_max = 1.0;
  int stride = 1;
  double stop_trace = 1e-4;  // stop once Tr A < stop_trace * n
  double guard = 5.0;        // halve dt while |A^{-1/2} dW| exceeds this
  int max_halvings = 12;

  void validate() const {
    if (!(dt > 0)) throw Error(ErrorCode::constraint_violation, "dt must be positive");
    if (!(t_max >= dt)) throw Error(ErrorCode::constraint_violation, "t_max must be at least dt");
    if (stride < 1) throw Error(ErrorCode::constraint_violation, "stride must be positive");
  }
  long steps() const { return static_cast<long>(std::llround(t_max / dt)); }
};

struct StepRecord {
  double t = 0;
  Vec c;
  Mat B;
  Vec a;
  Mat A;
  double V = 1;
  double log_V = 0;
  Vec eigvals;
  double n_eff = 0;
  Mat int_A;  // right-point sum for the integral of A over [0, t]
  std::vector<double> probes;
  double kappa = std::numeric_limits<double>::quiet_NaN();
  bool ridge = false;

  Mat atilde() const { return A + int_A; }
};

struct Trajectory {
  std::vector<StepRecord> records;
  std::uint64_t seed = 0;
  Schedule schedule;
  StrategyKind strategy = StrategyKind::grid_quadrature;
  int halvings = 0;
  bool degenerate = false;
  std::string stop_reason;

  int dim() const { return static_cast<int>(records.front().a.size()); }
};

struct RunOptions {
  std::vector<TestSet> probes;
  bool record_kappa = false;
  double min_neff = 10;
  bool abort_on_degenerate = false;
  bool resample = false;  // breaks the martingale structure; long-horizon sampling only
  bool check_isotropic = true;
  double isotropy_tol = 1e-6;
  std::optional<TiltState> start;  // tilt-path backends only
};

// F_t at a fixed point from a record: exp(<c,x> - <Bx,x>/2 - log V).
inline double weight_at(const StepRecord& r, const Vec& x) {
  return std::exp(r.c.dot(x) - 0.5 * x.dot(r.B * x) - r.log_V);
}

inline TiltState step_tilt(const TiltState& s, const LogDensity& f, const TiltedMoments& m, const Vec& dW, double dt) {
  if (dW.size() != f.dim()) throw Error(ErrorCode::dimension_mismatch, "Brownian increment has wrong dimension");
  if (dt == 0) return s;
  Mat ainv = sym_inv(m.A);
  TiltState out = s;
  out.c += sym_inv_sqrt(m.A) * dW + ainv * m.a * dt;
  out.B = symmetrize(out.B + ainv * dt);
  out.t += dt;
  return out;
}

struct ParticleCloud {
  std::shared_ptr<const WeightedPoints> points;
  Vec log_weights;
  Vec c;
  Mat B;
  double shift = 0;  // log_weights = base + <c,x> - <Bx,x>/2 + shift
  double t = 0;
  double log_mass_offset = 0;  // log V = log sum exp(log_weights) + offset

  Eigen::Index size() const { return points->size(); }
  int dim() const { return points->dim(); }
};

inline ParticleCloud make_cloud(Mat points) {
  const int n = static_cast<int>(points.rows());
  const Eigen::Index N = points.cols();
  ParticleCloud cl;
  cl.points = std::make_shared<WeightedPoints>(std::move(points), Vec::Zero(N));
  cl.log_weights = Vec::Zero(N);
  cl.c = Vec::Zero(n);
  cl.B = Mat::Zero(n, n);
  cl.log_mass_offset = -std::log(static_cast<double>(N));
  return cl;
}

// Cloud over weighted nodes (e.g. a quadrature rule); base weights should sum
// to the initial mass.
inline ParticleCloud make_weighted_cloud(Mat points, Vec base_log_weights) {
  const int n = static_cast<int>(points.rows());
  ParticleCloud cl;
  cl.log_weights = base_log_weights;
  cl.points = std::make_shared<WeightedPoints>(std::move(points), std::move(base_log_weights));
  cl.c = Vec::Zero(n);
  cl.B = Mat::Zero(n, n);
  return cl;
}

// Draws N points from f; with whiten the empirical measure is made exactly
// isotropic.
inline Mat draw_points(const LogDensity& f, Eigen::Index N, std::uint64_t seed, bool whiten_points) {
  if (N < 2) throw Error(ErrorCode::constraint_violation, "cloud needs at least two particles");
  Rng rng = make_rng(seed, 0xc10d);
  Mat x = f.sample(N, rng);
  if (whiten_points) {
    Vec mean = x.rowwise().mean();
    Mat c = x.colwise() - mean;
    Mat cov = c * c.transpose() / static_cast<double>(N);
    x = sym_inv_sqrt(cov) * c;
  }
  return x;
}

inline ParticleCloud make_cloud(const LogDensity& f, Eigen::Index N, std::uint64_t seed, bool whiten_points = true) {
  return make_cloud(draw_points(f, N, seed, whiten_points));
}

inline ParticleCloud step_weights(const ParticleCloud& cloud, const Vec& a, const Mat& A_inv_sqrt, const Vec& dW,
                                  double dt) {
  ParticleCloud out = cloud;
  if (dt == 0 && dW.squaredNorm() == 0) return out;
  Vec u = A_inv_sqrt * dW;
  Mat ainv = A_inv_sqrt * A_inv_sqrt;
  Vec dc = u + ainv * a * dt;
  Mat dB = ainv * dt;
  double dk = -a.dot(u) - 0.5 * a.dot(ainv * a) * dt;
  out.log_weights += cloud.points->tilt_log_weights(dc, dB, dk) - cloud.points->base_log_weights();
  out.c += dc;
  out.B = symmetrize(out.B + dB);
  out.shift += dk;
  out.t += dt;
  return out;
}

inline WeightedPoints::Evaluation evaluate_cloud(const ParticleCloud& cloud) {
  return cloud.points->evaluate(cloud.log_weights, cloud.log_mass_offset);
}

inline TiltedMoments weighted_moments(const ParticleCloud& cloud, double min_neff = 0) {
  if (!(cloud.log_weights.maxCoeff() > -INFINITY)) throw Error(ErrorCode::degenerate_cloud, "all weights vanish");
  TiltedMoments m = evaluate_cloud(cloud).moments;
  if (m.n_eff < min_neff) throw Error(ErrorCode::degenerate_cloud, "effective sample size " + std::to_string(m.n_eff));
  return m;
}

// Multinomial resampling; resets weights to equal mass.
inline ParticleCloud resample(const ParticleCloud& cloud, Rng& rng) {
  auto ev = evaluate_cloud(cloud);
  std::discrete_distribution<Eigen::Index> pick(ev.weights.data(), ev.weights.data() + ev.weights.size());
  Mat x(cloud.dim(), cloud.size());
  for (Eigen::Index k = 0; k < cloud.size(); ++k) x.col(k) = cloud.points->points().col(pick(rng));
  ParticleCloud out = make_cloud(std::move(x));
  out.t = cloud.t;
  out.c = cloud.c;
  out.B = cloud.B;
  return out;
}

namespace detail {

inline double closed_form_probe(const TestSet& e, const TiltedMoments& m) {
  if (e.kind() != TestSet::Kind::halfspace)
    throw Error(ErrorCode::unsupported, "closed-form masses are only available for halfspaces");
  if (!std::isfinite(e.offset())) return 1.0;
  double sd = std::sqrt(e.normal().dot(m.A * e.normal()));
  return stats::normal_cdf((e.offset() - e.normal().dot(m.a)) / sd);
}

inline double weighted_probe(const TestSet& e, const Mat& x, const Vec& w) {
  double s = 0;
  for (Eigen::Index k = 0; k < x.cols(); ++k)
    if (w(k) > 0 && e.contains(x.col(k))) s += w(k);
  return s;
}

class Backend {
 public:
  virtual ~Backend() = default;
  virtual TiltedMoments moments() = 0;
  virtual void advance(const TiltedMoments& m, const Mat& a_inv_sqrt, const Vec& dW, double h) = 0;
  virtual TiltState state() const = 0;
  virtual double probe(const TestSet& e) = 0;
  virtual std::optional<WeightedView> view() = 0;
};

class ClosedFormBackend final : public Backend {
 public:
  explicit ClosedFormBackend(TiltState s) : s_(std::move(s)) {}
  TiltedMoments moments() override { return last_ = gaussian_tilted_moments(s_); }
  void advance(const TiltedMoments& m, const Mat& ais, const Vec& dW, double h) override {
    Mat ainv = ais * ais;
    s_.c += ais * dW + ainv * m.a * h;
    s_.B = symmetrize(s_.B + ainv * h);
    s_.t += h;
  }
  TiltState state() const override { return s_; }
  double probe(const TestSet& e) override { return closed_form_probe(e, last_); }
  std::optional<WeightedView> view() override { return std::nullopt; }

 private:
  TiltState s_;
  TiltedMoments last_;
};

class QuadratureBackend final : public Backend {
 public:
  QuadratureBackend(const LogDensity& f, int order, bool crop, AxisCuts cuts, TiltState s)
      : q_(f, order, crop, std::move(cuts)), s_(std::move(s)) {}
  TiltedMoments moments() override {
    pts_ = q_.points_for(s_);
    ev_ = pts_->evaluate(pts_->tilt_log_weights(s_.c, s_.B));
    return ev_.moments;
  }
  void advance(const TiltedMoments& m, const Mat& ais, const Vec& dW, double h) override {
    Mat ainv = ais * ais;
    s_.c += ais * dW + ainv * m.a * h;
    s_.B = symmetrize(s_.B + ainv * h);
    s_.t += h;
  }
  TiltState state() const override { return s_; }
  double probe(const TestSet& e) override { return weighted_probe(e, pts_->points(), ev_.weights); }
  std::optional<WeightedView> view() override { return WeightedView{&pts_->points(), ev_.weights}; }

 private:
  QuadratureTilt q_;
  TiltState s_;
  std::shared_ptr<const WeightedPoints> pts_;
  WeightedPoints::Evaluation ev_;
};

class CloudBackend final : public Backend {
 public:
  CloudBackend(ParticleCloud cloud, bool resample_flag, std::uint64_t seed)
      : cl_(std::move(cloud)), resample_(resample_flag), rng_(make_rng(seed, 0x5e5a)) {}
  TiltedMoments moments() override {
    ev_ = evaluate_cloud(cl_);
    return ev_.moments;
  }
  void advance(const TiltedMoments& m, const Mat& ais, const Vec& dW, double h) override {
    cl_ = step_weights(cl_, m.a, ais, dW, h);
    if (resample_ && ev_.moments.n_eff < 0.5 * static_cast<double>(cl_.size())) cl_ = resample(cl_, rng_);
  }
  TiltState state() const override { return {cl_.c, cl_.B, cl_.t}; }
  double probe(const TestSet& e) override { return weighted_probe(e, cl_.points->points(), ev_.weights); }
  std::optional<WeightedView> view() override { return WeightedView{&cl_.points->points(), ev_.weights}; }

 private:
  ParticleCloud cl_;
  bool resample_;
  Rng rng_;
  WeightedPoints::Evaluation ev_;
};

inline AxisCuts probe_cuts(const std::vector<TestSet>& probes, int n) {
  AxisCuts cuts(n);
  for (const auto& p : probes)
    if (auto c = p.axis_cut()) cuts[c->first].push_back(c->second);
  return cuts;
}

}  // namespace detail

inline void check_isotropic(const LogDensity& f, double tol) {
  std::optional<MomentSummary> m = f.moment_oracle();
  if (!m && f.dim() <= 3) m = quadrature_moments(f, 64);
  if (!m) return;
  const int n = f.dim();
  double err = std::max(m->barycenter.norm(), (m->covariance - Mat::Identity(n, n)).norm());
  if (err > tol) throw Error(ErrorCode::anisotropic_input, "density is not isotropic (error " + std::to_string(err) + ")");
}

inline std::unique_ptr<detail::Backend> make_backend(const LogDensity& f, const MomentStrategy& strategy,
                                                     std::uint64_t seed, const RunOptions& opt) {
  check_strategy(f, strategy);
  TiltState s0 = opt.start.value_or(TiltState::origin(f.dim()));
  if (s0.c.size() != f.dim() || s0.B.rows() != f.dim())
    throw Error(ErrorCode::dimension_mismatch, "start state has wrong dimension");
  switch (strategy.kind) {
    case StrategyKind::closed_form_gaussian: return std::make_unique<detail::ClosedFormBackend>(s0);
    case StrategyKind::grid_quadrature:
      return std::make_unique<detail::QuadratureBackend>(f, strategy.quadrature_order, strategy.crop,
                                                         detail::probe_cuts(opt.probes, f.dim()), s0);
    case StrategyKind::particle_weights:
      if (opt.start) throw Error(ErrorCode::unsupported, "clouds always start at the origin");
      return std::make_unique<detail::CloudBackend>(make_cloud(f, strategy.particles, seed, strategy.whiten_cloud),
                                                    opt.resample, seed);
  }
  return nullptr;
}

// Evolves the localization of f from an isotropic start.
inline Trajectory run_trajectory(const LogDensity& f, const Schedule& schedule, const MomentStrategy& strategy,
                                 std::uint64_t seed, const RunOptions& opt = {}) {
  schedule.validate();
  const int n = f.dim();
  if (opt.check_isotropic && !opt.start && strategy.kind != StrategyKind::particle_weights)
    check_isotropic(f, opt.isotropy_tol);
  auto backend = make_backend(f, strategy, seed, opt);
  BrownianPath path(seed, n, schedule.dt);

  Trajectory traj;
  traj.seed = seed;
  traj.schedule = schedule;
  traj.strategy = strategy.kind;
  Mat int_a = Mat::Zero(n, n);

  auto checked_moments = [&]() {
    TiltedMoments m = backend->moments();
    enforce_floor(m, strategy);
    if (m.n_eff < opt.min_neff) {
      traj.degenerate = true;
      if (opt.abort_on_degenerate)
        throw Error(ErrorCode::degenerate_cloud, "effective sample size " + std::to_string(m.n_eff));
    }
    return m;
  };

  auto record = [&](double t, const TiltedMoments& m) {
    StepRecord r;
    TiltState s = backend->state();
    r.t = t;
    r.c = s.c;
    r.B = s.B;
    r.a = m.a;
    r.A = m.A;
    r.V = m.V;
    r.log_V = m.log_V;
    r.eigvals = sym_eigenvalues(m.A);
    r.n_eff = m.n_eff;
    r.int_A = int_a;
    r.ridge = m.ridge;
    for (const auto& p : opt.probes) r.probes.push_back(backend->probe(p));
    if (opt.record_kappa) {
      if (auto v = backend->view()) r.kappa = kappa_of(third_moments(whiten(*v->points, m.a, m.A), v->weights)).first;
      else r.kappa = 0.0;  // Gaussian tilt: symmetric
    }
    traj.records.push_back(std::move(r));
  };

  // One sub-interval of base step k, subdivided while the guard trips. On
  // return m holds the moments at the end of the interval.
  auto advance = [&](auto&& self, long k, int level, std::uint64_t index, TiltedMoments& m) -> void {
    Vec dW = path.increment(static_cast<std::uint64_t>(k), level, index);
    double h = schedule.dt / std::ldexp(1.0, level);
    Mat ais = sym_inv_sqrt(m.A);
    if (level < schedule.max_halvings && (ais * dW).norm() > schedule.guard) {
      ++traj.halvings;
      self(self, k, level + 1, 2 * index, m);
      self(self, k, level + 1, 2 * index + 1, m);
      return;
    }
    backend->advance(m, ais, dW, h);
    m = checked_moments();
    int_a += m.A * h;
  };

  TiltedMoments m = checked_moments();
  const double t0 = backend->state().t;
  record(t0, m);
  const long steps = schedule.steps();
  traj.stop_reason = "t_max";
  for (long k = 0; k < steps; ++k) {
    advance(advance, k, 0, 0, m);
    double t = t0 + static_cast<double>(k + 1) * schedule.dt;
    bool stop = m.A.trace() < schedule.stop_trace * n;
    if ((k + 1) % schedule.stride == 0 || stop || k + 1 == steps) record(t, m);
    if (stop) {
      traj.stop_reason = "trace";
      break;
    }
  }
  return traj;
}

inline std::vector<Trajectory> run_ensemble(const LogDensity& f, const Schedule& schedule,
                                            const MomentStrategy& strategy, std::uint64_t base_seed, int runs,
                                            const RunOptions& opt = {}) {
  std::vector<std::uint64_t> seeds(runs);
  std::set<std::uint64_t> seen;
  for (int r = 0; r < runs; ++r) {
    seeds[r] = derive_seed(base_seed, static_cast<std::uint64_t>(r));
    if (!seen.insert(seeds[r]).second) std::cerr << "warning: seed reuse in ensemble at run " << r << "\n";
  }
  if (opt.check_isotropic && strategy.kind != StrategyKind::particle_weights) check_isotropic(f, opt.isotropy_tol);
  RunOptions inner = opt;
  inner.check_isotropic = false;
  std::vector<Trajectory> out(runs);
  parallel_for(static_cast<std::size_t>(runs),
               [&](std::size_t r) { out[r] = run_trajectory(f, schedule, strategy, seeds[r], inner); });
  return out;
}

struct CrossCheckReport {
  std::vector<double> t;
  std::vector<double> da;  // |a_tilt - a_cloud|
  std::vector<double> dA;  // ||A_tilt - A_cloud||_OP
  double max_da = 0;
  double max_dA = 0;
};

// Tilt path (quadrature) and weight path (cloud) on the same Brownian path.
inline CrossCheckReport cross_check_paths(const LogDensity& f, const Schedule& schedule, std::uint64_t seed,
                                          Eigen::Index particles, int order = 64) {
  if (f.dim() > 3 || !f.has_sampler())
    throw Error(ErrorCode::strategy_mismatch, "cross check needs quadrature (n <= 3) and a sampler");
  RunOptions opt;
  opt.min_neff = 0;
  Trajectory tilt = run_trajectory(f, schedule, MomentStrategy::quadrature(order), seed, opt);
  Trajectory cloud = run_trajectory(f, schedule, MomentStrategy::particles_of(particles, seed), seed, opt);
  CrossCheckReport rep;
  std::size_t count = std::min(tilt.records.size(), cloud.records.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto& x = tilt.records[i];
    const auto& y = cloud.records[i];
    rep.t.push_back(x.t);
    rep.da.push_back((x.a - y.a).norm());
    rep.dA.push_back(op_norm_sym(x.A - y.A));
    rep.max_da = std::max(rep.max_da, rep.da.back());
    rep.max_dA = std::max(rep.max_dA, rep.dA.back());
  }
  return rep;
}

// Record times shared by every run (runs stopped early contribute fewer).
inline std::vector<double> record_times(const std::vector<Trajectory>& runs) {
  std::vector<double> t;
  for (const auto& r : runs)
    if (r.records.size() > t.size()) {
      t.clear();
      for (const auto& rec : r.records) t.push_back(rec.t);
    }
  return t;
}

}  // namespace sloc
