#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "isoperimetry.hpp"

namespace sloc {

// Uniform density on y = M(x - b), x in a canonical body, with M a similarity.
struct BodyImage {
  BodySpec spec;
  Mat M;
  Vec b;
  double scale = 1;
  double volume = 0;

  int dim() const { return static_cast<int>(b.size()); }
  Vec to_canonical(const Vec& y) const { return b + M.transpose() * y / (scale * scale); }
  bool contains(const Vec& y) const { return body::contains(spec, to_canonical(y)); }
  Vec project(const Vec& y) const { return M * (body::project(spec, to_canonical(y)) - b); }
  double distance(const Vec& y) const { return (y - project(y)).norm(); }
  bool is_ball() const { return spec.shape == BodyShape::ball; }
  Vec center() const { return -M * b; }

  body::Box box() const {
    const int n = dim();
    body::Box c = body::bounding_box(spec, n);
    Vec lo = Vec::Constant(n, INFINITY), hi = Vec::Constant(n, -INFINITY);
    for (int mask = 0; mask < (1 << n); ++mask) {
      Vec x(n);
      for (int i = 0; i < n; ++i) x(i) = (mask >> i) & 1 ? c.hi(i) : c.lo(i);
      Vec y = M * (x - b);
      lo = lo.cwiseMin(y);
      hi = hi.cwiseMax(y);
    }
    return {lo, hi};
  }
};

inline std::optional<BodyImage> body_image(const LogDensity& f) {
  auto u = f.uniform_body();
  if (!u) return std::nullopt;
  const int n = f.dim();
  const Mat& M = u->map.M;
  double s = std::pow(std::abs(M.determinant()), 1.0 / n);
  if (!((M.transpose() * M - s * s * Mat::Identity(n, n)).norm() <= 1e-9 * s * s))
    throw Error(ErrorCode::unsupported, "uniform densities must be similarity images of a canonical body");
  auto v = body_volume(u->spec, n);
  if (!v) throw Error(ErrorCode::unsupported, "body volume unavailable");
  return BodyImage{u->spec, M, u->map.b, s, *v * std::pow(s, n)};
}

// (K + T)/2: x belongs iff K meets 2x - T.
struct MidpointBody {
  BodyImage K, T;

  int dim() const { return K.dim(); }

  bool contains(const Vec& x, int max_iter = 400) const {
    if (T.is_ball()) return K.distance(2 * x - T.center()) <= T.scale * T.spec.radius;
    if (K.is_ball()) return T.distance(2 * x - K.center()) <= K.scale * K.spec.radius;
    double tol = 1e-9 * std::max(K.scale, T.scale);
    Vec z = K.project(x);
    for (int it = 0; it < max_iter; ++it) {
      Vec w = 2 * x - T.project(2 * x - z);
      Vec z2 = K.project(w);
      double gap = (z2 - w).norm();
      if (gap <= tol) return true;
      if ((z2 - z).norm() <= 1e-3 * tol) return false;
      z = std::move(z2);
    }
    return (z - (2 * x - T.project(2 * x - z))).norm() <= 1e3 * tol;
  }

  body::Box box() const {
    body::Box a = K.box(), c = T.box();
    return {0.5 * (a.lo + c.lo), 0.5 * (a.hi + c.hi)};
  }
};

inline Vec uniform_in_box(const body::Box& box, Rng& rng) {
  Vec x(box.lo.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * uniform01(rng);
  return x;
}

struct SupOptions {
  Eigen::Index mass_samples = 200000;
  std::uint64_t seed = 29;
  bool force_grid = false;
  int grid_points = 0;  // per axis for the outer x grid; 0 picks 2001 (n=1) / 101 (n=2)
};

// H(f,g)(x) = sup_y sqrt(f(x+y) g(x-y)) and its mass K(f,g).
struct SupConvolution {
  int n = 0;
  std::string method;  // identical, minkowski_midpoint, grid
  std::function<double(const Vec&)> log_value;
  double total_mass = 1;
  double mass_se = 0;
  double support_radius = 0;
  std::optional<MidpointBody> exact_body;
  std::function<Vec(Rng&)> sampler;  // draws from H / K(f,g)

  double value(const Vec& x) const { return std::exp(log_value(x)); }
};

namespace detail {

// Concave inner maximization by zooming grids.
inline double inner_sup(const std::function<double(const Vec&)>& phi, int n, double radius) {
  const int m = n == 1 ? 201 : 25;
  const int levels = n == 1 ? 4 : 5;
  Vec center = Vec::Zero(n);
  double half = radius, best = -INFINITY;
  for (int level = 0; level < levels; ++level) {
    double step = 2 * half / (m - 1);
    Vec arg = center;
    Eigen::VectorXi idx = Eigen::VectorXi::Zero(n);
    for (;;) {
      Vec y(n);
      for (int i = 0; i < n; ++i) y(i) = center(i) - half + step * idx(i);
      double v = phi(y);
      if (v > best) {
        best = v;
        arg = y;
      }
      int i = 0;
      while (i < n && ++idx(i) == m) idx(i++) = 0;
      if (i == n) break;
    }
    if (!(best > -INFINITY)) return best;
    center = arg;
    half = 2 * step;
  }
  return best;
}

struct GridSup {
  double step = 0;
  double total = 0;
  std::vector<double> mass;  // per half-step cell
};

inline GridSup grid_sup(const LogDensity& f, const LogDensity& g, double rx, int m) {
  const int n = f.dim();
  const double step = 2 * rx / m;
  const int m2 = 2 * m - 1;
  struct Node {
    int i, j;
    double lf, lg;
  };
  std::vector<Node> nodes;
  for (int j = 0; j < (n == 1 ? 1 : m); ++j)
    for (int i = 0; i < m; ++i) {
      Vec u(n);
      u(0) = -rx + step * (i + 0.5);
      if (n == 2) u(1) = -rx + step * (j + 0.5);
      nodes.push_back({i, j, f.log_eval(u), g.log_eval(u)});
    }
  std::vector<const Node*> fin_f, fin_g;
  for (const auto& v : nodes) {
    if (std::isfinite(v.lf)) fin_f.push_back(&v);
    if (std::isfinite(v.lg)) fin_g.push_back(&v);
  }
  const std::size_t cells = static_cast<std::size_t>(n == 1 ? m2 : m2 * m2);
  std::vector<double> best(cells, -INFINITY);
  for (const Node* u : fin_f)
    for (const Node* v : fin_g) {
      std::size_t k = static_cast<std::size_t>(u->i + v->i) + static_cast<std::size_t>(m2) * (u->j + v->j);
      best[k] = std::max(best[k], 0.5 * (u->lf + v->lg));
    }
  GridSup out;
  out.step = step;
  out.mass.resize(cells);
  const double cell = std::pow(step / 2, n);
  for (std::size_t k = 0; k < cells; ++k) out.total += out.mass[k] = std::exp(best[k]) * cell;
  if (!(out.total > 0)) throw Error(ErrorCode::non_normalizable, "sup-convolution vanishes on the grid");
  return out;
}

}  // namespace detail

inline SupConvolution sup_convolution(const LogDensity& f, const LogDensity& g, const SupOptions& opt = {}) {
  const int n = f.dim();
  if (g.dim() != n) throw Error(ErrorCode::dimension_mismatch, "f and g differ in dimension");
  SupConvolution h;
  h.n = n;
  h.support_radius = 0.5 * (f.support_radius() + g.support_radius());

  if (f.same_as(g) && !opt.force_grid) {
    h.method = "identical";
    h.log_value = [f](const Vec& x) { return f.log_eval(x); };
    h.total_mass = 1;
    if (f.has_sampler()) h.sampler = [f](Rng& rng) { return f.sample(rng); };
    return h;
  }

  auto kf = body_image(f), kg = body_image(g);
  if (kf && kg && !opt.force_grid) {
    MidpointBody mid{*kf, *kg};
    double log_h = -0.5 * std::log(kf->volume * kg->volume);
    body::Box box = mid.box();
    double box_vol = (box.hi - box.lo).prod();
    Rng rng = make_rng(opt.seed, 0x5c0);
    Eigen::Index hits = 0;
    for (Eigen::Index k = 0; k < opt.mass_samples; ++k) hits += mid.contains(uniform_in_box(box, rng));
    double p = static_cast<double>(hits) / static_cast<double>(opt.mass_samples);
    h.method = "minkowski_midpoint";
    h.exact_body = mid;
    h.total_mass = p * box_vol * std::exp(log_h);
    h.mass_se = std::sqrt(p * (1 - p) / static_cast<double>(opt.mass_samples)) * box_vol * std::exp(log_h);
    h.support_radius = 0.5 * (box.hi - box.lo).norm() + 0.5 * (box.hi + box.lo).norm();
    h.log_value = [mid, log_h](const Vec& x) { return mid.contains(x) ? log_h : -INFINITY; };
    h.sampler = [mid, box](Rng& r) {
      for (;;) {
        Vec x = uniform_in_box(box, r);
        if (mid.contains(x)) return x;
      }
    };
    return h;
  }

  if (n > 2) throw Error(ErrorCode::grid_dimension_too_high, "grid sup-convolution needs n <= 2");
  const double ry = h.support_radius;
  h.method = "grid";
  h.log_value = [f, g, n, ry](const Vec& x) {
    auto phi = [&](const Vec& y) { return 0.5 * (f.log_eval(x + y) + g.log_eval(x - y)); };
    return detail::inner_sup(phi, n, ry);
  };
  // Mass from the discrete sup over node pairs u + v = 2x on a cell-centred
  // grid (x then lives on the half-step grid). Indicator edges make the
  // error first order in the step, so two grids are extrapolated.
  const double rx = std::max(f.support_radius(), g.support_radius());
  const int m = opt.grid_points > 0 ? opt.grid_points : (n == 1 ? 2001 : 201);
  detail::GridSup fine = detail::grid_sup(f, g, rx, m);
  detail::GridSup coarse = detail::grid_sup(f, g, rx, (m + 1) / 2);
  double h1 = fine.step, h2 = coarse.step;
  h.total_mass = (h2 * fine.total - h1 * coarse.total) / (h2 - h1);
  h.mass_se = std::abs(h.total_mass - fine.total);
  auto pick = std::make_shared<std::discrete_distribution<std::size_t>>(fine.mass.begin(), fine.mass.end());
  const double half = fine.step / 2;
  const int m2 = 2 * m - 1;
  h.sampler = [pick, rx, half, m2, n](Rng& r) {
    std::size_t k = (*pick)(r);
    Vec x(n);
    for (int i = 0; i < n; ++i, k /= static_cast<std::size_t>(m2))
      x(i) = -rx + half * (static_cast<double>(k % static_cast<std::size_t>(m2)) + 1 + uniform01(r) - 0.5);
    return x;
  };
  return h;
}

struct CouplingOptions {
  Schedule schedule;
  Eigen::Index particles = 20000;
  std::optional<int> quadrature_order;  // clouds on quadrature nodes instead of samples
  double min_neff_per_dim = 2;          // stop when the f-cloud N_eff drops below this times n
  bool check_inputs = true;
  double isotropy_tol = 1e-6;
  double center_tol = 1e-6;
};

struct CoupledRecord {
  double t = 0;
  Vec a, b;
  Mat A, C;
  double V_f = 1, V_g = 1, V_h = 1;
  double S = 1;     // mass of h_t, K(f,g) V_h
  double gap2 = 0;  // |a - b|^2
  double D_hs2 = 0;
  double int_D_hs2 = 0;
  Mat int_CAC;  // int C A^{-1} C ds
  Mat qv_b;     // realized sum of db db^T
  Vec lambda;   // eigenvalues of A, descending
  Vec delta;    // eigenvalues of I - A^{-1/2} C A^{-1/2}, descending
  double sv_lhs = 0;
  double sv_rhs = 0;         // delta paired by |delta|
  double sv_rhs_signed = 0;  // delta paired by signed order
  double neff_f = 0, neff_g = 0, neff_h = 0;
  double op_A = 0;
};

struct TiltParams {
  Vec c;
  Mat B;
  double shift = 0;

  double log_factor(const Vec& x) const { return c.dot(x) - 0.5 * x.dot(B * x) + shift; }
};

struct CoupledTrajectory {
  std::vector<CoupledRecord> records;
  std::uint64_t seed = 0;
  double K = 1;
  std::string stop_reason = "t_max";
  long halvings = 0;
  TiltParams final_f, final_g, final_h;

  int dim() const { return records.empty() ? 0 : static_cast<int>(records.front().a.size()); }
};

// ||D||_HS^2 for D = A^{1/2}(I - A^{-1/2} C A^{-1/2}) against sum lambda_j
// delta_j^2, with delta paired by magnitude (von Neumann) and by signed order.
struct SingularValueBound {
  double lhs = 0;
  double rhs = 0;
  double rhs_signed = 0;
  Vec lambda;
  Vec delta;
};

inline SingularValueBound singular_value_bound(const Mat& A, const Mat& C) {
  const Eigen::Index n = A.rows();
  Mat is = sym_inv_sqrt(A);
  Mat X = symmetrize(Mat::Identity(n, n) - is * C * is);
  SingularValueBound sv;
  sv.lhs = (sym_sqrt(A) * X).squaredNorm();
  sv.lambda = sym_eigenvalues(A);
  sv.delta = sym_eigenvalues(X);
  std::vector<double> by_abs(sv.delta.data(), sv.delta.data() + n);
  std::sort(by_abs.begin(), by_abs.end(), [](double x, double y) { return std::abs(x) > std::abs(y); });
  for (Eigen::Index j = 0; j < n; ++j) {
    sv.rhs += sv.lambda(j) * by_abs[j] * by_abs[j];
    sv.rhs_signed += sv.lambda(j) * sv.delta(j) * sv.delta(j);
  }
  return sv;
}

namespace detail {

inline ParticleCloud quadrature_cloud(const LogDensity& f, int order) {
  QuadratureRule q = f.quadrature(order);
  Vec lw = q.log_weights;
  double mx = lw.maxCoeff();
  lw.array() -= mx + std::log((lw.array() - mx).exp().sum());
  return make_weighted_cloud(std::move(q.nodes), std::move(lw));
}

inline Mat sample_points(const std::function<Vec(Rng&)>& draw, int n, Eigen::Index N, Rng& rng) {
  Mat x(n, N);
  for (Eigen::Index k = 0; k < N; ++k) x.col(k) = draw(rng);
  return x;
}

struct CoupledClouds {
  ParticleCloud f, g, h;
};

inline CoupledClouds initial_clouds(const LogDensity& f, const LogDensity& g, const SupConvolution& H,
                                    const CouplingOptions& opt, std::uint64_t seed) {
  const int n = f.dim();
  CoupledClouds cl;
  bool same = H.method == "identical";
  if (opt.quadrature_order) {
    cl.f = quadrature_cloud(f, *opt.quadrature_order);
    if (same) {
      cl.g = cl.h = cl.f;
      return cl;
    }
    cl.g = quadrature_cloud(g, *opt.quadrature_order);
    LogDensity hd = make_custom_density(n, H.log_value, H.support_radius);
    cl.h = quadrature_cloud(hd, *opt.quadrature_order);
    return cl;
  }
  cl.f = make_cloud(f, opt.particles, derive_seed(seed, 1, 0xf));
  if (same) {
    cl.g = cl.h = cl.f;
    return cl;
  }
  Mat y = draw_points(g, opt.particles, derive_seed(seed, 2, 0xf), false);
  Vec mean = y.rowwise().mean();
  cl.g = make_cloud(y.colwise() - mean);
  if (!H.sampler) throw Error(ErrorCode::unsupported, "sup-convolution has no sampler");
  Rng rng = make_rng(derive_seed(seed, 3, 0xf), 0x4);
  cl.h = make_cloud(sample_points(H.sampler, n, opt.particles, rng));
  return cl;
}

inline TiltParams tilt_of(const ParticleCloud& c) { return {c.c, c.B, c.shift}; }

}  // namespace detail

inline void check_coupling_inputs(const LogDensity& f, const LogDensity& g, const CouplingOptions& opt) {
  check_isotropic(f, opt.isotropy_tol);
  std::optional<MomentSummary> m = g.moment_oracle();
  if (!m && g.dim() <= 3) m = quadrature_moments(g, 64);
  if (m && m->barycenter.norm() > opt.center_tol)
    throw Error(ErrorCode::constraint_violation, "g must have its barycenter at the origin");
}

// Three clouds driven by one Brownian path and the f-side A_t^{-1/2}.
inline CoupledTrajectory run_coupled(const LogDensity& f, const LogDensity& g, const SupConvolution& H,
                                     std::uint64_t seed, const CouplingOptions& opt = {}) {
  const Schedule& sch = opt.schedule;
  sch.validate();
  const int n = f.dim();
  if (opt.check_inputs) check_coupling_inputs(f, g, opt);
  detail::CoupledClouds cl = detail::initial_clouds(f, g, H, opt, seed);
  BrownianPath path(seed, n, sch.dt);

  CoupledTrajectory traj;
  traj.seed = seed;
  traj.K = H.total_mass;
  Mat int_cac = Mat::Zero(n, n), qv_b = Mat::Zero(n, n);
  double int_d = 0;

  struct Moments {
    TiltedMoments f, g, h;
  };
  auto moments = [&]() {
    return Moments{weighted_moments(cl.f), weighted_moments(cl.g), weighted_moments(cl.h)};
  };
  auto d_norm = [](const Mat& A, const Mat& C) { return singular_value_bound(A, C).lhs; };

  auto record = [&](double t, const Moments& m) {
    CoupledRecord r;
    r.t = t;
    r.a = m.f.a;
    r.b = m.g.a;
    r.A = m.f.A;
    r.C = m.g.A;
    r.V_f = m.f.V;
    r.V_g = m.g.V;
    r.V_h = m.h.V;
    r.S = traj.K * m.h.V;
    r.gap2 = (m.f.a - m.g.a).squaredNorm();
    r.neff_f = m.f.n_eff;
    r.neff_g = m.g.n_eff;
    r.neff_h = m.h.n_eff;
    r.int_D_hs2 = int_d;
    r.int_CAC = int_cac;
    r.qv_b = qv_b;
    SingularValueBound sv = singular_value_bound(r.A, r.C);
    r.D_hs2 = sv.lhs;
    r.lambda = sv.lambda;
    r.delta = sv.delta;
    r.op_A = sv.lambda(0);
    r.sv_lhs = sv.lhs;
    r.sv_rhs = sv.rhs;
    r.sv_rhs_signed = sv.rhs_signed;
    traj.records.push_back(std::move(r));
  };

  auto advance = [&](auto&& self, long k, int level, std::uint64_t index, Moments& m) -> void {
    Vec dW = path.increment(static_cast<std::uint64_t>(k), level, index);
    double h = sch.dt / std::ldexp(1.0, level);
    Mat ais = sym_inv_sqrt(m.f.A);
    if (level < sch.max_halvings && (ais * dW).norm() > sch.guard) {
      ++traj.halvings;
      self(self, k, level + 1, 2 * index, m);
      self(self, k, level + 1, 2 * index + 1, m);
      return;
    }
    Mat ainv = ais * ais;
    int_d += d_norm(m.f.A, m.g.A) * h;
    int_cac += symmetrize(m.g.A * ainv * m.g.A) * h;
    Vec a = m.f.a, b = m.g.a;
    cl.f = step_weights(cl.f, a, ais, dW, h);
    cl.g = step_weights(cl.g, b, ais, dW, h);
    cl.h = step_weights(cl.h, 0.5 * (a + b), ais, dW, h);
    m = moments();
    Vec db = m.g.a - b;
    qv_b += db * db.transpose();
  };

  Moments m = moments();
  record(0.0, m);
  const long steps = sch.steps();
  for (long k = 0; k < steps; ++k) {
    advance(advance, k, 0, 0, m);
    double t = static_cast<double>(k + 1) * sch.dt;
    bool stop = false;
    if (m.f.A.trace() < sch.stop_trace * n) {
      stop = true;
      traj.stop_reason = "trace";
    } else if (m.f.n_eff < opt.min_neff_per_dim * n) {
      stop = true;
      traj.stop_reason = "degenerate";
    }
    if ((k + 1) % sch.stride == 0 || stop || k + 1 == steps) record(t, m);
    if (stop) break;
  }
  traj.final_f = detail::tilt_of(cl.f);
  traj.final_g = detail::tilt_of(cl.g);
  traj.final_h = detail::tilt_of(cl.h);
  return traj;
}

inline std::vector<CoupledTrajectory> run_coupled_ensemble(const LogDensity& f, const LogDensity& g,
                                                           const SupConvolution& H, std::uint64_t base_seed, int runs,
                                                           const CouplingOptions& opt = {}) {
  if (opt.check_inputs) check_coupling_inputs(f, g, opt);
  CouplingOptions inner = opt;
  inner.check_inputs = false;
  std::vector<CoupledTrajectory> out(runs);
  parallel_for(static_cast<std::size_t>(runs), [&](std::size_t r) {
    out[r] = run_coupled(f, g, H, derive_seed(base_seed, static_cast<std::uint64_t>(r), 0xc0), inner);
  });
  return out;
}

namespace detail {

inline std::size_t longest(const std::vector<CoupledTrajectory>& runs) {
  std::size_t k = 0;
  for (const auto& r : runs) k = std::max(k, r.records.size());
  return k;
}

// Per-run value at grid index k, frozen after the run stops.
template <class F>
std::vector<double> coupled_column(const std::vector<CoupledTrajectory>& runs, std::size_t k, F&& stat) {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(stat(r.records[std::min(k, r.records.size() - 1)]));
  return out;
}

inline const CoupledTrajectory& longest_run(const std::vector<CoupledTrajectory>& runs) {
  return *std::max_element(runs.begin(), runs.end(),
                           [](const auto& x, const auto& y) { return x.records.size() < y.records.size(); });
}

}  // namespace detail

// Optional stopping: mean |a - b|^2 = mean int ||D||_HS^2 at the stopping time
// (the per-grid-time series is reported), plus per-run realized covariation of b against int C A^{-1} C.
inline CheckReport drift_diagnostic(const std::vector<CoupledTrajectory>& runs, double rel_tol = 0.10,
                                    double qv_tol = 0.20) {
  if (runs.size() < 100)
    throw Error(ErrorCode::insufficient_runs, "need at least 100 coupled runs, got " + std::to_string(runs.size()));
  const std::size_t steps = detail::longest(runs);
  const auto& ref = detail::longest_run(runs);
  CheckReport rep;
  rep.name = "optional_stopping";
  auto compare = [&](const std::vector<double>& lhs, const std::vector<double>& rhs) {
    std::vector<double> diff(lhs.size());
    for (std::size_t i = 0; i < lhs.size(); ++i) diff[i] = lhs[i] - rhs[i];
    double ml = stats::mean(lhs), mr = stats::mean(rhs), se = stats::stderr_of_mean(diff);
    double allowed = rel_tol * mr + 3 * se + 1e-14;
    return std::tuple{ml, mr, se, std::abs(ml - mr) / allowed};
  };
  int pointwise_bad = 0;
  Json series = Json::array();
  for (std::size_t k = 0; k < steps; ++k) {
    auto [ml, mr, se, ratio] =
        compare(detail::coupled_column(runs, k, [](const CoupledRecord& r) { return r.gap2; }),
                detail::coupled_column(runs, k, [](const CoupledRecord& r) { return r.int_D_hs2; }));
    pointwise_bad += ratio > 1;
    series.push_back({{"t", ref.records[k].t}, {"mean_gap2", ml}, {"mean_int_D", mr}, {"paired_stderr", se},
                      {"ok", ratio <= 1}});
  }
  // the identity proper: at each run's stopping time
  std::vector<double> gap_end, int_end;
  for (const auto& r : runs) {
    gap_end.push_back(r.records.back().gap2);
    int_end.push_back(r.records.back().int_D_hs2);
  }
  auto [ml, mr, se, worst] = compare(gap_end, int_end);
  bool ok = worst <= 1;
  int qv_bad = 0;
  double qv_worst = 0;
  for (const auto& r : runs) {
    const auto& last = r.records.back();
    double want = last.int_CAC.trace(), got = last.qv_b.trace();
    double rel = want > 0 ? std::abs(got - want) / want : std::abs(got);
    qv_worst = std::max(qv_worst, rel);
    qv_bad += rel > qv_tol && !(want == 0 && got == 0);
  }
  bool qv_ok = qv_bad == 0;
  int stopped = 0;
  for (const auto& r : runs) stopped += r.stop_reason != "t_max";
  rep.statistic = worst;
  rep.status = verdict(ok && qv_ok);
  rep.details["identity_ok"] = ok;
  rep.details["mean_gap2_at_stop"] = ml;
  rep.details["mean_int_D_at_stop"] = mr;
  rep.details["paired_stderr_at_stop"] = se;
  rep.details["pointwise_exceedances"] = pointwise_bad;
  rep.details["covariation_ok"] = qv_ok;
  rep.details["covariation_worst_relative_error"] = qv_worst;
  rep.details["covariation_failures"] = qv_bad;
  rep.details["runs_stopped_early"] = stopped;
  rep.details["series"] = series;
  return rep;
}

// S_t martingale: mean S_t = K(f,g) within 3 stderr at each grid t.
inline CheckReport s_martingale_check(const std::vector<CoupledTrajectory>& runs) {
  if (runs.size() < 30) throw Error(ErrorCode::insufficient_runs, "need at least 30 coupled runs");
  const double K = runs.front().K;
  const std::size_t steps = detail::longest(runs);
  const auto& ref = detail::longest_run(runs);
  CheckReport rep;
  rep.name = "s_martingale";
  bool ok = true;
  double worst = 0;
  Json series = Json::array();
  for (std::size_t k = 0; k < steps; ++k) {
    auto s = detail::coupled_column(runs, k, [](const CoupledRecord& r) { return r.S; });
    double m = stats::mean(s), se = stats::stderr_of_mean(s);
    double z = std::abs(m - K) / std::max(se, 1e-12 * K);
    ok = ok && z <= 3;
    worst = std::max(worst, z);
    series.push_back({{"t", ref.records[k].t}, {"mean_S", m}, {"stderr", se}});
  }
  rep.statistic = worst;
  rep.status = verdict(ok);
  rep.details["K"] = K;
  rep.details["series"] = series;
  return rep;
}

// ||D||_HS^2 <= sum lambda_j delta_j^2 at every record.
inline CheckReport singular_value_check(const std::vector<CoupledTrajectory>& runs, double tol = 1e-8) {
  CheckReport rep;
  rep.name = "singular_value_bound";
  double worst = -INFINITY, worst_signed = -INFINITY;
  long records = 0, signed_violations = 0;
  for (const auto& run : runs)
    for (const auto& r : run.records) {
      double scale = std::max(1.0, r.sv_rhs);
      worst = std::max(worst, (r.sv_lhs - r.sv_rhs) / scale);
      double ws = (r.sv_lhs - r.sv_rhs_signed) / std::max(1.0, r.sv_rhs_signed);
      worst_signed = std::max(worst_signed, ws);
      signed_violations += ws > tol;
      ++records;
    }
  rep.statistic = worst;
  rep.status = verdict(worst <= tol);
  rep.details["records"] = records;
  rep.details["max_relative_excess"] = worst;
  rep.details["signed_order_max_excess"] = worst_signed;
  rep.details["signed_order_violations"] = signed_violations;
  return rep;
}

// f = g: a_t = b_t and D_t = 0 at every record.
inline CheckReport identical_coupling_check(const std::vector<CoupledTrajectory>& runs, double tol = 1e-10) {
  CheckReport rep;
  rep.name = "identical_coupling";
  double worst = 0;
  for (const auto& run : runs)
    for (const auto& r : run.records)
      worst = std::max({worst, (r.a - r.b).norm(), std::sqrt(r.D_hs2), std::abs(r.S - run.K * r.V_f)});
  rep.statistic = worst;
  rep.status = verdict(worst <= tol);
  return rep;
}

struct WassersteinReport {
  double T = 0;
  double eps = 0;
  double bound = 0;            // sqrt(mean over kept of (sqrt TrA + sqrt TrC + |a-b|)^2)
  double bound_subprob = 0;    // same sum divided by all runs (indicator form)
  double product_cost = 0;     // sqrt(mean over kept of TrA + TrC + |a-b|^2)
  double transport_part = 0;   // sqrt(sum over kept |a-b|^2 / runs)
  double spread_part = 0;      // sqrt(sum over kept (sqrt TrA + sqrt TrC)^2 / runs)
  double kept_fraction = 0;
  double mass_cap_frequency = 0;
  double doob_bound = 0;
  double mass_cap = 0;
  int runs = 0;
  int kept = 0;
  CheckReport doob;
};

// Sub-probability coupling: keep runs whose S stays below 2K/eps (and,
// when given, ||A_s|| <= op_cap e^{-s}) up to time T.
inline WassersteinReport wasserstein_coupling(const std::vector<CoupledTrajectory>& runs, double T, double eps,
                                              std::optional<double> op_cap = std::nullopt) {
  if (runs.empty()) throw Error(ErrorCode::insufficient_runs, "no coupled runs");
  if (!(eps > 0 && eps < 1)) throw Error(ErrorCode::constraint_violation, "eps must lie in (0,1)");
  WassersteinReport w;
  w.T = T;
  w.eps = eps;
  w.runs = static_cast<int>(runs.size());
  const double K = runs.front().K;
  w.mass_cap = 2 * K / eps;
  w.doob_bound = 1 - eps / 2;
  double sum_bound = 0, sum_prod = 0, sum_gap = 0, sum_spread = 0;
  int mass_ok = 0;
  for (const auto& run : runs) {
    double max_s = -INFINITY;
    bool op_ok = true;
    const CoupledRecord* last = &run.records.front();
    for (const auto& r : run.records) {
      if (r.t > T + 1e-12) break;
      last = &r;
      max_s = std::max(max_s, r.S);
      if (op_cap && r.op_A > *op_cap * std::exp(-r.t)) op_ok = false;
    }
    bool cap_ok = max_s <= w.mass_cap;
    mass_ok += cap_ok;
    if (!(cap_ok && op_ok)) continue;
    ++w.kept;
    double spread = std::sqrt(std::max(last->A.trace(), 0.0)) + std::sqrt(std::max(last->C.trace(), 0.0));
    double gap = std::sqrt(last->gap2);
    sum_bound += (spread + gap) * (spread + gap);
    sum_prod += last->A.trace() + last->C.trace() + last->gap2;
    sum_gap += last->gap2;
    sum_spread += spread * spread;
  }
  if (w.kept == 0) throw Error(ErrorCode::all_runs_excluded, "no run satisfies the coupling event");
  w.kept_fraction = static_cast<double>(w.kept) / w.runs;
  w.mass_cap_frequency = static_cast<double>(mass_ok) / w.runs;
  w.bound = std::sqrt(sum_bound / w.kept);
  w.bound_subprob = std::sqrt(sum_bound / w.runs);
  w.product_cost = std::sqrt(sum_prod / w.kept);
  w.transport_part = std::sqrt(sum_gap / w.runs);
  w.spread_part = std::sqrt(sum_spread / w.runs);
  double p = w.mass_cap_frequency;
  double se = std::sqrt(std::max(p * (1 - p), 1.0 / w.runs) / w.runs);
  w.doob.name = "doob_mass_cap";
  w.doob.statistic = p;
  w.doob.ci = {p - 3 * se, p + 3 * se};
  w.doob.status = verdict(p + 3 * se >= w.doob_bound);
  w.doob.details["doob_bound"] = w.doob_bound;
  w.doob.details["mass_cap"] = w.mass_cap;
  return w;
}

inline Json to_json(const WassersteinReport& w) {
  return {{"T", w.T},
          {"eps", w.eps},
          {"bound", w.bound},
          {"bound_subprobability", w.bound_subprob},
          {"product_cost", w.product_cost},
          {"transport_part", w.transport_part},
          {"spread_part", w.spread_part},
          {"kept_fraction", w.kept_fraction},
          {"mass_cap", w.mass_cap},
          {"mass_cap_frequency", w.mass_cap_frequency},
          {"doob_bound", w.doob_bound},
          {"runs", w.runs},
          {"kept", w.kept},
          {"doob_check", to_json(w.doob)}};
}

// Pointwise h_t(x) >= sup_y sqrt(f_t(x+y) g_t(x-y)) on a grid of x and y;
// returns the largest violation in log units.
inline double domination_violation(const CoupledTrajectory& run, const LogDensity& f, const LogDensity& g,
                                   const SupConvolution& H, const std::vector<Vec>& xs, const std::vector<Vec>& ys) {
  double worst = -INFINITY;
  for (const Vec& x : xs) {
    double lh = H.log_value(x);
    if (!std::isfinite(lh)) continue;
    lh += run.final_h.log_factor(x);
    for (const Vec& y : ys) {
      double r = 0.5 * (f.log_eval(x + y) + run.final_f.log_factor(x + y) + g.log_eval(x - y) +
                        run.final_g.log_factor(x - y));
      if (std::isfinite(r)) worst = std::max(worst, r - lh);
    }
  }
  return worst;
}

struct BmOptions {
  CouplingOptions coupling;
  int runs = 50;
  std::uint64_t seed = 41;
  Eigen::Index geometry_samples = 200000;
  SupOptions sup;
};

struct BmReport {
  int n = 0;
  double eps = 0;
  double V = 1;        // Vol((K+T)/2) for unit-volume K, T
  double L = 1;        // isotropic constant of K
  double theta = 0;    // W2 bound of the sub-probability coupling (isotropic units)
  double excluded = 0; // mass dropped by the coupling event
  double delta = 0;    // achieved: Vol(K \ T_delta) <= eps
  double delta_transport = 0;
  double delta_spread = 0;
  double delta_star = 0;  // geometric: smallest delta with Vol(K cap T_delta) >= 1 - eps
  double ratio = 0;       // delta / delta_star
  WassersteinReport coupling;
};

inline Json to_json(const BmReport& r) {
  return {{"n", r.n},
          {"eps", r.eps},
          {"V", r.V},
          {"L", r.L},
          {"theta", r.theta},
          {"excluded_mass", r.excluded},
          {"delta", r.delta},
          {"delta_transport", r.delta_transport},
          {"delta_spread", r.delta_spread},
          {"delta_star", r.delta_star},
          {"ratio", finite_or_null(r.ratio)},
          {"coupling", to_json(r.coupling)}};
}

// Smallest delta with Vol(K cap T_delta) >= 1 - eps, by Monte Carlo over K.
inline double geometric_delta(const BodySpec& K, const BodySpec& T, int n, double eps, Eigen::Index samples,
                              std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xd5);
  std::vector<double> d(static_cast<std::size_t>(samples));
  for (auto& v : d) v = body::distance(T, body::sample(K, n, rng));
  return stats::quantile(std::move(d), 1 - eps);
}

// Full pipeline on unit-volume copies of K and T: sup-convolution, coupled
// localization with the eps/2 mass cap, W2 bound, then Markov.
inline BmReport bm_stability_experiment(const BodySpec& K0, const BodySpec& T0, int n, double eps,
                                        const BmOptions& opt = {}) {
  if (n > 3) throw Error(ErrorCode::quadrature_dimension_too_high, "stability experiment needs n <= 3");
  if (!(eps > 0 && eps < 1)) throw Error(ErrorCode::constraint_violation, "eps must lie in (0,1)");
  BodySpec K = unit_volume(K0, n), T = unit_volume(T0, n);
  LogDensity fk = make_density(K, n), gt = make_density(T, n);
  MomentSummary mk = exact_moments(fk);
  double L = std::sqrt(mk.covariance.trace() / n);
  if ((mk.covariance - L * L * Mat::Identity(n, n)).norm() > 1e-6 * L * L || mk.barycenter.norm() > 1e-6 * L)
    throw Error(ErrorCode::anisotropic_input, "K must be centered with scalar covariance");
  AffineMap shrink{Mat::Identity(n, n) / L, Vec::Zero(n)};
  bool same = K.shape == T.shape && K.side == T.side && K.radius == T.radius && K.offset == T.offset &&
              K.axes == T.axes;
  LogDensity f = fk.mapped(shrink), g = same ? f : gt.mapped(shrink);

  BmReport rep;
  rep.n = n;
  rep.eps = eps;
  rep.L = L;
  SupConvolution H = sup_convolution(f, g, opt.sup);
  rep.V = H.total_mass;
  CouplingOptions co = opt.coupling;
  co.isotropy_tol = std::max(co.isotropy_tol, 1e-6);
  auto runs = run_coupled_ensemble(f, g, H, opt.seed, opt.runs, co);
  double T_end = 0;
  for (const auto& r : runs) T_end = std::max(T_end, r.records.back().t);
  rep.coupling = wasserstein_coupling(runs, T_end, eps / 2);
  rep.excluded = 1 - rep.coupling.kept_fraction;
  if (!(rep.excluded < eps)) throw Error(ErrorCode::all_runs_excluded, "coupling event dropped more than eps");
  double alpha = 1 / std::sqrt(eps - rep.excluded);
  rep.theta = rep.coupling.bound_subprob;
  rep.delta = L * alpha * rep.theta;
  rep.delta_transport = L * alpha * rep.coupling.transport_part;
  rep.delta_spread = L * alpha * rep.coupling.spread_part;
  rep.delta_star = geometric_delta(K, T, n, eps, opt.geometry_samples, opt.seed);
  rep.ratio = rep.delta_star > 0 ? rep.delta / rep.delta_star : INFINITY;
  return rep;
}

}  // namespace sloc
