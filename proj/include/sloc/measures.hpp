#pragma once

#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "body.hpp"
#include "error.hpp"
#include "factor.hpp"
#include "linalg.hpp"
#include "quadrature.hpp"
#include "random.hpp"

namespace sloc {

enum class DensityKind { standard_gaussian, uniform_body, product_1d, custom };

inline const char* to_string(DensityKind k) {
  switch (k) {
    case DensityKind::standard_gaussian: return "standard-gaussian";
    case DensityKind::uniform_body: return "uniform-body";
    case DensityKind::product_1d: return "product-1d";
    case DensityKind::custom: return "custom";
  }
  return "?";
}

struct MomentSummary {
  double mass = 1.0;
  Vec barycenter;
  Mat covariance;
};

// y = M (x - b)
struct AffineMap {
  Mat M;
  Vec b;

  static AffineMap identity(int n) { return {Mat::Identity(n, n), Vec::Zero(n)}; }
  Vec apply(const Vec& x) const { return M * (x - b); }
  Vec inverse(const Vec& y) const { return b + M.partialPivLu().solve(y); }
  // (this after first)
  AffineMap after(const AffineMap& first) const {
    return {M * first.M, first.b + first.M.partialPivLu().solve(b)};
  }
  bool is_identity(double tol = 0.0) const {
    return (M - Mat::Identity(M.rows(), M.cols())).cwiseAbs().maxCoeff() <= tol &&
           (b.size() == 0 || b.cwiseAbs().maxCoeff() <= tol);
  }
};

// Nodes (columns) and log of (quadrature weight x density).
struct QuadratureRule {
  Mat nodes;
  Vec log_weights;
};

// Exponential factor exp(<c,x> - <Bx,x>/2).
struct Tilt {
  Vec c;
  Mat B;
};

using AxisCuts = std::vector<std::vector<double>>;

inline double default_half_width(int n) { return std::max(std::sqrt(static_cast<double>(n)), 10.0); }
// Exponential tails carry visible fourth-moment mass well past 10.
inline double exponential_half_width(int n) { return std::max(default_half_width(n), 36.0); }

namespace detail {

class Model {
 public:
  virtual ~Model() = default;
  virtual int dim() const = 0;
  virtual DensityKind kind() const = 0;
  virtual double log_eval(const Vec& x) const = 0;
  virtual double support_radius() const = 0;
  virtual bool has_sampler() const = 0;
  virtual Vec sample(Rng& rng) const = 0;
  virtual std::optional<MomentSummary> moments() const = 0;
  // `tilt` only narrows the integration region; it is not applied to weights.
  virtual QuadratureRule rule(int order, const Tilt* tilt, const AxisCuts& cuts) const = 0;
  virtual std::string describe() const = 0;
  virtual double truncated_mass() const { return 0.0; }
};

inline QuadratureRule tensor_rule(const std::vector<Rule1D>& axes, const std::vector<std::vector<double>>& logw) {
  const int n = static_cast<int>(axes.size());
  Eigen::Index total = 1;
  for (const auto& a : axes) total *= static_cast<Eigen::Index>(a.nodes.size());
  QuadratureRule r{Mat(n, total), Vec(total)};
  std::vector<std::size_t> idx(n, 0);
  for (Eigen::Index k = 0; k < total; ++k) {
    double lw = 0;
    for (int i = 0; i < n; ++i) {
      r.nodes(i, k) = axes[i].nodes[idx[i]];
      lw += logw[i][idx[i]];
    }
    r.log_weights(k) = lw;
    for (int i = n - 1; i >= 0; --i) {
      if (++idx[i] < axes[i].nodes.size()) break;
      idx[i] = 0;
    }
  }
  return r;
}

inline std::vector<double> with_zero(std::vector<double> cuts) {
  cuts.push_back(0.0);
  return cuts;
}

class ProductModel final : public Model {
 public:
  explicit ProductModel(std::vector<Factor1D> factors) : f_(std::move(factors)) {}

  const std::vector<Factor1D>& factors() const { return f_; }
  int dim() const override { return static_cast<int>(f_.size()); }
  DensityKind kind() const override {
    bool gauss = true, unif = true;
    for (const auto& f : f_) {
      gauss = gauss && f.shape() == FactorShape::gaussian && f.loc() == 0 && f.scale() == 1;
      unif = unif && f.shape() == FactorShape::uniform;
    }
    if (gauss) return DensityKind::standard_gaussian;
    if (unif) return DensityKind::uniform_body;
    return DensityKind::product_1d;
  }
  double log_eval(const Vec& x) const override {
    double s = 0;
    for (int i = 0; i < dim(); ++i) s += f_[i].log_pdf(x(i));
    return s;
  }
  double support_radius() const override {
    double s = 0;
    for (const auto& f : f_) s += std::pow(std::max(std::abs(f.lo()), std::abs(f.hi())), 2);
    return std::sqrt(s);
  }
  bool has_sampler() const override { return true; }
  Vec sample(Rng& rng) const override {
    Vec x(dim());
    for (int i = 0; i < dim(); ++i) x(i) = f_[i].sample(rng);
    return x;
  }
  std::optional<MomentSummary> moments() const override {
    MomentSummary m{1.0, Vec(dim()), Mat::Zero(dim(), dim())};
    for (int i = 0; i < dim(); ++i) {
      m.barycenter(i) = f_[i].mean();
      m.covariance(i, i) = f_[i].variance();
    }
    return m;
  }
  double truncated_mass() const override {
    double kept = 1;
    for (const auto& f : f_)
      if (f.shape() == FactorShape::gaussian) kept *= std::erf(f.truncation() / std::numbers::sqrt2);
      else if (f.shape() == FactorShape::exponential) kept *= -std::expm1(-f.truncation());
    return 1 - kept;
  }

  QuadratureRule rule(int order, const Tilt* tilt, const AxisCuts& cuts) const override {
    const int n = dim();
    Vec lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      lo(i) = f_[i].lo();
      hi(i) = f_[i].hi();
    }
    if (tilt) crop(*tilt, lo, hi);
    std::vector<Rule1D> axes;
    std::vector<std::vector<double>> logw;
    for (int i = 0; i < n; ++i) {
      std::vector<double> c = with_zero(i < static_cast<int>(cuts.size()) ? cuts[i] : std::vector<double>{});
      Rule1D r = panel_rule(lo(i), hi(i), c, order);
      std::vector<double> lw(r.nodes.size());
      for (std::size_t k = 0; k < r.nodes.size(); ++k) lw[k] = std::log(r.weights[k]) + f_[i].log_pdf(r.nodes[k]);
      axes.push_back(std::move(r));
      logw.push_back(std::move(lw));
    }
    return tensor_rule(axes, logw);
  }

  std::string describe() const override {
    std::string s = "product(";
    for (std::size_t i = 0; i < f_.size(); ++i) {
      if (i) s += ",";
      s += f_[i].shape() == FactorShape::gaussian ? "gaussian" : f_[i].shape() == FactorShape::uniform ? "uniform" : "exponential";
    }
    return s + ")";
  }

 private:
  // Shrinks [lo, hi] to the region where the tilted log density is within
  // 46 of its maximum over the box.
  void crop(const Tilt& t, Vec& lo, Vec& hi) const {
    const int n = dim();
    Vec g = t.c;
    Mat P = symmetrize(t.B);
    for (int i = 0; i < n; ++i) {
      auto q = f_[i].quadratic();
      g(i) += q.beta;
      P(i, i) += q.gamma;
    }
    Vec ev = sym_eigenvalues(P);
    if (!(ev(n - 1) > 1e-8 * (1 + std::abs(ev(0))))) return;
    auto e = [&](const Vec& x) { return g.dot(x) - 0.5 * x.dot(P * x); };
    Vec x = (0.5 * (lo + hi));
    for (int sweep = 0; sweep < 200; ++sweep) {
      double move = 0;
      for (int i = 0; i < n; ++i) {
        double r = g(i) - P.row(i).dot(x) + P(i, i) * x(i);
        double xi = std::clamp(r / P(i, i), lo(i), hi(i));
        move = std::max(move, std::abs(xi - x(i)));
        x(i) = xi;
      }
      if (move < 1e-14 * (1 + x.norm())) break;
    }
    Mat Pinv = P.inverse();
    Vec m = Pinv * g;
    double rho = e(m) - e(x) + 46.0;
    Vec nlo(n), nhi(n);
    for (int i = 0; i < n; ++i) {
      double w = std::sqrt(2 * rho * Pinv(i, i));
      nlo(i) = std::max(lo(i), m(i) - w);
      nhi(i) = std::min(hi(i), m(i) + w);
      if (!(nhi(i) > nlo(i))) return;
    }
    lo = nlo;
    hi = nhi;
  }

  std::vector<Factor1D> f_;
};

class BodyModel final : public Model {
 public:
  BodyModel(BodySpec spec, int n) : s_(std::move(spec)), n_(n) {
    body::validate(s_, n_);
    if (auto v = body::exact_volume(s_, n_)) {
      log_vol_ = std::log(*v);
    } else {
      QuadratureRule r = polar(96);
      log_vol_ = std::log(r.log_weights.array().exp().sum());
    }
  }

  const BodySpec& spec() const { return s_; }
  double log_volume() const { return log_vol_; }
  int dim() const override { return n_; }
  DensityKind kind() const override { return DensityKind::uniform_body; }
  double log_eval(const Vec& x) const override { return body::contains(s_, x) ? -log_vol_ : -INFINITY; }
  double support_radius() const override { return body::circumradius(s_, n_); }
  bool has_sampler() const override { return true; }
  Vec sample(Rng& rng) const override { return body::sample(s_, n_, rng); }
  std::optional<MomentSummary> moments() const override {
    auto m = body::exact_moments(s_, n_);
    if (!m) return std::nullopt;
    return MomentSummary{1.0, m->mean, m->cov};
  }
  QuadratureRule rule(int order, const Tilt*, const AxisCuts&) const override {
    if (s_.shape == BodyShape::ellipsoid) {
      // image of the unit-ball rule under the axis scaling
      QuadratureRule r = BodyModel(BodySpec::ball(1.0), n_).polar(order);
      double log_jac = 0;
      for (int i = 0; i < n_; ++i) {
        r.nodes.row(i) *= s_.axes[i];
        log_jac += std::log(s_.axes[i]);
      }
      r.log_weights.array() += log_jac - log_vol_;
      return r;
    }
    if (s_.shape == BodyShape::simplex) return collapsed_simplex(order);
    QuadratureRule r = polar(order);
    r.log_weights.array() -= log_vol_;
    return r;
  }
  std::string describe() const override { return std::string("uniform(") + to_string(s_.shape) + ")"; }

 private:
  // Collapsed-coordinate (Duffy) tensor rule: polynomial integrands over the
  // simplex are integrated exactly.
  QuadratureRule collapsed_simplex(int order) const {
    if (n_ > 3) throw Error(ErrorCode::quadrature_dimension_too_high, "simplex quadrature needs n <= 3");
    const int m = std::max(8, order / 2);
    Rule1D r = panel_rule(0, 1, {}, m);
    std::vector<Rule1D> axes(n_, r);
    std::vector<std::vector<double>> logw(n_);
    for (int k = 0; k < n_; ++k)
      for (std::size_t j = 0; j < r.nodes.size(); ++j)
        logw[k].push_back(std::log(r.weights[j]) + (n_ - 1 - k) * std::log1p(-r.nodes[j]));
    QuadratureRule u = tensor_rule(axes, logw);
    const double shift = body::simplex_shift(s_, n_);
    for (Eigen::Index c = 0; c < u.nodes.cols(); ++c) {
      double rest = s_.side;
      for (int k = 0; k < n_; ++k) {
        double uk = u.nodes(k, c);
        u.nodes(k, c) = rest * uk - shift;
        rest *= 1 - uk;
      }
    }
    u.log_weights.array() += n_ * std::log(s_.side) - log_vol_;
    return u;
  }

  // Star-shaped polar rule about the origin with unit density.
  QuadratureRule polar(int order) const {
    if (n_ > 3) throw Error(ErrorCode::quadrature_dimension_too_high, "polar quadrature needs n <= 3");
    std::vector<Vec> pts;
    std::vector<double> lw;
    const int mr = std::max(8, order / 2);
    const Rule1D& gr = gauss_legendre(mr);
    auto ray = [&](const Vec& u, double wang) {
      double rho = body::radial(s_, u);
      for (int j = 0; j < mr; ++j) {
        double r = 0.5 * rho * (1 + gr.nodes[j]);
        double w = 0.5 * rho * gr.weights[j] * std::pow(r, n_ - 1) * wang;
        pts.push_back(r * u);
        lw.push_back(std::log(w));
      }
    };
    if (n_ == 1) {
      for (double sgn : {-1.0, 1.0}) ray(Vec::Constant(1, sgn), 1.0);
    } else if (n_ == 2) {
      std::vector<double> breaks = body::angular_breaks_2d(s_);
      const double two_pi = 2 * std::numbers::pi;
      std::vector<double> edges = breaks;
      if (edges.empty()) edges.push_back(0.0);
      edges.push_back(edges.front() + two_pi);
      // refine to at least 8 panels
      while (edges.size() < 9) {
        std::size_t widest = 0;
        for (std::size_t k = 0; k + 1 < edges.size(); ++k)
          if (edges[k + 1] - edges[k] > edges[widest + 1] - edges[widest]) widest = k;
        edges.insert(edges.begin() + widest + 1, 0.5 * (edges[widest] + edges[widest + 1]));
      }
      const int panels = static_cast<int>(edges.size()) - 1;
      const int ma = std::max(6, 2 * order / panels);
      const Rule1D& ga = gauss_legendre(ma);
      for (int p = 0; p < panels; ++p) {
        double half = 0.5 * (edges[p + 1] - edges[p]), mid = 0.5 * (edges[p + 1] + edges[p]);
        for (int k = 0; k < ma; ++k) {
          double th = mid + half * ga.nodes[k];
          Vec u(2);
          u << std::cos(th), std::sin(th);
          ray(u, half * ga.weights[k]);
        }
      }
    } else {
      Rule1D rz = panel_rule(-1, 1, {-0.5, 0.0, 0.5}, std::max(8, order / 2));
      std::vector<double> phi_cuts;
      for (int k = 1; k < 8; ++k) phi_cuts.push_back(k * std::numbers::pi / 4);
      Rule1D rp = panel_rule(0, 2 * std::numbers::pi, phi_cuts, std::max(16, order));
      for (std::size_t i = 0; i < rz.nodes.size(); ++i)
        for (std::size_t j = 0; j < rp.nodes.size(); ++j) {
          double z = rz.nodes[i], s = std::sqrt(1 - z * z);
          Vec u(3);
          u << s * std::cos(rp.nodes[j]), s * std::sin(rp.nodes[j]), z;
          ray(u, rz.weights[i] * rp.weights[j]);
        }
    }
    QuadratureRule r{Mat(n_, static_cast<Eigen::Index>(pts.size())), Vec(static_cast<Eigen::Index>(pts.size()))};
    for (std::size_t k = 0; k < pts.size(); ++k) {
      r.nodes.col(static_cast<Eigen::Index>(k)) = pts[k];
      r.log_weights(static_cast<Eigen::Index>(k)) = lw[k];
    }
    return r;
  }

  BodySpec s_;
  int n_;
  double log_vol_ = 0;
};

class CustomModel final : public Model {
 public:
  CustomModel(int n, std::function<double(const Vec&)> log_eval, double radius,
              std::function<Vec(Rng&)> sampler)
      : n_(n), fn_(std::move(log_eval)), r_(radius), sampler_(std::move(sampler)) {
    if (n < 1) throw Error(ErrorCode::invalid_spec, "dimension must be positive");
    if (!(radius > 0)) throw Error(ErrorCode::invalid_spec, "custom densities need a positive support radius");
  }
  int dim() const override { return n_; }
  DensityKind kind() const override { return DensityKind::custom; }
  double log_eval(const Vec& x) const override { return x.norm() > r_ ? -INFINITY : fn_(x); }
  double support_radius() const override { return r_; }
  bool has_sampler() const override { return static_cast<bool>(sampler_); }
  Vec sample(Rng& rng) const override {
    if (!sampler_) throw Error(ErrorCode::unsupported, "custom density has no sampler");
    return sampler_(rng);
  }
  std::optional<MomentSummary> moments() const override { return std::nullopt; }
  QuadratureRule rule(int order, const Tilt*, const AxisCuts& cuts) const override {
    if (n_ > 3) throw Error(ErrorCode::quadrature_dimension_too_high, "grid quadrature needs n <= 3");
    std::vector<Rule1D> axes;
    std::vector<std::vector<double>> logw;
    for (int i = 0; i < n_; ++i) {
      Rule1D r = panel_rule(-r_, r_, with_zero(i < static_cast<int>(cuts.size()) ? cuts[i] : std::vector<double>{}), order);
      std::vector<double> lw(r.nodes.size());
      for (std::size_t k = 0; k < r.nodes.size(); ++k) lw[k] = std::log(r.weights[k]);
      axes.push_back(std::move(r));
      logw.push_back(std::move(lw));
    }
    QuadratureRule grid = tensor_rule(axes, logw);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < grid.nodes.cols(); ++k) {
      double v = log_eval(grid.nodes.col(k));
      grid.log_weights(k) += v;
      if (std::isfinite(grid.log_weights(k))) keep.push_back(k);
    }
    QuadratureRule out{Mat(n_, static_cast<Eigen::Index>(keep.size())), Vec(static_cast<Eigen::Index>(keep.size()))};
    for (std::size_t j = 0; j < keep.size(); ++j) {
      out.nodes.col(static_cast<Eigen::Index>(j)) = grid.nodes.col(keep[j]);
      out.log_weights(static_cast<Eigen::Index>(j)) = grid.log_weights(keep[j]);
    }
    return out;
  }
  std::string describe() const override { return "custom"; }

 private:
  int n_;
  std::function<double(const Vec&)> fn_;
  double r_;
  std::function<Vec(Rng&)> sampler_;
};

}  // namespace detail

// Immutable handle: a base model in canonical coordinates, pushed forward by
// an affine map and optionally multiplied by a normalized Gaussian tilt
// (the tilt is stored in base coordinates).
class LogDensity {
 public:
  LogDensity() = default;
  explicit LogDensity(std::shared_ptr<const detail::Model> model)
      : model_(std::move(model)),
        map_(AffineMap::identity(model_->dim())),
        minv_(Mat::Identity(model_->dim(), model_->dim())),
        c0_(Vec::Zero(model_->dim())),
        b0_(Mat::Zero(model_->dim(), model_->dim())) {}

  int dim() const { return model_->dim(); }

  DensityKind kind() const {
    DensityKind k = model_->kind();
    if (tilted_) return DensityKind::custom;
    if (k == DensityKind::standard_gaussian && !map_.is_identity()) return DensityKind::custom;
    if (k == DensityKind::product_1d && !is_diagonal(map_.M)) return DensityKind::custom;
    return k;
  }

  double log_eval(const Vec& y) const {
    if (y.size() != dim()) throw Error(ErrorCode::dimension_mismatch, "evaluation point has wrong dimension");
    Vec x = map_.b + minv_ * y;
    double v = model_->log_eval(x);
    if (!std::isfinite(v)) return -INFINITY;
    return v + c0_.dot(x) - 0.5 * x.dot(b0_ * x) - log_norm0_ - log_det_;
  }

  double support_radius() const {
    return op_norm(map_.M) * (model_->support_radius() + map_.b.norm());
  }

  bool has_sampler() const { return !tilted_ && model_->has_sampler(); }

  Vec sample(Rng& rng) const {
    if (!has_sampler()) throw Error(ErrorCode::unsupported, "density has no exact sampler");
    return map_.apply(model_->sample(rng));
  }

  Mat sample(Eigen::Index count, Rng& rng) const {
    Mat out(dim(), count);
    for (Eigen::Index k = 0; k < count; ++k) out.col(k) = sample(rng);
    return out;
  }

  std::optional<MomentSummary> moment_oracle() const {
    if (tilted_) {
      auto g = gaussian_law();
      if (!g) return std::nullopt;
      return MomentSummary{1.0, g->first, g->second};
    }
    auto m = model_->moments();
    if (!m) return std::nullopt;
    return MomentSummary{m->mass, map_.apply(m->barycenter), map_.M * m->covariance * map_.M.transpose()};
  }

  // Mean and covariance when the density is an exact Gaussian (truncation
  // at the default radius is ignored).
  std::optional<std::pair<Vec, Mat>> gaussian_law() const {
    if (model_->kind() != DensityKind::standard_gaussian) return std::nullopt;
    const int n = dim();
    Mat cov = (Mat::Identity(n, n) + b0_).inverse();
    Vec mean = cov * c0_;
    return std::make_pair(map_.apply(mean), Mat(map_.M * cov * map_.M.transpose()));
  }

  // Rule for integrating against this density in its own coordinates.
  // `hint` is a tilt in these coordinates used to narrow the region;
  // `cuts` are per-axis breakpoints (honoured when the map is diagonal).
  QuadratureRule quadrature(int order, const Tilt* hint = nullptr, const AxisCuts& cuts = {}) const {
    if (dim() > 3) throw Error(ErrorCode::quadrature_dimension_too_high, "quadrature needs n <= 3");
    const int n = dim();
    Tilt total{c0_, b0_};
    if (hint) {
      Mat bx = map_.M.transpose() * hint->B * map_.M;
      total.c += map_.M.transpose() * hint->c + bx * map_.b;
      total.B += bx;
    }
    AxisCuts base_cuts;
    if (is_diagonal(map_.M)) {
      base_cuts.resize(n);
      for (int i = 0; i < n && i < static_cast<int>(cuts.size()); ++i)
        for (double c : cuts[i]) base_cuts[i].push_back(map_.b(i) + c / map_.M(i, i));
    }
    bool use_tilt = hint || tilted_;
    QuadratureRule r = model_->rule(order, use_tilt ? &total : nullptr, base_cuts);
    if (tilted_) {
      for (Eigen::Index k = 0; k < r.nodes.cols(); ++k) {
        Vec x = r.nodes.col(k);
        r.log_weights(k) += c0_.dot(x) - 0.5 * x.dot(b0_ * x) - log_norm0_;
      }
    }
    r.nodes = map_.M * (r.nodes.colwise() - map_.b);
    return r;
  }

  // Push-forward under y' = extra.M (y - extra.b).
  LogDensity mapped(const AffineMap& extra) const {
    if (extra.M.rows() != dim()) throw Error(ErrorCode::dimension_mismatch, "affine map has wrong dimension");
    LogDensity out = *this;
    out.map_ = extra.after(map_);
    out.minv_ = out.map_.M.inverse();
    out.log_det_ = log_abs_det(out.map_.M);
    return out;
  }

  // Density proportional to exp(<c,y> - <By,y>/2) f(y) / V, with log V supplied.
  LogDensity tilted(const Vec& c, const Mat& B, double log_v) const {
    const Mat& M = map_.M;
    const Vec& b = map_.b;
    Mat bx = M.transpose() * B * M;
    Vec mc = M.transpose() * c;
    LogDensity out = *this;
    out.c0_ += mc + bx * b;
    out.b0_ += bx;
    double konst = -mc.dot(b) - 0.5 * b.dot(bx * b);
    out.log_norm0_ += log_v - konst;
    out.tilted_ = out.tilted_ || c.squaredNorm() > 0 || B.squaredNorm() > 0 || log_v != 0;
    return out;
  }

  bool same_as(const LogDensity& o) const {
    return model_ == o.model_ && map_.M == o.map_.M && map_.b == o.map_.b && c0_ == o.c0_ && b0_ == o.b0_ &&
           log_norm0_ == o.log_norm0_;
  }

  bool is_tilted() const { return tilted_; }
  const AffineMap& map() const { return map_; }
  const detail::Model& model() const { return *model_; }
  std::string describe() const { return model_->describe(); }
  double truncated_mass() const { return model_->truncated_mass(); }

  // Effective 1D factors when the density is an untilted product in
  // these coordinates.
  std::optional<std::vector<Factor1D>> product_factors() const {
    auto* p = dynamic_cast<const detail::ProductModel*>(model_.get());
    if (!p || tilted_ || !is_diagonal(map_.M)) return std::nullopt;
    std::vector<Factor1D> out;
    for (int i = 0; i < dim(); ++i) {
      double m = map_.M(i, i);
      if (!(m > 0)) return std::nullopt;
      out.push_back(p->factors()[i].affine(-m * map_.b(i), m));
    }
    return out;
  }

  // Canonical body and map when the density is uniform on a convex body.
  struct UniformBody {
    BodySpec spec;
    AffineMap map;
  };
  std::optional<UniformBody> uniform_body() const {
    if (tilted_) return std::nullopt;
    if (auto* b = dynamic_cast<const detail::BodyModel*>(model_.get())) return UniformBody{b->spec(), map_};
    if (auto* p = dynamic_cast<const detail::ProductModel*>(model_.get())) {
      const int n = dim();
      Mat w = Mat::Zero(n, n);
      Vec center(n);
      for (int i = 0; i < n; ++i) {
        const Factor1D& f = p->factors()[i];
        if (f.shape() != FactorShape::uniform) return std::nullopt;
        w(i, i) = f.hi() - f.lo();
        center(i) = 0.5 * (f.hi() + f.lo());
      }
      AffineMap to_box{w, -w.inverse() * center};
      return UniformBody{BodySpec::cube(1.0), map_.after(to_box)};
    }
    return std::nullopt;
  }

 private:
  std::shared_ptr<const detail::Model> model_;
  AffineMap map_;
  Mat minv_;
  double log_det_ = 0;
  Vec c0_;
  Mat b0_;
  double log_norm0_ = 0;
  bool tilted_ = false;
};

enum class Builtin { standard_gaussian, exponential_product, uniform_product };

inline LogDensity make_density(Builtin tag, int n) {
  if (n < 1) throw Error(ErrorCode::invalid_spec, "dimension must be positive");
  const double h = default_half_width(n);
  std::vector<Factor1D> f;
  for (int i = 0; i < n; ++i) {
    switch (tag) {
      case Builtin::standard_gaussian: f.push_back(Factor1D::standard_gaussian(h)); break;
      case Builtin::exponential_product: f.push_back(Factor1D::standard_exponential(exponential_half_width(n))); break;
      case Builtin::uniform_product: f.push_back(Factor1D::standard_uniform()); break;
    }
  }
  return LogDensity(std::make_shared<detail::ProductModel>(std::move(f)));
}

inline LogDensity make_density(const BodySpec& spec, int n) {
  body::validate(spec, n);
  if (spec.shape == BodyShape::cube || spec.shape == BodyShape::halfspace_truncation) {
    body::Box box = body::bounding_box(spec, n);
    std::vector<Factor1D> f;
    for (int i = 0; i < n; ++i) f.push_back(Factor1D::uniform_interval(box.lo(i), box.hi(i)));
    return LogDensity(std::make_shared<detail::ProductModel>(std::move(f)));
  }
  if (n == 1) {
    body::Box box = body::bounding_box(spec, n);
    return LogDensity(std::make_shared<detail::ProductModel>(
        std::vector<Factor1D>{Factor1D::uniform_interval(box.lo(0), box.hi(0))}));
  }
  return LogDensity(std::make_shared<detail::BodyModel>(spec, n));
}

inline LogDensity make_custom_density(int n, std::function<double(const Vec&)> log_eval, double support_radius,
                                      std::function<Vec(Rng&)> sampler = {}) {
  return LogDensity(std::make_shared<detail::CustomModel>(n, std::move(log_eval), support_radius, std::move(sampler)));
}

inline std::optional<double> body_volume(const BodySpec& spec, int n) {
  if (auto v = body::exact_volume(spec, n)) return v;
  if (n > 3) return std::nullopt;
  return std::exp(detail::BodyModel(spec, n).log_volume());
}

// Rescaled copy of the body with volume 1.
inline BodySpec unit_volume(const BodySpec& spec, int n) {
  auto v = body_volume(spec, n);
  if (!v) throw Error(ErrorCode::unsupported, "volume unavailable");
  BodySpec s = body::scaled(spec, std::pow(*v, -1.0 / n));
  if (spec.shape == BodyShape::cube_truncated_by_ball && n == 3) {
    // polar volume is approximate in 3D; one fixed-point pass tightens it
    auto v2 = body_volume(s, n);
    s = body::scaled(s, std::pow(*v2, -1.0 / n));
  }
  return s;
}

inline MomentSummary quadrature_moments(const LogDensity& f, int order = 64) {
  QuadratureRule r = f.quadrature(order);
  double m = r.log_weights.maxCoeff();
  if (!std::isfinite(m)) throw Error(ErrorCode::non_normalizable, "density vanishes on the quadrature grid");
  Vec w = (r.log_weights.array() - m).exp();
  double s = w.sum();
  double mass = s * std::exp(m);
  if (!(mass > 0) || !std::isfinite(mass)) throw Error(ErrorCode::non_normalizable, "quadrature mass not finite");
  w /= s;
  Vec mean = r.nodes * w;
  Mat centered = r.nodes.colwise() - mean;
  Mat cov = centered * w.asDiagonal() * centered.transpose();
  return {mass, mean, symmetrize(cov)};
}

inline MomentSummary exact_moments(const LogDensity& f) {
  if (auto m = f.moment_oracle()) return *m;
  if (f.dim() > 3) throw Error(ErrorCode::quadrature_dimension_too_high, "no moment oracle and n > 3");
  return quadrature_moments(f, 64);
}

inline std::pair<LogDensity, AffineMap> isotropize(const LogDensity& f, const MomentSummary& m) {
  const int n = f.dim();
  if (m.covariance.rows() != n) throw Error(ErrorCode::dimension_mismatch, "moment summary has wrong dimension");
  Vec ev = sym_eigenvalues(m.covariance);
  if (!(ev(n - 1) > 1e-12 * std::max(ev(0), 1e-300)) || !(ev(n - 1) > 1e-14))
    throw Error(ErrorCode::singular_covariance, "covariance is not positive definite");
  AffineMap map{sym_inv_sqrt(m.covariance), m.barycenter};
  return {f.mapped(map), map};
}

inline std::pair<LogDensity, AffineMap> isotropize(const LogDensity& f) { return isotropize(f, exact_moments(f)); }

struct ConcavityReport {
  int tested = 0;
  int violations = 0;
  double worst = 0;
};

inline ConcavityReport check_log_concavity(const LogDensity& f, std::uint64_t seed, int triples = 1000,
                                           double tol = 1e-9) {
  Rng rng = make_rng(seed, 0x1c);
  ConcavityReport rep;
  const double R = f.support_radius();
  auto draw = [&]() -> Vec {
    if (f.has_sampler()) return f.sample(rng);
    Vec x(f.dim());
    for (int i = 0; i < f.dim(); ++i) x(i) = R * (2 * uniform01(rng) - 1);
    return x;
  };
  for (int k = 0; k < triples; ++k) {
    Vec x = draw(), y = draw();
    double lx = f.log_eval(x), ly = f.log_eval(y);
    if (!std::isfinite(lx) || !std::isfinite(ly)) continue;
    double lam = uniform01(rng);
    double lz = f.log_eval(lam * x + (1 - lam) * y);
    ++rep.tested;
    double gap = lam * lx + (1 - lam) * ly - lz;
    rep.worst = std::max(rep.worst, gap);
    if (gap > tol * (1 + std::abs(lz))) ++rep.violations;
  }
  return rep;
}

}  // namespace sloc
