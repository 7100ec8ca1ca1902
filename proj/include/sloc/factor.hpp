#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "error.hpp"
#include "random.hpp"
#include "stats.hpp"

namespace sloc {

enum class FactorShape { gaussian, uniform, exponential };

// One-dimensional log-concave factor X = loc + scale * (Y - m0) / s0 where Y
// is a truncated standard law and (m0, s0) are its exact mean and deviation.
class Factor1D {
 public:
  static Factor1D standard_gaussian(double half_width) {
    if (!(half_width > 0)) throw Error(ErrorCode::invalid_spec, "gaussian truncation must be positive");
    Factor1D f(FactorShape::gaussian, half_width);
    return f;
  }
  static Factor1D standard_uniform() { return Factor1D(FactorShape::uniform, std::sqrt(3.0)); }
  // Exp(1) truncated so that the standardized support ends at half_width.
  static Factor1D standard_exponential(double half_width) {
    if (!(half_width > 0)) throw Error(ErrorCode::invalid_spec, "exponential cutoff must be positive");
    double cut = half_width + 1;
    for (int it = 0; it < 50; ++it) {
      Factor1D f(FactorShape::exponential, cut);
      double next = f.m0_ + half_width * f.s0_;
      if (std::abs(next - cut) < 1e-14 * cut) break;
      cut = next;
    }
    return Factor1D(FactorShape::exponential, cut);
  }
  static Factor1D uniform_interval(double lo, double hi) {
    if (!(hi > lo)) throw Error(ErrorCode::invalid_spec, "empty interval");
    return standard_uniform().affine(0.5 * (lo + hi), (hi - lo) / std::sqrt(12.0));
  }

  Factor1D affine(double loc, double scale) const {
    if (!(scale > 0)) throw Error(ErrorCode::invalid_spec, "factor scale must be positive");
    Factor1D f = *this;
    f.loc_ = loc + scale * loc_;
    f.scale_ = scale * scale_;
    return f;
  }

  FactorShape shape() const { return shape_; }
  double loc() const { return loc_; }
  double scale() const { return scale_; }
  double truncation() const { return trunc_; }

  double lo() const { return to_x(raw_lo()); }
  double hi() const { return to_x(raw_hi()); }

  double log_pdf(double x) const {
    double y = to_y(x);
    if (y < raw_lo() || y > raw_hi()) return -INFINITY;
    return raw_log_pdf(y) + std::log(s0_ / scale_);
  }
  double pdf(double x) const { return std::exp(log_pdf(x)); }

  double cdf(double x) const {
    double y = to_y(x);
    if (y <= raw_lo()) return 0.0;
    if (y >= raw_hi()) return 1.0;
    switch (shape_) {
      case FactorShape::gaussian:
        return (stats::normal_cdf(y) - stats::normal_cdf(-trunc_)) / z_;
      case FactorShape::uniform:
        return (y + trunc_) / (2 * trunc_);
      case FactorShape::exponential:
        return -std::expm1(-y) / z_;
    }
    return 0;
  }

  double quantile(double u) const {
    double y = 0;
    switch (shape_) {
      case FactorShape::gaussian:
        y = stats::normal_quantile(stats::normal_cdf(-trunc_) + u * z_);
        break;
      case FactorShape::uniform:
        y = -trunc_ + 2 * trunc_ * u;
        break;
      case FactorShape::exponential:
        y = -std::log1p(-u * z_);
        break;
    }
    return to_x(std::clamp(y, raw_lo(), raw_hi()));
  }

  double sample(Rng& rng) const { return quantile(uniform01(rng)); }

  double mean() const { return loc_; }
  double variance() const { return scale_ * scale_; }

  // Central moment of order k <= 4 of X.
  double central_moment(int k) const {
    auto r = raw_moments();
    double m = r[1];
    double c2 = r[2] - m * m;
    double c3 = r[3] - 3 * m * r[2] + 2 * m * m * m;
    double c4 = r[4] - 4 * m * r[3] + 6 * m * m * r[2] - 3 * m * m * m * m;
    double c[] = {1.0, 0.0, c2, c3, c4};
    return c[k] * std::pow(scale_ / s0_, k);
  }

  // log pdf = alpha + beta x - gamma x^2 / 2 on the support.
  struct Quadratic {
    double alpha, beta, gamma;
  };
  Quadratic quadratic() const {
    double k = s0_ / scale_;  // dy/dx
    double y0 = m0_ - k * loc_;  // y = y0 + k x
    double base = std::log(k);
    switch (shape_) {
      case FactorShape::gaussian:
        return {base - std::log(z_) - 0.5 * std::log(2 * std::numbers::pi) - 0.5 * y0 * y0, -y0 * k, k * k};
      case FactorShape::uniform:
        return {base - std::log(2 * trunc_), 0, 0};
      case FactorShape::exponential:
        return {base - std::log(z_) - y0, -k, 0};
    }
    return {0, 0, 0};
  }

  double log_pdf_range() const {
    switch (shape_) {
      case FactorShape::gaussian: return 0.5 * trunc_ * trunc_;
      case FactorShape::uniform: return 0.0;
      case FactorShape::exponential: return trunc_;
    }
    return 0;
  }

  bool same_as(const Factor1D& o) const {
    return shape_ == o.shape_ && loc_ == o.loc_ && scale_ == o.scale_ && trunc_ == o.trunc_;
  }

 private:
  Factor1D(FactorShape shape, double trunc) : shape_(shape), trunc_(trunc) {
    switch (shape_) {
      case FactorShape::gaussian: z_ = std::erf(trunc_ / std::numbers::sqrt2); break;
      case FactorShape::uniform: z_ = 1; break;
      case FactorShape::exponential: z_ = -std::expm1(-trunc_); break;
    }
    auto r = raw_moments();
    m0_ = r[1];
    s0_ = std::sqrt(r[2] - r[1] * r[1]);
  }

  double raw_lo() const { return shape_ == FactorShape::exponential ? 0.0 : -trunc_; }
  double raw_hi() const { return trunc_; }
  double to_x(double y) const { return loc_ + scale_ * (y - m0_) / s0_; }
  double to_y(double x) const { return m0_ + s0_ * (x - loc_) / scale_; }

  double raw_log_pdf(double y) const {
    switch (shape_) {
      case FactorShape::gaussian: return -0.5 * y * y - 0.5 * std::log(2 * std::numbers::pi) - std::log(z_);
      case FactorShape::uniform: return -std::log(2 * trunc_);
      case FactorShape::exponential: return -y - std::log(z_);
    }
    return 0;
  }

  // E[Y^k], k = 0..4, of the truncated raw law.
  std::array<double, 5> raw_moments() const {
    const double h = trunc_;
    switch (shape_) {
      case FactorShape::gaussian: {
        double phi = stats::normal_pdf(h);
        double i2 = z_ - 2 * h * phi;
        double i4 = 3 * i2 - 2 * h * h * h * phi;
        return {1, 0, i2 / z_, 0, i4 / z_};
      }
      case FactorShape::uniform:
        return {1, 0, h * h / 3, 0, h * h * h * h / 5};
      case FactorShape::exponential: {
        // E[Y^k] = k!/Z * (1 - e^{-h} sum_{j<=k} h^j/j!)
        std::array<double, 5> out{};
        double fact = 1, partial = 0, term = 1;
        for (int k = 0; k <= 4; ++k) {
          if (k > 0) {
            fact *= k;
            term *= h / k;
          }
          partial += term;
          out[k] = fact * (1 - std::exp(-h) * partial) / z_;
        }
        return out;
      }
    }
    return {};
  }

  FactorShape shape_;
  double trunc_;
  double z_ = 1;
  double m0_ = 0, s0_ = 1;
  double loc_ = 0, scale_ = 1;
};

}  // namespace sloc
