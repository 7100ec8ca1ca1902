#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "linalg.hpp"
#include "random.hpp"

namespace sloc {

enum class BodyShape { cube, ball, simplex, ellipsoid, cube_truncated_by_ball, halfspace_truncation };

inline const char* to_string(BodyShape s) {
  switch (s) {
    case BodyShape::cube: return "cube";
    case BodyShape::ball: return "ball";
    case BodyShape::simplex: return "simplex";
    case BodyShape::ellipsoid: return "ellipsoid";
    case BodyShape::cube_truncated_by_ball: return "cube-truncated-by-ball";
    case BodyShape::halfspace_truncation: return "halfspace-truncation";
  }
  return "?";
}

// Convex bodies in canonical position:
//   cube            [-side/2, side/2]^n
//   ball            |x| <= radius
//   simplex         corner simplex of leg `side`, translated to barycenter 0
//   ellipsoid       sum (x_i/axes_i)^2 <= 1
//   cube-truncated  cube(side) intersected with ball(radius)
//   halfspace-trunc cube(side) intersected with {x_1 <= offset}
struct BodySpec {
  BodyShape shape = BodyShape::cube;
  double side = 1.0;
  double radius = 1.0;
  double offset = 0.0;
  std::vector<double> axes;

  static BodySpec cube(double side) { return {BodyShape::cube, side}; }
  static BodySpec ball(double radius) { return {BodyShape::ball, 1.0, radius}; }
  static BodySpec simplex(double side) { return {BodyShape::simplex, side}; }
  static BodySpec ellipsoid(std::vector<double> axes) {
    return {BodyShape::ellipsoid, 1.0, 1.0, 0.0, std::move(axes)};
  }
  static BodySpec cube_truncated_by_ball(double side, double radius) {
    return {BodyShape::cube_truncated_by_ball, side, radius};
  }
  static BodySpec halfspace_truncation(double side, double offset) {
    return {BodyShape::halfspace_truncation, side, 1.0, offset};
  }
};

namespace body {

inline void validate(const BodySpec& s, int n) {
  if (n < 1) throw Error(ErrorCode::invalid_spec, "dimension must be positive");
  auto positive = [](double v, const char* what) {
    if (!(v > 0) || !std::isfinite(v)) throw Error(ErrorCode::invalid_spec, std::string(what) + " must be positive");
  };
  switch (s.shape) {
    case BodyShape::cube:
    case BodyShape::simplex: positive(s.side, "side"); break;
    case BodyShape::ball: positive(s.radius, "radius"); break;
    case BodyShape::ellipsoid:
      if (static_cast<int>(s.axes.size()) != n)
        throw Error(ErrorCode::dimension_mismatch, "ellipsoid has " + std::to_string(s.axes.size()) +
                                                       " axes for dimension " + std::to_string(n));
      for (double a : s.axes) positive(a, "ellipsoid axis");
      break;
    case BodyShape::cube_truncated_by_ball:
      positive(s.side, "side");
      positive(s.radius, "radius");
      break;
    case BodyShape::halfspace_truncation:
      positive(s.side, "side");
      if (!(s.offset > -s.side / 2)) throw Error(ErrorCode::invalid_spec, "halfspace removes the whole cube");
      break;
  }
}

inline double simplex_shift(const BodySpec& s, int n) { return s.side / (n + 1); }

inline bool contains(const BodySpec& s, const Vec& x) {
  const int n = static_cast<int>(x.size());
  switch (s.shape) {
    case BodyShape::cube: return x.cwiseAbs().maxCoeff() <= s.side / 2;
    case BodyShape::ball: return x.squaredNorm() <= s.radius * s.radius;
    case BodyShape::simplex: {
      Vec z = x.array() + simplex_shift(s, n);
      return z.minCoeff() >= 0 && z.sum() <= s.side;
    }
    case BodyShape::ellipsoid: {
      double q = 0;
      for (int i = 0; i < n; ++i) q += (x(i) / s.axes[i]) * (x(i) / s.axes[i]);
      return q <= 1;
    }
    case BodyShape::cube_truncated_by_ball:
      return x.cwiseAbs().maxCoeff() <= s.side / 2 && x.squaredNorm() <= s.radius * s.radius;
    case BodyShape::halfspace_truncation:
      return x.cwiseAbs().maxCoeff() <= s.side / 2 && x(0) <= s.offset;
  }
  return false;
}

inline double unit_ball_volume(int n) {
  return std::pow(std::numbers::pi, n / 2.0) / std::tgamma(n / 2.0 + 1);
}

// Exact volume where a closed form is implemented.
inline std::optional<double> exact_volume(const BodySpec& s, int n) {
  switch (s.shape) {
    case BodyShape::cube: return std::pow(s.side, n);
    case BodyShape::ball: return unit_ball_volume(n) * std::pow(s.radius, n);
    case BodyShape::simplex: return std::pow(s.side, n) / std::tgamma(n + 1.0);
    case BodyShape::ellipsoid: {
      double v = unit_ball_volume(n);
      for (double a : s.axes) v *= a;
      return v;
    }
    case BodyShape::halfspace_truncation:
      return std::pow(s.side, n - 1) * (std::min(s.offset, s.side / 2) + s.side / 2);
    case BodyShape::cube_truncated_by_ball: {
      double h = s.side / 2, r = s.radius;
      if (n == 1) return 2 * std::min(h, r);
      if (r >= h * std::sqrt(static_cast<double>(n))) return std::pow(s.side, n);
      if (r <= h) return unit_ball_volume(n) * std::pow(r, n);
      if (n == 2) {
        double seg = r * r * std::acos(h / r) - h * std::sqrt(r * r - h * h);
        return std::numbers::pi * r * r - 4 * seg;
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

inline BodySpec scaled(BodySpec s, double k) {
  s.side *= k;
  s.radius *= k;
  s.offset *= k;
  for (double& a : s.axes) a *= k;
  return s;
}

// Distance from the origin to the boundary along unit direction u.
inline double radial(const BodySpec& s, const Vec& u) {
  const int n = static_cast<int>(u.size());
  auto cube_r = [&](double h) {
    double m = u.cwiseAbs().maxCoeff();
    return h / m;
  };
  switch (s.shape) {
    case BodyShape::ball: return s.radius;
    case BodyShape::ellipsoid: {
      double q = 0;
      for (int i = 0; i < n; ++i) q += (u(i) / s.axes[i]) * (u(i) / s.axes[i]);
      return 1 / std::sqrt(q);
    }
    case BodyShape::cube: return cube_r(s.side / 2);
    case BodyShape::cube_truncated_by_ball: return std::min(cube_r(s.side / 2), s.radius);
    case BodyShape::simplex: {
      double b = simplex_shift(s, n), r = INFINITY;
      for (int i = 0; i < n; ++i)
        if (u(i) < 0) r = std::min(r, b / -u(i));
      double sum = u.sum();
      if (sum > 0) r = std::min(r, (s.side - n * b) / sum);
      return r;
    }
    case BodyShape::halfspace_truncation: {
      // not star-shaped about 0 in general; callers use the product form
      throw Error(ErrorCode::unsupported, "radial function of a halfspace-truncated cube");
    }
  }
  return 0;
}

// Angles in [0, 2 pi) where the 2D radial function has a kink.
inline std::vector<double> angular_breaks_2d(const BodySpec& s) {
  std::vector<double> out;
  auto angle = [](double x, double y) {
    double a = std::atan2(y, x);
    return a < 0 ? a + 2 * std::numbers::pi : a;
  };
  double h = s.side / 2;
  switch (s.shape) {
    case BodyShape::cube:
      for (double sx : {-1.0, 1.0})
        for (double sy : {-1.0, 1.0}) out.push_back(angle(sx * h, sy * h));
      break;
    case BodyShape::cube_truncated_by_ball: {
      double r = s.radius;
      if (r > h && r < h * std::numbers::sqrt2) {
        double w = std::sqrt(r * r - h * h);
        for (double sx : {-1.0, 1.0})
          for (double sy : {-1.0, 1.0}) {
            out.push_back(angle(sx * h, sy * w));
            out.push_back(angle(sx * w, sy * h));
          }
      } else if (r >= h * std::numbers::sqrt2) {
        for (double sx : {-1.0, 1.0})
          for (double sy : {-1.0, 1.0}) out.push_back(angle(sx * h, sy * h));
      }
      break;
    }
    case BodyShape::simplex: {
      double b = simplex_shift(s, 2);
      out.push_back(angle(-b, -b));
      out.push_back(angle(s.side - b, -b));
      out.push_back(angle(-b, s.side - b));
      break;
    }
    default: break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline Vec project_capped_simplex(const Vec& z, double total) {
  Vec p = z.cwiseMax(0.0);
  if (p.sum() <= total) return p;
  std::vector<double> v(z.data(), z.data() + z.size());
  std::sort(v.begin(), v.end(), std::greater<>());
  double cum = 0, theta = 0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    cum += v[k];
    double t = (cum - total) / static_cast<double>(k + 1);
    if (v[k] > t) theta = t;
  }
  return (z.array() - theta).cwiseMax(0.0);
}

inline Vec project_ellipsoid(const Vec& x, const std::vector<double>& axes) {
  const int n = static_cast<int>(x.size());
  auto g = [&](double t) {
    double q = 0;
    for (int i = 0; i < n; ++i) {
      double v = axes[i] * x(i) / (axes[i] * axes[i] + t);
      q += v * v;
    }
    return q;
  };
  if (g(0) <= 1) return x;
  double amax = *std::max_element(axes.begin(), axes.end());
  double lo = 0, hi = amax * x.norm() + 1e-300;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (g(mid) > 1 ? lo : hi) = mid;
  }
  Vec y(n);
  for (int i = 0; i < n; ++i) y(i) = axes[i] * axes[i] * x(i) / (axes[i] * axes[i] + hi);
  return y;
}

// Euclidean projection onto the body.
inline Vec project(const BodySpec& s, const Vec& x) {
  const int n = static_cast<int>(x.size());
  double h = s.side / 2;
  auto ball = [](const Vec& v, double r) {
    double nv = v.norm();
    return nv <= r ? v : Vec(v * (r / nv));
  };
  switch (s.shape) {
    case BodyShape::cube: return x.cwiseMax(-h).cwiseMin(h);
    case BodyShape::ball: return ball(x, s.radius);
    case BodyShape::ellipsoid: return project_ellipsoid(x, s.axes);
    case BodyShape::simplex: {
      double b = simplex_shift(s, n);
      Vec z = x.array() + b;
      return project_capped_simplex(z, s.side).array() - b;
    }
    case BodyShape::halfspace_truncation: {
      Vec p = x.cwiseMax(-h).cwiseMin(h);
      p(0) = std::min(p(0), s.offset);
      return p;
    }
    case BodyShape::cube_truncated_by_ball: {
      // Dykstra's alternating projections
      Vec y = x, p = Vec::Zero(n), q = Vec::Zero(n);
      for (int it = 0; it < 2000; ++it) {
        Vec yp = (y + p).cwiseMax(-h).cwiseMin(h);
        p = y + p - yp;
        Vec yn = ball(yp + q, s.radius);
        q = yp + q - yn;
        double change = (yn - y).norm();
        y = yn;
        if (change < 1e-15 * (1 + x.norm())) break;
      }
      return y;
    }
  }
  return x;
}

inline double distance(const BodySpec& s, const Vec& x) { return (x - project(s, x)).norm(); }

struct Box {
  Vec lo, hi;
};

inline Box bounding_box(const BodySpec& s, int n) {
  Vec hi(n);
  switch (s.shape) {
    case BodyShape::cube: hi.setConstant(s.side / 2); break;
    case BodyShape::ball: hi.setConstant(s.radius); break;
    case BodyShape::ellipsoid:
      for (int i = 0; i < n; ++i) hi(i) = s.axes[i];
      break;
    case BodyShape::cube_truncated_by_ball: hi.setConstant(std::min(s.side / 2, s.radius)); break;
    case BodyShape::halfspace_truncation: {
      hi.setConstant(s.side / 2);
      Vec lo = -hi;
      hi(0) = std::min(s.offset, s.side / 2);
      return {lo, hi};
    }
    case BodyShape::simplex: {
      double b = simplex_shift(s, n);
      return {Vec::Constant(n, -b), Vec::Constant(n, s.side - b)};
    }
  }
  return {-hi, hi};
}

inline Vec sample(const BodySpec& s, int n, Rng& rng) {
  auto in_ball = [&](double r) {
    Vec g = normal_vector(rng, n);
    return Vec(g.normalized() * (r * std::pow(uniform01(rng), 1.0 / n)));
  };
  switch (s.shape) {
    case BodyShape::cube:
    case BodyShape::halfspace_truncation: {
      Box b = bounding_box(s, n);
      Vec x(n);
      for (int i = 0; i < n; ++i) x(i) = b.lo(i) + (b.hi(i) - b.lo(i)) * uniform01(rng);
      return x;
    }
    case BodyShape::ball: return in_ball(s.radius);
    case BodyShape::ellipsoid: {
      Vec x = in_ball(1.0);
      for (int i = 0; i < n; ++i) x(i) *= s.axes[i];
      return x;
    }
    case BodyShape::simplex: {
      std::exponential_distribution<double> ex;
      Vec e(n + 1);
      for (int i = 0; i <= n; ++i) e(i) = ex(rng);
      return (s.side * e.head(n) / e.sum()).array() - simplex_shift(s, n);
    }
    case BodyShape::cube_truncated_by_ball: {
      double cube_vol = std::pow(s.side, n), ball_vol = unit_ball_volume(n) * std::pow(s.radius, n);
      for (;;) {
        Vec x(n);
        if (cube_vol <= ball_vol) {
          for (int i = 0; i < n; ++i) x(i) = s.side * (uniform01(rng) - 0.5);
        } else {
          x = in_ball(s.radius);
        }
        if (contains(s, x)) return x;
      }
    }
  }
  return Vec::Zero(n);
}

struct BodyMoments {
  Vec mean;
  Mat cov;
};

// Uniform-measure moments in closed form, where implemented.
inline std::optional<BodyMoments> exact_moments(const BodySpec& s, int n) {
  switch (s.shape) {
    case BodyShape::cube:
      return BodyMoments{Vec::Zero(n), Mat::Identity(n, n) * (s.side * s.side / 12)};
    case BodyShape::ball:
      return BodyMoments{Vec::Zero(n), Mat::Identity(n, n) * (s.radius * s.radius / (n + 2))};
    case BodyShape::ellipsoid: {
      Mat c = Mat::Zero(n, n);
      for (int i = 0; i < n; ++i) c(i, i) = s.axes[i] * s.axes[i] / (n + 2);
      return BodyMoments{Vec::Zero(n), c};
    }
    case BodyShape::simplex: {
      double b = simplex_shift(s, n);
      std::vector<Vec> v;
      v.push_back(Vec::Constant(n, -b));
      for (int i = 0; i < n; ++i) {
        Vec e = Vec::Constant(n, -b);
        e(i) += s.side;
        v.push_back(e);
      }
      Mat second = Mat::Zero(n, n);
      Vec sum = Vec::Zero(n);
      for (const Vec& vi : v) {
        second += vi * vi.transpose();
        sum += vi;
      }
      second = (second + sum * sum.transpose()) / ((n + 1.0) * (n + 2.0));
      Vec mean = sum / (n + 1.0);
      return BodyMoments{mean, second - mean * mean.transpose()};
    }
    case BodyShape::halfspace_truncation: {
      double h = s.side / 2, top = std::min(s.offset, h);
      Mat c = Mat::Identity(n, n) * (s.side * s.side / 12);
      c(0, 0) = (top + h) * (top + h) / 12;
      Vec m = Vec::Zero(n);
      m(0) = 0.5 * (top - h);
      return BodyMoments{m, c};
    }
    case BodyShape::cube_truncated_by_ball: return std::nullopt;
  }
  return std::nullopt;
}

inline double circumradius(const BodySpec& s, int n) {
  Box b = bounding_box(s, n);
  return b.lo.cwiseAbs().cwiseMax(b.hi.cwiseAbs()).norm();
}

}  // namespace body
}  // namespace sloc
