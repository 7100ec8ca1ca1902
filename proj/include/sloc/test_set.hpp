#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <utility>

#include "body.hpp"
#include "linalg.hpp"

namespace sloc {

// Measurable test set E, optionally replaced by its metric extension
// E_r = {x : d(x, E) <= r}.
class TestSet {
 public:
  enum class Kind { halfspace, ellipsoid, body, custom_indicator };

  // {x : <normal, x> <= offset}; the normal is normalized.
  static TestSet halfspace(const Vec& normal, double offset) {
    TestSet s(Kind::halfspace, static_cast<int>(normal.size()));
    double len = normal.norm();
    s.normal_ = normal / len;
    s.offset_ = offset / len;
    return s;
  }
  static TestSet whole_space(int n) {
    return halfspace(Vec::Unit(n, 0), std::numeric_limits<double>::infinity());
  }
  // {x : sum_i (<R_i, x - center> / axes_i)^2 <= 1}, R orthogonal with rows R_i.
  static TestSet ellipsoid(const Vec& center, const Vec& axes, const Mat& rotation) {
    TestSet s(Kind::ellipsoid, static_cast<int>(center.size()));
    s.center_ = center;
    s.rotation_ = rotation;
    s.spec_ = BodySpec::ellipsoid(std::vector<double>(axes.data(), axes.data() + axes.size()));
    return s;
  }
  static TestSet ellipsoid(const Vec& center, const Vec& axes) {
    return ellipsoid(center, axes, Mat::Identity(center.size(), center.size()));
  }
  static TestSet body(const BodySpec& spec, const Vec& center) {
    TestSet s(Kind::body, static_cast<int>(center.size()));
    s.center_ = center;
    s.rotation_ = Mat::Identity(center.size(), center.size());
    s.spec_ = spec;
    return s;
  }
  static TestSet custom(int n, std::function<bool(const Vec&)> membership) {
    TestSet s(Kind::custom_indicator, n);
    s.member_ = std::move(membership);
    return s;
  }

  Kind kind() const { return kind_; }
  int dim() const { return n_; }
  const Vec& normal() const { return normal_; }
  double offset() const { return offset_; }
  double extension() const { return ext_; }

  bool contains(const Vec& x) const {
    switch (kind_) {
      case Kind::halfspace: return normal_.dot(x) <= offset_;
      case Kind::custom_indicator:
        if (ext_ > 0) throw Error(ErrorCode::unsupported, "extension of a custom indicator");
        return member_(x);
      default:
        if (ext_ == 0) return body::contains(spec_, rotation_ * (x - center_));
        return distance(x) <= ext_;
    }
  }

  // Distance to the unextended set.
  double distance(const Vec& x) const {
    switch (kind_) {
      case Kind::halfspace: return std::max(0.0, normal_.dot(x) - (offset_ - ext_));
      case Kind::custom_indicator: throw Error(ErrorCode::unsupported, "distance to a custom indicator");
      default: return body::distance(spec_, rotation_ * (x - center_));
    }
  }

  TestSet extended(double r) const {
    if (r < 0) throw Error(ErrorCode::invalid_spec, "extension radius must be non-negative");
    TestSet s = *this;
    if (kind_ == Kind::halfspace) {
      s.offset_ += r;
      s.ext_ += r;
    } else {
      if (kind_ == Kind::custom_indicator) throw Error(ErrorCode::unsupported, "extension of a custom indicator");
      s.ext_ += r;
    }
    return s;
  }

  // (axis, cut) when the set is a halfspace with a coordinate normal.
  std::optional<std::pair<int, double>> axis_cut() const {
    if (kind_ != Kind::halfspace || !std::isfinite(offset_)) return std::nullopt;
    for (int i = 0; i < n_; ++i)
      if (std::abs(std::abs(normal_(i)) - 1) < 1e-15) return std::make_pair(i, offset_ * normal_(i));
    return std::nullopt;
  }

 private:
  TestSet(Kind k, int n) : kind_(k), n_(n) {}

  Kind kind_;
  int n_;
  Vec normal_;
  double offset_ = 0;
  double ext_ = 0;
  Vec center_;
  Mat rotation_;
  BodySpec spec_;
  std::function<bool(const Vec&)> member_;
};

}  // namespace sloc
