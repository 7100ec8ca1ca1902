#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sloc/measures.hpp"

using namespace sloc;

namespace {

void expect_moments_close(const MomentSummary& a, const MomentSummary& b, double rel) {
  double scale = std::max(1.0, b.covariance.norm());
  EXPECT_NEAR(a.mass, b.mass, rel);
  EXPECT_LT((a.barycenter - b.barycenter).norm(), rel * scale);
  EXPECT_LT((a.covariance - b.covariance).norm(), rel * scale);
}

}  // namespace

TEST(MakeDensity, StandardGaussianNormalization) {
  LogDensity g = make_density(Builtin::standard_gaussian, 1);
  EXPECT_NEAR(g.log_eval(Vec::Zero(1)), -0.5 * std::log(2 * std::numbers::pi), 1e-15);
  EXPECT_EQ(g.kind(), DensityKind::standard_gaussian);
  EXPECT_LT(g.truncated_mass(), 1e-20);
}

TEST(MakeDensity, UnitCubeIndicator) {
  LogDensity c = make_density(BodySpec::cube(1.0), 2);
  EXPECT_EQ(c.kind(), DensityKind::uniform_body);
  EXPECT_NEAR(c.log_eval(Vec::Constant(2, 0.3)), 0.0, 1e-14);
  EXPECT_EQ(c.log_eval(Vec::Constant(2, 0.6)), -INFINITY);
}

TEST(MakeDensity, UnitVolumeBallRadius) {
  BodySpec b = unit_volume(BodySpec::ball(1.0), 2);
  EXPECT_NEAR(b.radius, 1 / std::sqrt(std::numbers::pi), 1e-14);
}

TEST(MakeDensity, RejectsBadSpecs) {
  EXPECT_THROW(make_density(BodySpec::ball(-1.0), 2), Error);
  try {
    make_density(BodySpec::ellipsoid({1.0, 2.0}), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
  }
  EXPECT_THROW(make_density(Builtin::standard_gaussian, 0), Error);
}

TEST(MakeDensity, SupportRadiusHolds) {
  Rng rng = make_rng(5);
  for (int n : {1, 2, 3}) {
    std::vector<LogDensity> battery = {
        make_density(Builtin::standard_gaussian, n), make_density(Builtin::exponential_product, n),
        make_density(BodySpec::cube(1.0), n), make_density(BodySpec::ball(0.7), n),
        make_density(BodySpec::simplex(1.0), n)};
    for (const auto& f : battery) {
      double R = f.support_radius();
      EXPECT_LE(R, std::sqrt(n) * exponential_half_width(n) + 1e-9);
      for (int k = 0; k < 200; ++k) {
        Vec u = normal_vector(rng, n).normalized();
        EXPECT_EQ(f.log_eval(1.01 * R * u), -INFINITY);
      }
    }
  }
}

TEST(Isotropize, UniformUnitInterval) {
  LogDensity u = make_custom_density(1, [](const Vec& x) { return (x(0) >= 0 && x(0) <= 1) ? 0.0 : -INFINITY; }, 1.0);
  MomentSummary m = quadrature_moments(u, 64);
  EXPECT_NEAR(m.barycenter(0), 0.5, 1e-12);
  EXPECT_NEAR(m.covariance(0, 0), 1.0 / 12, 1e-12);
  auto [iso, map] = isotropize(u, m);
  EXPECT_NEAR(map.M(0, 0), std::sqrt(12.0), 1e-10);
  EXPECT_NEAR(map.b(0), 0.5, 1e-12);
  MomentSummary mi = quadrature_moments(iso, 64);
  EXPECT_NEAR(mi.covariance(0, 0), 1.0, 1e-8);
}

TEST(Isotropize, UnitCubeThreeDimensions) {
  LogDensity c = make_density(BodySpec::cube(1.0), 3);
  auto [iso, map] = isotropize(c);
  EXPECT_LT((map.M - std::sqrt(12.0) * Mat::Identity(3, 3)).norm(), 1e-12);
  EXPECT_LT(map.b.norm(), 1e-15);
  EXPECT_EQ(iso.kind(), DensityKind::uniform_body);
}

TEST(Isotropize, GaussianIsIdentityAndIdempotent) {
  LogDensity g = make_density(Builtin::standard_gaussian, 3);
  auto [iso, map] = isotropize(g);
  EXPECT_TRUE(map.is_identity(1e-12));
  LogDensity e = make_density(Builtin::exponential_product, 2).mapped({Mat::Identity(2, 2) * 3.0, Vec::Ones(2)});
  auto [e1, m1] = isotropize(e);
  auto [e2, m2] = isotropize(e1);
  EXPECT_LT((m2.M - Mat::Identity(2, 2)).norm(), 1e-8);
  EXPECT_LT(m2.b.norm(), 1e-8);
}

TEST(Isotropize, SingularCovarianceRejected) {
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  MomentSummary m{1, Vec::Zero(2), Mat::Zero(2, 2)};
  m.covariance(0, 0) = 1;
  try {
    isotropize(g, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::singular_covariance);
  }
}

TEST(ExactMoments, Examples) {
  MomentSummary g = exact_moments(make_density(Builtin::standard_gaussian, 5));
  EXPECT_NEAR(g.mass, 1, 1e-15);
  EXPECT_LT((g.covariance - Mat::Identity(5, 5)).norm(), 1e-15);
  // Exp(1) - 1 after standardization: (1, 0, 1)
  MomentSummary e = exact_moments(make_density(Builtin::exponential_product, 1));
  EXPECT_NEAR(e.barycenter(0), 0, 1e-15);
  EXPECT_NEAR(e.covariance(0, 0), 1, 1e-15);
  MomentSummary c = exact_moments(make_density(BodySpec::cube(1.0), 2));
  EXPECT_LT((c.covariance - Mat::Identity(2, 2) / 12).norm(), 1e-15);
  EXPECT_THROW(exact_moments(make_custom_density(4, [](const Vec&) { return 0.0; }, 1.0)), Error);
}

TEST(ExactMoments, TruncatedExponentialMatchesGammaFormulas) {
  // independent oracle: raw moments of Exp(1) truncated at L via numerical
  // integration of y^k e^{-y}
  LogDensity e = make_density(Builtin::exponential_product, 1);
  auto fac = e.product_factors()->front();
  double L = fac.truncation();
  auto integral = [&](int k) {
    Rule1D r = panel_rule(0, L, {1, 3, 6, 12, 24}, 300);
    double s = 0;
    for (std::size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * std::pow(r.nodes[i], k) * std::exp(-r.nodes[i]);
    return s;
  };
  double z = integral(0), m = integral(1) / z, v = integral(2) / z - m * m;
  double c3 = integral(3) / z - 3 * m * integral(2) / z + 2 * m * m * m;
  EXPECT_NEAR(fac.central_moment(3), c3 / std::pow(v, 1.5), 1e-10);
  EXPECT_NEAR(fac.hi(), exponential_half_width(1), 1e-9);
  EXPECT_NEAR(fac.central_moment(3), 2.0, 1e-8);
  EXPECT_NEAR(fac.central_moment(4), 9.0, 1e-8);
}

TEST(Quadrature, MatchesClosedFormMomentsOnBuiltins) {
  for (int n : {1, 2, 3}) {
    std::vector<LogDensity> battery = {make_density(Builtin::standard_gaussian, n),
                                       make_density(Builtin::exponential_product, n),
                                       make_density(BodySpec::cube(1.0), n),
                                       make_density(BodySpec::halfspace_truncation(1.0, 0.2), n)};
    if (n >= 2) {
      std::vector<double> axes = {1.0, 0.5, 2.0};
      axes.resize(n);
      battery.push_back(make_density(BodySpec::ball(0.8), n));
      battery.push_back(make_density(BodySpec::ellipsoid(axes), n));
    }
    if (n == 2) battery.push_back(make_density(BodySpec::simplex(1.5), n));
    for (const auto& f : battery) {
      SCOPED_TRACE(f.describe() + " n=" + std::to_string(n));
      expect_moments_close(quadrature_moments(f, 64), *f.moment_oracle(), 1e-6);
    }
  }
}

TEST(Quadrature, SimplexThreeDimensions) {
  LogDensity s = make_density(BodySpec::simplex(1.0), 3);
  expect_moments_close(quadrature_moments(s, 64), *s.moment_oracle(), 1e-10);
}

TEST(Quadrature, CubeTruncatedByBallArea) {
  BodySpec s = BodySpec::cube_truncated_by_ball(1.0, 0.6);
  double h = 0.5, r = 0.6;
  double seg = r * r * std::acos(h / r) - h * std::sqrt(r * r - h * h);
  EXPECT_NEAR(*body::exact_volume(s, 2), std::numbers::pi * r * r - 4 * seg, 1e-14);
  LogDensity d = make_density(s, 2);
  EXPECT_NEAR(quadrature_moments(d, 64).mass, 1.0, 1e-10);
  Rng rng = make_rng(1);
  int inside = 0, total = 200000;
  for (int k = 0; k < total; ++k) {
    Vec x(2);
    x << uniform01(rng) - 0.5, uniform01(rng) - 0.5;
    inside += body::contains(s, x);
  }
  EXPECT_NEAR(static_cast<double>(inside) / total, *body::exact_volume(s, 2), 0.005);
}

TEST(Quadrature, SimplexCovarianceAgainstSampling) {
  BodySpec s = BodySpec::simplex(1.0);
  Rng rng = make_rng(2);
  const int N = 200000;
  Mat x(3, N);
  for (int k = 0; k < N; ++k) x.col(k) = body::sample(s, 3, rng);
  Vec mean = x.rowwise().mean();
  Mat c = x.colwise() - mean;
  Mat cov = c * c.transpose() / N;
  auto m = body::exact_moments(s, 3);
  EXPECT_LT(mean.norm(), 0.003);
  EXPECT_LT((cov - m->cov).norm(), 0.003);
}

TEST(LogConcavity, BuiltinsPassSpotCheck) {
  for (const auto& f : {make_density(Builtin::standard_gaussian, 3), make_density(Builtin::exponential_product, 2),
                        make_density(BodySpec::simplex(1.0), 2)}) {
    ConcavityReport r = check_log_concavity(f, 11, 1000);
    EXPECT_GT(r.tested, 500);
    EXPECT_EQ(r.violations, 0);
  }
  LogDensity bimodal = make_custom_density(
      1, [](const Vec& x) { return std::log(std::exp(-8 * (x(0) - 1) * (x(0) - 1)) + std::exp(-8 * (x(0) + 1) * (x(0) + 1))); },
      5.0);
  EXPECT_GT(check_log_concavity(bimodal, 11, 1000).violations, 0);
}

TEST(Projection, CappedSimplexAndEllipsoid) {
  BodySpec s = BodySpec::simplex(1.0);
  Rng rng = make_rng(4);
  for (int k = 0; k < 200; ++k) {
    Vec x = 2 * normal_vector(rng, 3);
    Vec p = body::project(s, x);
    Vec z = p.array() + body::simplex_shift(s, 3);
    EXPECT_GE(z.minCoeff(), -1e-12);
    EXPECT_LE(z.sum(), 1 + 1e-12);
    // no body sample is closer than the projection
    for (int j = 0; j < 20; ++j) EXPECT_GE((x - body::sample(s, 3, rng)).norm(), (x - p).norm() - 1e-12);
  }
  BodySpec e = BodySpec::ellipsoid({2.0, 0.5});
  Vec x(2);
  x << 3, 0;
  EXPECT_NEAR(body::project(e, x)(0), 2.0, 1e-9);
}
