#include <gtest/gtest.h>

#include <cmath>

#include "sloc/tilt.hpp"

using namespace sloc;

TEST(TiltedMoments, GaussianOrigin) {
  LogDensity g = make_density(Builtin::standard_gaussian, 3);
  TiltedMoments m = tilted_moments(g, TiltState::origin(3), MomentStrategy::closed_form());
  EXPECT_NEAR(m.V, 1, 1e-15);
  EXPECT_LT(m.a.norm(), 1e-15);
  EXPECT_LT((m.A - Mat::Identity(3, 3)).norm(), 1e-15);
}

TEST(TiltedMoments, GaussianTimeTwo) {
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  TiltState s{Vec::Zero(2), Mat::Identity(2, 2) * (std::exp(2.0) - 1), 2};
  TiltedMoments m = tilted_moments(g, s, MomentStrategy::closed_form());
  EXPECT_LT((m.A - std::exp(-2.0) * Mat::Identity(2, 2)).norm(), 1e-14);
}

TEST(TiltedMoments, UniformIntervalExponentialTilt) {
  LogDensity u = make_density(BodySpec::cube(1.0), 1);
  TiltState s{Vec::Ones(1), Mat::Zero(1, 1), 0};
  TiltedMoments m = tilted_moments(u, s, MomentStrategy::quadrature(64));
  double v = 2 * std::sinh(0.5);
  double first = -0.5 * std::exp(0.5) + 1.5 * std::exp(-0.5);
  auto prim2 = [](double x) { return (x * x - 2 * x + 2) * std::exp(x); };
  double ex2 = (prim2(0.5) - prim2(-0.5)) / v;
  EXPECT_NEAR(m.V, v, 1e-13);
  EXPECT_NEAR(m.V, 1.0422, 1e-4);
  EXPECT_NEAR(m.a(0), first / v, 1e-13);
  EXPECT_NEAR(m.A(0, 0), ex2 - (first / v) * (first / v), 1e-13);
}

TEST(TiltedMoments, QuadratureAgreesWithClosedFormOnGaussian) {
  Rng rng = make_rng(17);
  for (int n : {1, 2, 3}) {
    LogDensity g = make_density(Builtin::standard_gaussian, n);
    for (int trial = 0; trial < 10; ++trial) {
      Mat r = Mat::Random(n, n);
      TiltState s{normal_vector(rng, n), r * r.transpose() * 5 * uniform01(rng), 1};
      TiltedMoments exact = tilted_moments(g, s, MomentStrategy::closed_form());
      TiltedMoments quad = tilted_moments(g, s, MomentStrategy::quadrature(64));
      EXPECT_NEAR(quad.V / exact.V, 1, 1e-5);
      EXPECT_LT((quad.a - exact.a).norm(), 1e-5 * std::max(1.0, exact.a.norm()));
      EXPECT_LT((quad.A - exact.A).norm(), 1e-5 * exact.A.norm());
    }
  }
}

TEST(TiltedMoments, LargeTiltIsStable) {
  LogDensity e = make_density(Builtin::exponential_product, 2);
  TiltState s{Vec::Constant(2, 400.0), Mat::Identity(2, 2) * 200, 5};
  TiltedMoments m = tilted_moments(e, s, MomentStrategy::quadrature(64));
  EXPECT_TRUE(std::isfinite(m.log_V));
  EXPECT_GT(lambda_min(m.A), 0);
  // exponent is a Gaussian in x times e^{-x}: mean (c - 1)/B, variance 1/B
  EXPECT_NEAR(m.a(0), (400.0 - 1) / 200, 1e-3);
  EXPECT_NEAR(m.A(0, 0), 1.0 / 200, 1e-6);
}

TEST(TiltedMoments, ParticleErrorScalesAsRootN) {
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  TiltState s{Vec::Constant(2, 0.5), Mat::Identity(2, 2) * 0.5, 1};
  TiltedMoments exact = tilted_moments(g, s, MomentStrategy::closed_form());
  std::vector<double> logn, logerr;
  for (Eigen::Index n : {1000, 10000, 100000}) {
    double sq = 0;
    const int reps = 24;
    for (int r = 0; r < reps; ++r) {
      TiltedMoments m = tilted_moments(g, s, MomentStrategy::particles_of(n, 1000 * n + r));
      sq += (m.a - exact.a).squaredNorm() + (m.A - exact.A).squaredNorm();
    }
    logn.push_back(std::log(static_cast<double>(n)));
    logerr.push_back(0.5 * std::log(sq / reps));
  }
  double slope = stats::ols_slope(logn, logerr);
  EXPECT_GE(slope, -0.6);
  EXPECT_LE(slope, -0.4);
}

TEST(TiltedMoments, StrategyMismatch) {
  LogDensity c = make_density(BodySpec::cube(1.0), 2);
  try {
    tilted_moments(c, TiltState::origin(2), MomentStrategy::closed_form());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::strategy_mismatch);
  }
  EXPECT_THROW(tilted_moments(make_density(Builtin::standard_gaussian, 4), TiltState::origin(4), MomentStrategy::quadrature()),
               Error);
}

TEST(TiltedMoments, CovarianceFloor) {
  WeightedPoints wp(Mat::Ones(2, 5), Vec::Zero(5));
  TiltedMoments m = wp.evaluate(Vec::Zero(5)).moments;
  MomentStrategy s;
  try {
    enforce_floor(m, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::covariance_floor_breach);
  }
}

TEST(TiltedMoments, PositiveDefiniteOnBuiltins) {
  Rng rng = make_rng(23);
  for (int n : {2, 3}) {
    for (const auto& f : {make_density(BodySpec::cube(1.0), n), make_density(BodySpec::ball(1.0), n),
                          make_density(Builtin::exponential_product, n)}) {
      TiltState s{normal_vector(rng, n), Mat::Identity(n, n) * 2, 1};
      TiltedMoments m = tilted_moments(f, s, MomentStrategy::quadrature(32));
      EXPECT_GT(lambda_min(m.A), 0);
    }
  }
}

TEST(ConditionalDensity, ZeroTiltReturnsSameDensity) {
  LogDensity c = make_density(BodySpec::cube(1.0), 2);
  EXPECT_TRUE(conditional_density_form(c, TiltState::origin(2)).same_as(c));
}

TEST(ConditionalDensity, GaussianBecomesScaledGaussian) {
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  TiltState s{Vec::Constant(2, 0.7), Mat::Identity(2, 2) * (std::exp(1.0) - 1), 1};
  LogDensity ft = conditional_density_form(g, s);
  auto law = ft.gaussian_law();
  ASSERT_TRUE(law.has_value());
  EXPECT_LT((law->second - std::exp(-1.0) * Mat::Identity(2, 2)).norm(), 1e-14);
  // pointwise: normalized density
  Vec x(2);
  x << 0.3, -0.2;
  Vec d = x - law->first;
  double expect = -std::log(2 * std::numbers::pi * std::exp(-1.0)) - 0.5 * d.squaredNorm() / std::exp(-1.0);
  EXPECT_NEAR(ft.log_eval(x), expect, 1e-12);
}

TEST(ConditionalDensity, TiltedCubeIsNormalized) {
  LogDensity c = make_density(BodySpec::cube(1.0), 2);
  TiltState s{Vec::Zero(2), Mat::Zero(2, 2), 0.5};
  s.c(0) = 1;
  LogDensity ft = conditional_density_form(c, s);
  EXPECT_NEAR(quadrature_moments(ft, 64).mass, 1.0, 1e-8);
  ConcavityReport r = check_log_concavity(ft, 3, 500);
  EXPECT_EQ(r.violations, 0);
}
