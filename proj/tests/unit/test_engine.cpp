#include <gtest/gtest.h>

#include <cmath>

#include "sloc/engine.hpp"

using namespace sloc;

namespace {

Schedule schedule_to(double t_max, double dt = 1e-3, int stride = 1) {
  Schedule s;
  s.dt = dt;
  s.t_max = t_max;
  s.stride = stride;
  return s;
}

}  // namespace

TEST(StepTilt, TrivialSteps) {
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  TiltState s = TiltState::origin(2);
  TiltedMoments m = tilted_moments(g, s, MomentStrategy::closed_form());
  TiltState next = step_tilt(s, g, m, Vec::Zero(2), 0.01);
  EXPECT_LT(next.c.norm(), 1e-15);
  EXPECT_LT((next.B - 0.01 * Mat::Identity(2, 2)).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(next.t, 0.01);

  TiltState same = step_tilt(s, g, m, Vec::Ones(2), 0.0);
  EXPECT_EQ(same.c, s.c);
  EXPECT_EQ(same.B, s.B);
  EXPECT_THROW(step_tilt(s, g, m, Vec::Zero(3), 0.01), Error);
}

TEST(StepTilt, GaussianBGrowsExponentially) {
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  Trajectory tr = run_trajectory(g, schedule_to(1.0), MomentStrategy::closed_form(), 11);
  const auto& last = tr.records.back();
  EXPECT_NEAR(last.t, 1.0, 1e-12);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(last.B(i, i) / (std::exp(1.0) - 1), 1.0, 0.05);
  EXPECT_LT(std::abs(last.B(0, 1)), 0.05);
}

TEST(StepWeights, ZeroIncrementLeavesWeights) {
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  ParticleCloud cl = make_cloud(g, 100, 3);
  ParticleCloud same = step_weights(cl, Vec::Zero(2), Mat::Identity(2, 2), Vec::Zero(2), 0.0);
  EXPECT_EQ(same.log_weights, cl.log_weights);
}

TEST(StepWeights, OneStepWeightIsUnbiased) {
  // Over dW, E exp(<x - a, u> - |x - a|^2 dt / 2) = 1 for isotropic A.
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  ParticleCloud cl = make_cloud(g, 5, 4);
  const double dt = 1e-2;
  const int draws = 40000;
  Rng rng = make_rng(9);
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(5), sum2 = Eigen::ArrayXd::Zero(5);
  for (int k = 0; k < draws; ++k) {
    Vec dW = normal_vector(rng, 2) * std::sqrt(dt);
    Eigen::ArrayXd w = step_weights(cl, Vec::Zero(2), Mat::Identity(2, 2), dW, dt).log_weights.array().exp();
    sum += w;
    sum2 += w * w;
  }
  Eigen::ArrayXd mean = sum / draws;
  Eigen::ArrayXd se = ((sum2 / draws - mean * mean) / draws).sqrt();
  for (int i = 0; i < 5; ++i) EXPECT_LT(std::abs(mean(i) - 1), 4 * se(i) + 1e-4);
}

TEST(WeightedMoments, EqualWeightsGaussian) {
  LogDensity g = make_density(Builtin::standard_gaussian, 3);
  ParticleCloud cl = make_cloud(g, 100000, 5, false);
  TiltedMoments m = weighted_moments(cl);
  EXPECT_NEAR(m.V, 1, 1e-12);
  EXPECT_LT(m.a.norm(), 3 * std::sqrt(3.0 / 1e5));
  EXPECT_LT(op_norm_sym(m.A - Mat::Identity(3, 3)), 0.03);
  EXPECT_NEAR(m.n_eff, 1e5, 1e-6);
}

TEST(WeightedMoments, TwoPointCloud) {
  Mat x(1, 2);
  x << -1, 1;
  TiltedMoments m = weighted_moments(make_cloud(x));
  EXPECT_NEAR(m.a(0), 0, 1e-15);
  EXPECT_NEAR(m.A(0, 0), 1, 1e-15);
  EXPECT_NEAR(m.n_eff, 2, 1e-12);
}

TEST(WeightedMoments, ExponentialTiltOfGaussianCloud) {
  LogDensity g = make_density(Builtin::standard_gaussian, 1);
  ParticleCloud cl = make_cloud(g, 200000, 6, false);
  cl.log_weights = cl.points->points().row(0).transpose();
  TiltedMoments m = weighted_moments(cl);
  // weights e^x: E e^X = e^{1/2}, tilted law N(1, 1)
  EXPECT_NEAR(m.V, std::exp(0.5), 0.03);
  EXPECT_NEAR(m.a(0), 1, 0.03);
  EXPECT_NEAR(m.A(0, 0), 1, 0.05);
}

TEST(WeightedMoments, DegenerateCloud) {
  Mat x(1, 3);
  x << -1, 0, 1;
  ParticleCloud cl = make_cloud(x);
  cl.log_weights << 0, -800, -800;
  EXPECT_THROW(weighted_moments(cl, 2.0), Error);
  cl.log_weights.setConstant(-INFINITY);
  EXPECT_THROW(weighted_moments(cl), Error);
}

TEST(StepWeights, GaussianCloudCovarianceDecays) {
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  Trajectory tr = run_trajectory(g, schedule_to(1.0, 1e-3, 100), MomentStrategy::particles_of(100000), 21);
  const auto& last = tr.records.back();
  EXPECT_NEAR(last.t, 1.0, 1e-12);
  EXPECT_LT(op_norm_sym(last.A - std::exp(-1.0) * Mat::Identity(2, 2)), 0.1 * std::exp(-1.0));
  EXPECT_FALSE(tr.degenerate);
}

TEST(RunTrajectory, GaussianTraceAtTwo) {
  LogDensity g = make_density(Builtin::standard_gaussian, 2);
  Trajectory tr = run_trajectory(g, schedule_to(2.0, 1e-3, 50), MomentStrategy::closed_form(), 1);
  EXPECT_NEAR(tr.records.back().A.trace() / (2 * std::exp(-2.0)), 1, 0.1);
  const auto& r0 = tr.records.front();
  EXPECT_EQ(r0.t, 0);
  EXPECT_LT(r0.a.norm() + (r0.A - Mat::Identity(2, 2)).norm() + r0.c.norm() + r0.B.norm(), 1e-12);
  for (std::size_t i = 1; i < tr.records.size(); ++i) EXPECT_GT(tr.records[i].t, tr.records[i - 1].t);
}

TEST(RunTrajectory, GaussianBarycenterVariance) {
  LogDensity g = make_density(Builtin::standard_gaussian, 1);
  auto runs = run_ensemble(g, schedule_to(1.0, 1e-3, 1000), MomentStrategy::closed_form(), 77, 1000);
  std::vector<double> a1;
  for (const auto& r : runs) a1.push_back(r.records.back().a(0));
  EXPECT_NEAR(stats::variance(a1) / (1 - std::exp(-1.0)), 1, 0.1);
}

TEST(RunTrajectory, UniformEndpointMatchesSampler) {
  LogDensity u = make_density(Builtin::uniform_product, 1);
  Schedule s = schedule_to(30.0, 1e-3, 100000);
  auto runs = run_ensemble(u, s, MomentStrategy::quadrature(64), 5, 200);
  std::vector<double> ends, exact;
  Rng rng = make_rng(6);
  for (const auto& r : runs) {
    EXPECT_EQ(r.stop_reason, "trace");
    ends.push_back(r.records.back().a(0));
    exact.push_back(u.sample(rng)(0));
  }
  EXPECT_GT(stats::ks_two_sample(ends, exact).p_value, 0.01);
}

TEST(RunTrajectory, RejectsAnisotropicInput) {
  LogDensity u = make_density(BodySpec::cube(1.0), 2);
  EXPECT_THROW(run_trajectory(u, schedule_to(0.01), MomentStrategy::quadrature(16), 1), Error);
  Schedule bad = schedule_to(0.01);
  bad.dt = 0;
  LogDensity g = make_density(Builtin::standard_gaussian, 1);
  EXPECT_THROW(run_trajectory(g, bad, MomentStrategy::closed_form(), 1), Error);
}

TEST(RunTrajectory, HalvingReplaysSameBrownianPath) {
  // A tiny guard forces subdivision; the refined path sums to the coarse
  // increment, so the Gaussian tilt path ends at nearly the same c.
  LogDensity g = make_density(Builtin::standard_gaussian, 1);
  Schedule coarse = schedule_to(0.2, 1e-2);
  Schedule fine = coarse;
  fine.guard = 0.05;
  fine.max_halvings = 3;
  Trajectory a = run_trajectory(g, coarse, MomentStrategy::closed_form(), 8);
  Trajectory b = run_trajectory(g, fine, MomentStrategy::closed_form(), 8);
  EXPECT_EQ(a.halvings, 0);
  EXPECT_GT(b.halvings, 0);
  EXPECT_NEAR(a.records.back().c(0), b.records.back().c(0), 0.02);
  EXPECT_EQ(a.records.size(), b.records.size());
}

TEST(CrossCheck, GaussianPathsAgree) {
  LogDensity g = make_density(Builtin::standard_gaussian, 1);
  CrossCheckReport rep = cross_check_paths(g, schedule_to(1.0, 1e-3, 10), 31, 100000);
  EXPECT_LT(rep.max_da, 0.05);
  EXPECT_EQ(rep.t.size(), 101u);
}

TEST(EngineProperties, TiltPathMassIsOne) {
  for (Builtin b : {Builtin::uniform_product, Builtin::exponential_product}) {
    LogDensity f = make_density(b, 2);
    Trajectory tr = run_trajectory(f, schedule_to(2.0, 1e-3, 250), MomentStrategy::quadrature(48), 13);
    for (const auto& r : tr.records) {
      QuadratureRule q = f.quadrature(96, nullptr);
      double mass = 0;
      for (Eigen::Index k = 0; k < q.nodes.cols(); ++k) mass += std::exp(q.log_weights(k)) * weight_at(r, q.nodes.col(k));
      EXPECT_NEAR(mass, 1, 1e-3) << "t=" << r.t;
    }
  }
}

TEST(EngineProperties, PointwiseMartingale) {
  LogDensity g = make_density(Builtin::standard_gaussian, 1);
  auto runs = run_ensemble(g, schedule_to(1.0, 1e-3, 500), MomentStrategy::closed_form(), 99, 1000);
  Vec x0 = Vec::Constant(1, 0.7);
  std::vector<double> F;
  for (const auto& r : runs) F.push_back(weight_at(r.records.back(), x0));
  EXPECT_LT(std::abs(stats::mean(F) - 1), 3 * stats::stderr_of_mean(F));
}

TEST(EngineProperties, BarycenterQuadraticVariation) {
  LogDensity u = make_density(Builtin::uniform_product, 2);
  Schedule s = schedule_to(0.6, 1e-3, 1);
  auto runs = run_ensemble(u, s, MomentStrategy::quadrature(32), 404, 40);
  Mat qv = Mat::Zero(2, 2), integral = Mat::Zero(2, 2);
  for (const auto& r : runs) {
    for (int k = 501; k <= 600; ++k) {
      Vec d = r.records[k].a - r.records[k - 1].a;
      qv += d * d.transpose();
    }
    integral += r.records[600].int_A - r.records[500].int_A;
  }
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(qv(i, i) / integral(i, i), 1, 0.15);
  EXPECT_LT(std::abs(qv(0, 1) - integral(0, 1)), 0.15 * integral.diagonal().mean());
}

TEST(EngineProperties, TimeDecayCeiling) {
  for (Builtin b : {Builtin::uniform_product, Builtin::exponential_product, Builtin::standard_gaussian}) {
    LogDensity f = make_density(b, 2);
    MomentStrategy st = b == Builtin::standard_gaussian ? MomentStrategy::closed_form() : MomentStrategy::quadrature(48);
    Trajectory tr = run_trajectory(f, schedule_to(3.0, 1e-3, 20), st, 5);
    for (std::size_t i = 1; i < tr.records.size(); ++i) {
      const auto& r = tr.records[i];
      EXPECT_LE(op_norm_sym(r.A) * lambda_min(r.B), 1.05) << "t=" << r.t;
    }
  }
}

TEST(EngineProperties, SemigroupInLaw) {
  // Continue from (c_s, B_s) versus restart from the isotropized f_s.
  LogDensity u = make_density(Builtin::uniform_product, 1);
  Trajectory head = run_trajectory(u, schedule_to(0.5, 1e-3, 500), MomentStrategy::quadrature(64), 2024);
  const auto& rs = head.records.back();
  TiltState s{rs.c, rs.B, rs.t};

  RunOptions cont;
  cont.start = s;
  auto continued = run_ensemble(u, schedule_to(0.5, 1e-3, 500), MomentStrategy::quadrature(64), 1, 300, cont);

  LogDensity fs = conditional_density_form(u, s);
  auto [g, map] = isotropize(fs);
  RunOptions iso;
  iso.isotropy_tol = 1e-5;
  auto restarted = run_ensemble(g, schedule_to(0.5, 1e-3, 500), MomentStrategy::quadrature(64), 2, 300, iso);

  std::vector<double> x, y;
  for (const auto& r : continued) x.push_back(r.records.back().A.trace());
  for (const auto& r : restarted) {
    Mat minv = map.M.inverse();
    y.push_back((minv * r.records.back().A * minv.transpose()).trace());
  }
  EXPECT_GT(stats::ks_two_sample(x, y).p_value, 0.01);
}
