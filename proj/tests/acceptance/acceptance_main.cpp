#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sloc/sloc.hpp"

using namespace sloc;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream note;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note << "[failed: " << what << "] ";
    }
  }
};

struct Criterion {
  int id;
  std::string name;
  std::function<void(Outcome&)> body;
};

Schedule schedule_to(double t_max, double dt, int stride) {
  Schedule s;
  s.dt = dt;
  s.t_max = t_max;
  s.stride = stride;
  return s;
}

LogDensity iso(const BodySpec& spec, int n) { return isotropize(make_density(spec, n)).first; }

MomentStrategy grid_for(int n) { return MomentStrategy::quadrature(n == 1 ? 64 : n == 2 ? 32 : 24); }

// Gaussian A_t = e^{-t} I: every tilt-path run for n in {1,2,5,10}; the
// across-run mean of the cloud path, N = 1e5, n <= 3.
void gaussian_closed_form(Outcome& o) {
  for (int n : {1, 2, 5, 10}) {
    auto runs = run_ensemble(make_density(Builtin::standard_gaussian, n), schedule_to(2, 1e-3, 50),
                             MomentStrategy::closed_form(), 100 + n, 64);
    CheckReport r = gaussian_closed_form_check(runs, 0.1);
    o.note << "tilt n=" << n << " " << r.statistic << "; ";
    o.require(r.ok(), "tilt n=" + std::to_string(n));
  }
  for (int n : {1, 2, 3}) {
    auto runs = run_ensemble(make_density(Builtin::standard_gaussian, n), schedule_to(2, 1e-3, 50),
                             MomentStrategy::particles_of(100000), 200 + n, 64);
    CheckReport r = gaussian_closed_form_check(runs, 0.15, true);
    o.note << "cloud n=" << n << " " << r.statistic << " (per run median " << r.details["per_run_median"]
           << ", max " << r.details["per_run_worst"] << "); ";
    o.require(r.ok(), "cloud n=" + std::to_string(n));
  }
}

// a_1 ~ N(0, 1 - e^{-1}) on the 1D Gaussian.
void barycenter_law(Outcome& o) {
  auto runs = run_ensemble(make_density(Builtin::standard_gaussian, 1), schedule_to(1, 1e-3, 1000),
                           MomentStrategy::closed_form(), 300, 1000);
  std::vector<double> a;
  for (const auto& r : runs) a.push_back(r.records.back().a(0));
  double ratio = stats::variance(a) / (1 - std::exp(-1.0));
  o.note << "Var(a_1)/(1-e^-1) = " << ratio;
  o.require(std::abs(ratio - 1) <= 0.1, "variance within 10%");
}

// Mass of f_t on an independent finer rule, and E F_t(x0) = 1.
void martingales(Outcome& o) {
  std::vector<std::pair<std::string, LogDensity>> fs = {
      {"uniform2", make_density(Builtin::uniform_product, 2)},
      {"exponential2", make_density(Builtin::exponential_product, 2)},
      {"ball2", iso(BodySpec::ball(1), 2)},
      {"cube3", iso(BodySpec::cube(1), 3)}};
  double worst = 0;
  for (const auto& [name, f] : fs) {
    const int n = f.dim();
    QuadratureRule q = f.quadrature(n == 3 ? 40 : 96, nullptr);
    for (std::uint64_t seed : {1, 2}) {
      Trajectory tr = run_trajectory(f, schedule_to(2, 1e-3, 250), grid_for(n), 400 + seed);
      for (const auto& r : tr.records) {
        double mass = 0;
        for (Eigen::Index k = 0; k < q.nodes.cols(); ++k)
          mass += std::exp(q.log_weights(k)) * weight_at(r, q.nodes.col(k));
        worst = std::max(worst, std::abs(mass - 1));
      }
    }
  }
  o.note << "max |mass - 1| = " << worst << "; ";
  o.require(worst <= 1e-3, "mass within 1e-3");

  auto runs = run_ensemble(make_density(Builtin::standard_gaussian, 1), schedule_to(1, 1e-3, 1000),
                           MomentStrategy::closed_form(), 410, 1000);
  for (double x0 : {-1.0, 0.3, 1.5}) {
    std::vector<double> F;
    for (const auto& r : runs) F.push_back(weight_at(r.records.back(), Vec::Constant(1, x0)));
    double z = std::abs(stats::mean(F) - 1) / stats::stderr_of_mean(F);
    o.note << "F(" << x0 << ") z=" << z << " ";
    o.require(z <= 3, "E F_t(x0) = 1");
  }
}

// mean Tr Atilde_t = n within 3 stderr on Gaussian, cube, exponential product.
void trace_identity(Outcome& o) {
  for (int n : {2, 3}) {
    std::vector<std::pair<std::string, LogDensity>> fs = {
        {"gaussian", make_density(Builtin::standard_gaussian, n)},
        {"cube", iso(BodySpec::cube(1), n)},
        {"exponential", make_density(Builtin::exponential_product, n)}};
    for (const auto& [name, f] : fs) {
      MomentStrategy st = name == "gaussian" ? MomentStrategy::closed_form() : grid_for(n);
      auto runs = run_ensemble(f, schedule_to(2, 2e-3, 25), st, 500 + n, 100);
      CheckReport r = trace_identity_check(runs);
      o.note << name << n << " " << r.statistic << "; ";
      o.require(r.ok(), name + std::to_string(n));
    }
  }
}

// E(g - 1/2)^2 <= 1.05 t and windowed QV rate <= 1.05 for median halfspaces.
void halfspace_bounds(Outcome& o) {
  for (int n : {2, 3}) {
    for (bool cube : {false, true}) {
      LogDensity f = cube ? iso(BodySpec::cube(1), n) : make_density(Builtin::standard_gaussian, n);
      RunOptions opt;
      opt.probes = {median_halfspace(f, Vec::Unit(n, 0))};
      MomentStrategy st = cube ? grid_for(n) : MomentStrategy::closed_form();
      auto runs = run_ensemble(f, schedule_to(0.5, 1e-3, 5), st, 600 + n, 100, opt);
      CheckReport r = variance_bound_check(runs, 0, 0.05);
      std::string name = std::string(cube ? "cube" : "gaussian") + std::to_string(n);
      o.note << name << " " << r.statistic << "; ";
      o.require(r.ok(), name);
    }
  }
}

XiTensor xi_at(const MeasureSample& s, const Mat& basis, Tensor3* keep = nullptr) {
  MomentSummary m = sample_moments(s);
  Tensor3 t = third_moments(whiten(s.points, m.barycenter, m.covariance), s.weights);
  if (keep) *keep = t;
  return xi_vectors(t, basis);
}

// xi = 0 for symmetric laws, |xi_ii| <= sqrt(fourth moment), exponential xi_ii = 2.
void xi_identities(Outcome& o) {
  double sym = 0;
  for (const LogDensity& f : {make_density(Builtin::standard_gaussian, 2), make_density(Builtin::uniform_product, 3),
                              iso(BodySpec::ball(1), 2), iso(BodySpec::cube(1), 2)}) {
    const int n = f.dim();
    XiTensor xi = xi_at(measure_sample(f, {.order = 64}), Mat::Identity(n, n));
    for (const Vec& v : xi.xi) sym = std::max(sym, v.norm());
  }
  o.note << "symmetric max |xi| = " << sym << "; ";
  o.require(sym < 1e-10, "symmetric xi vanish");

  double exp_err = 0;
  for (int n : {1, 2, 3}) {
    XiTensor xi = xi_at(measure_sample(make_density(Builtin::exponential_product, n), {.order = n == 3 ? 48 : 64}),
                        Mat::Identity(n, n));
    for (int i = 0; i < n; ++i) exp_err = std::max(exp_err, std::abs(xi(i, i)(i) / 2 - 1));
  }
  o.note << "exponential max |xi_ii/2 - 1| = " << exp_err << "; ";
  o.require(exp_err <= 0.02, "exponential xi_ii = 2 +- 2%");

  // tilted measures along a path, in the companion eigenbasis
  double worst = -INFINITY;
  for (Builtin b : {Builtin::exponential_product, Builtin::uniform_product}) {
    LogDensity f = make_density(b, 2);
    Trajectory tr = run_trajectory(f, schedule_to(1, 1e-3, 250), MomentStrategy::quadrature(48), 700);
    QuadratureRule q = f.quadrature(96, nullptr);
    for (const auto& r : tr.records) {
      Vec w(q.nodes.cols());
      for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = std::exp(q.log_weights(k)) * weight_at(r, q.nodes.col(k));
      w /= w.sum();
      WeightedView view{&q.nodes, w};
      Vec a = q.nodes * w;
      Mat c = q.nodes.colwise() - a;
      Mat A = symmetrize(c * w.asDiagonal() * c.transpose());
      Mat basis = companion_basis(r);
      XiTensor xi = xi_vectors(view, a, A, basis, r.t);
      FourthMoments fm = directional_fourth_moments(view, a, A, basis, r.t);
      CheckReport rep = check_xi_bounds(xi, fm);
      worst = std::max(worst, rep.statistic);
      o.require(rep.ok(), "fourth-moment bound at t=" + std::to_string(r.t));
    }
  }
  o.note << "max |xi_ii| / sqrt(m4) = " << worst;
}

// kappa, q and the kappa <= sqrt2 q chain over the battery.
void constants(Outcome& o) {
  double sym = 0, exp_err = 0, q_err = 0, min_ratio = INFINITY;
  bool fact = true;
  for (int n : {1, 2, 3}) {
    int order = n == 3 ? 40 : 64;
    std::vector<std::pair<std::string, LogDensity>> fs = {
        {"gaussian", make_density(Builtin::standard_gaussian, n)},
        {"uniform", make_density(Builtin::uniform_product, n)},
        {"exponential", make_density(Builtin::exponential_product, n)}};
    if (n >= 2) {
      fs.push_back({"cube", iso(BodySpec::cube(1), n)});
      fs.push_back({"ball", iso(BodySpec::ball(1), n)});
      fs.push_back({"simplex", iso(BodySpec::simplex(1), n)});
    }
    for (const auto& [name, f] : fs) {
      MeasureSample s = measure_sample(f, {.order = order});
      double kappa = k_stat(s).kappa, qq = q_quad(s).q, qs = q_stat(s).q;
      CheckReport r = kappa_q_check(kappa, qq, qs);
      fact = fact && r.ok();
      if (name == "exponential") {
        exp_err = std::max(exp_err, std::abs(kappa / 2 - 1));
        min_ratio = std::min(min_ratio, r.statistic);
      } else if (name != "simplex") {
        sym = std::max(sym, kappa);
      }
      if (name == "gaussian") q_err = std::max(q_err, std::abs(qs - 1));
    }
  }
  o.note << "symmetric kappa " << sym << "; exp |kappa/2-1| " << exp_err << "; |q_gauss-1| " << q_err
         << "; exp ratio " << min_ratio;
  o.require(sym < 1e-8, "kappa(symmetric) = 0");
  o.require(exp_err <= 0.02, "kappa(exponential) = 2 +- 2%");
  o.require(q_err <= 0.01, "q(Gaussian) = 1 +- 1%");
  o.require(fact, "kappa <= sqrt2 q on the battery");
  o.require(min_ratio >= 0.9, "near-equality on the exponential product");
}

// f = g exactness; cube versus ball: optional stopping, S martingale, singular values.
void coupling_identities(Outcome& o) {
  Schedule s = schedule_to(2, 2e-3, 25);
  {
    LogDensity f = iso(BodySpec::cube(1), 2);
    CouplingOptions co;
    co.schedule = s;
    co.particles = 2000;
    auto runs = run_coupled_ensemble(f, f, sup_convolution(f, f), 800, 20, co);
    CheckReport r = identical_coupling_check(runs, 1e-10);
    o.note << "f=g worst " << r.statistic << "; ";
    o.require(r.ok(), "identical coupling");
  }
  const double sqrt12 = std::sqrt(12.0);
  AffineMap scale{sqrt12 * Mat::Identity(2, 2), Vec::Zero(2)};
  LogDensity f = make_density(BodySpec::cube(1), 2).mapped(scale);
  LogDensity g = make_density(BodySpec::ball(1 / std::sqrt(std::numbers::pi)), 2).mapped(scale);
  SupConvolution H = sup_convolution(f, g);
  CouplingOptions co;
  co.schedule = s;
  co.quadrature_order = 64;
  co.particles = 4096;
  auto runs = run_coupled_ensemble(f, g, H, 810, 100, co);
  CheckReport drift = drift_diagnostic(runs), sm = s_martingale_check(runs), sv = singular_value_check(runs, 1e-8);
  o.note << "K=" << H.total_mass << "; optional stopping " << drift.statistic << " (pointwise exceedances "
         << drift.details["pointwise_exceedances"] << "); S max z " << sm.statistic << "; singular values "
         << sv.statistic;
  o.require(drift.ok(), "optional stopping");
  o.require(sm.ok(), "S martingale");
  o.require(sv.ok(), "singular value inequality");
}

// a_T against exact draws once Tr A_T < 1e-3.
void convergence(Outcome& o) {
  for (Builtin b : {Builtin::uniform_product, Builtin::exponential_product}) {
    LogDensity f = make_density(b, 1);
    Schedule s = schedule_to(40, 1e-3, 100000);
    s.stop_trace = 1e-3;
    auto runs = run_ensemble(f, s, MomentStrategy::quadrature(64), 900 + static_cast<int>(b), 300);
    std::vector<double> ends, exact;
    Rng rng = make_rng(901 + static_cast<int>(b));
    bool small = true;
    for (const auto& r : runs) {
      small = small && r.records.back().A.trace() < 1e-3;
      ends.push_back(r.records.back().a(0));
      exact.push_back(f.sample(rng)(0));
    }
    double p = stats::ks_two_sample(ends, exact).p_value;
    std::string name = b == Builtin::uniform_product ? "uniform" : "exponential";
    o.note << name << " KS p=" << p << "; ";
    o.require(small, name + " Tr A_T < 1e-3");
    o.require(p > 0.01, name + " two-sample test");
  }
}

// ||A_t|| lambda_min(B_t) <= 1.05 at every record on the battery.
void ceiling(Outcome& o) {
  double worst = 0;
  for (int n : {2, 3}) {
    std::vector<std::pair<std::string, LogDensity>> fs = {
        {"gaussian", make_density(Builtin::standard_gaussian, n)},
        {"uniform", make_density(Builtin::uniform_product, n)},
        {"exponential", make_density(Builtin::exponential_product, n)},
        {"cube", iso(BodySpec::cube(1), n)},
        {"ball", iso(BodySpec::ball(1), n)},
        {"simplex", iso(BodySpec::simplex(1), n)}};
    for (const auto& [name, f] : fs) {
      MomentStrategy st = name == "gaussian" ? MomentStrategy::closed_form() : grid_for(n);
      // a fixed grid resolves the concentrated law only to t ~ 2 in three dimensions
      auto runs = run_ensemble(f, schedule_to(n == 2 ? 3 : 2, 1e-3, 20), st, 1000 + n, 8);
      CheckReport r = ceiling_check(runs, 1.05);
      worst = std::max(worst, r.statistic);
      o.require(r.ok(), name + std::to_string(n));
    }
  }
  o.note << "max ||A|| lambda_min(B) = " << worst;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> all = {
      {1, "gaussian closed form", gaussian_closed_form},
      {2, "barycenter law", barycenter_law},
      {3, "martingale suite", martingales},
      {4, "trace identity", trace_identity},
      {5, "halfspace bounds", halfspace_bounds},
      {6, "xi identities", xi_identities},
      {7, "constants", constants},
      {8, "coupling identities", coupling_identities},
      {9, "convergence to a point", convergence},
      {10, "covariance ceiling", ceiling},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    auto start = std::chrono::steady_clock::now();
    try {
      c.body(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.note << "[error: " << e.what() << "]";
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("%s criterion %d (%s) [%.0fs]: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs,
                o.note.str().c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
