#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "diagnostics.hpp"

namespace sloc {

struct MassProcess {
  std::vector<double> t;
  std::vector<double> g;
  std::vector<double> qv;  // realized quadratic variation, cumulative
};

// g(t) from the probe recorded at index `probe` of the run options.
inline MassProcess mass_process(const Trajectory& run, std::size_t probe) {
  MassProcess m;
  double acc = 0;
  for (const auto& r : run.records) {
    if (probe >= r.probes.size()) throw Error(ErrorCode::invalid_spec, "run carries no such probe");
    double g = std::clamp(r.probes[probe], 0.0, 1.0);
    if (!m.g.empty()) acc += (g - m.g.back()) * (g - m.g.back());
    m.t.push_back(r.t);
    m.g.push_back(g);
    m.qv.push_back(acc);
  }
  return m;
}

inline std::vector<MassProcess> mass_processes(const std::vector<Trajectory>& runs, std::size_t probe) {
  std::vector<MassProcess> out;
  for (const auto& r : runs) out.push_back(mass_process(r, probe));
  return out;
}

struct MassOptions {
  Eigen::Index samples = 1000000;
  std::uint64_t seed = 17;
  int order = 96;
};

// mu(E): closed form for Gaussian and product halfspaces, quadrature for
// axis halfspaces in n <= 3, Monte Carlo otherwise.
inline double set_mass(const LogDensity& f, const TestSet& e, const MassOptions& opt = {}) {
  if (e.dim() != f.dim()) throw Error(ErrorCode::dimension_mismatch, "test set dimension");
  if (e.kind() == TestSet::Kind::halfspace) {
    if (!std::isfinite(e.offset())) return e.offset() > 0 ? 1.0 : 0.0;
    if (auto law = f.gaussian_law()) {
      double sd = std::sqrt(e.normal().dot(law->second * e.normal()));
      return stats::normal_cdf((e.offset() - e.normal().dot(law->first)) / sd);
    }
    if (auto cut = e.axis_cut()) {
      if (auto fac = f.product_factors()) {
        double below = (*fac)[cut->first].cdf(cut->second);
        return e.normal()(cut->first) > 0 ? below : 1 - below;
      }
      if (f.dim() <= 3) {
        AxisCuts cuts(f.dim());
        cuts[cut->first].push_back(cut->second);
        QuadratureRule q = f.quadrature(opt.order, nullptr, cuts);
        double s = 0, tot = 0;
        for (Eigen::Index k = 0; k < q.nodes.cols(); ++k) {
          double w = std::exp(q.log_weights(k));
          tot += w;
          if (e.contains(q.nodes.col(k))) s += w;
        }
        return s / tot;
      }
    }
  }
  if (!f.has_sampler()) throw Error(ErrorCode::strategy_mismatch, "set mass needs a sampler");
  Rng rng = make_rng(opt.seed, 0x3a55);
  Mat x = f.sample(opt.samples, rng);
  Eigen::Index in = 0;
  for (Eigen::Index k = 0; k < x.cols(); ++k) in += e.contains(x.col(k));
  return static_cast<double>(in) / static_cast<double>(x.cols());
}

// Halfspace {<normal, x> <= s} with mu-mass 1/2, s by 40 bisection steps.
inline TestSet median_halfspace(const LogDensity& f, const Vec& normal, const MassOptions& opt = {}) {
  double r = f.support_radius();
  double lo = -r, hi = r;
  for (int it = 0; it < 40; ++it) {
    double mid = 0.5 * (lo + hi);
    (set_mass(f, TestSet::halfspace(normal, mid * normal.norm()), opt) < 0.5 ? lo : hi) = mid;
  }
  return TestSet::halfspace(normal, 0.5 * (lo + hi) * normal.norm());
}

inline void require_centered(const std::vector<MassProcess>& g, double tol = 0.01) {
  for (const auto& m : g)
    if (std::abs(m.g.front() - 0.5) > tol)
      throw Error(ErrorCode::miscentered_set, "g(0) = " + std::to_string(m.g.front()) + " is not 1/2");
}

// E(g - 1/2)^2 <= t and windowed QV rate <= 1.
inline CheckReport variance_bound_check(const std::vector<Trajectory>& runs, std::size_t probe, double slack = 0.05,
                                        double window = 0.1) {
  require_runs(runs, 100);
  auto g = mass_processes(runs, probe);
  require_centered(g);
  std::vector<double> t = record_times(runs);
  auto at = [&](const MassProcess& m, std::size_t k) { return std::min(k, m.g.size() - 1); };

  CheckReport rep;
  rep.name = "variance_bound";
  bool var_ok = true;
  double worst_var = 0;
  Json series = Json::array();
  for (std::size_t k = 0; k < t.size(); ++k) {
    std::vector<double> dev, gv;
    int band = 0;
    for (const auto& m : g) {
      double x = m.g[at(m, k)];
      gv.push_back(x);
      dev.push_back((x - 0.5) * (x - 0.5));
      band += x >= 0.1 && x <= 0.9;
    }
    double md = stats::mean(dev);
    var_ok = var_ok && md <= (1 + slack) * t[k] + 1e-12;
    if (t[k] > 0) worst_var = std::max(worst_var, md / t[k]);
    series.push_back({{"t", t[k]}, {"mean_g", stats::mean(gv)}, {"var_g", stats::variance(gv)}, {"mean_sq_dev", md},
                      {"band_frequency", static_cast<double>(band) / g.size()}});
  }
  // windowed QV rate averaged over runs
  double worst_rate = 0;
  Json rates = Json::array();
  for (std::size_t k0 = 0; k0 < t.size();) {
    std::size_t k1 = k0;
    while (k1 + 1 < t.size() && t[k1] < t[k0] + window - 1e-12) ++k1;
    if (k1 == k0) break;
    std::vector<double> inc;
    for (const auto& m : g) inc.push_back((m.qv[at(m, k1)] - m.qv[at(m, k0)]) / (t[k1] - t[k0]));
    double rate = stats::mean(inc);
    worst_rate = std::max(worst_rate, rate);
    rates.push_back({{"t0", t[k0]}, {"t1", t[k1]}, {"rate", rate}});
    k0 = k1;
  }
  bool qv_ok = worst_rate <= 1 + slack;
  rep.statistic = worst_var;
  rep.status = verdict(var_ok && qv_ok);
  rep.details["max_ratio_sq_dev_over_t"] = worst_var;
  rep.details["max_qv_rate"] = worst_rate;
  rep.details["variance_ok"] = var_ok;
  rep.details["qv_ok"] = qv_ok;
  rep.details["series"] = series;
  rep.details["qv_windows"] = rates;
  return rep;
}

// g is a martingale: mean g(t) = g(0) within 3 standard errors.
inline CheckReport mass_martingale_check(const std::vector<Trajectory>& runs, std::size_t probe) {
  require_runs(runs, 30);
  auto g = mass_processes(runs, probe);
  std::vector<double> t = record_times(runs);
  double g0 = g.front().g.front();
  CheckReport rep;
  rep.name = "mass_martingale";
  bool ok = true;
  double worst = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    std::vector<double> x;
    for (const auto& m : g) x.push_back(m.g[std::min(k, m.g.size() - 1)]);
    double se = std::max(stats::stderr_of_mean(x), 1e-9);
    double z = std::abs(stats::mean(x) - g0) / se;
    worst = std::max(worst, z);
    ok = ok && z <= 3;
  }
  rep.statistic = worst;
  rep.status = verdict(ok);
  return rep;
}

// P(0.1 <= g(t) <= 0.9) > 1/2 for t <= t_max, with the Chebyshev threshold.
inline CheckReport band_frequency_check(const std::vector<Trajectory>& runs, std::size_t probe, double t_max = 0.05) {
  require_runs(runs, 30);
  auto g = mass_processes(runs, probe);
  require_centered(g);
  std::vector<double> t = record_times(runs);
  CheckReport rep;
  rep.name = "band_frequency";
  bool ok = true;
  double worst = 1;
  for (std::size_t k = 0; k < t.size() && t[k] <= t_max + 1e-12; ++k) {
    int band = 0;
    double dev = 0;
    for (const auto& m : g) {
      double x = m.g[std::min(k, m.g.size() - 1)];
      band += x >= 0.1 && x <= 0.9;
      dev += (x - 0.5) * (x - 0.5);
    }
    double freq = static_cast<double>(band) / g.size();
    double chebyshev = 1 - dev / g.size() / 0.16;
    worst = std::min(worst, freq);
    ok = ok && freq > 0.5 && freq >= chebyshev - 1e-12;
  }
  rep.statistic = worst;
  rep.status = verdict(ok);
  return rep;
}

struct BoundaryMeasure {
  double value = 0;
  std::vector<double> eps;
  std::vector<double> quotients;
  std::vector<double> richardson;
  double mass = 0;
  double noise = 0;  // Monte Carlo standard error of the last quotient
};

inline std::vector<double> default_eps_ladder() { return {0.1, 0.05, 0.025, 0.0125}; }

// Minkowski boundary measure by extension quotients and two-point
// Richardson extrapolation on a halving ladder.
inline BoundaryMeasure boundary_measure(const LogDensity& f, const TestSet& a,
                                        const std::vector<double>& eps = default_eps_ladder(),
                                        const MassOptions& opt = {}, double tol = 1e-3) {
  if (eps.size() < 2) throw Error(ErrorCode::constraint_violation, "need at least two extension radii");
  for (std::size_t i = 1; i < eps.size(); ++i)
    if (!(eps[i] < eps[i - 1]) || !(eps[i] > 0))
      throw Error(ErrorCode::constraint_violation, "extension ladder must be positive and decreasing");
  BoundaryMeasure out;
  out.eps = eps;
  bool exact = a.kind() == TestSet::Kind::halfspace &&
               (!std::isfinite(a.offset()) || f.gaussian_law() || (a.axis_cut() && f.product_factors()));
  if (exact) {
    out.mass = set_mass(f, a, opt);
    for (double e : eps) out.quotients.push_back((set_mass(f, a.extended(e), opt) - out.mass) / e);
  } else {
    if (!f.has_sampler()) throw Error(ErrorCode::strategy_mismatch, "boundary measure needs a sampler");
    Rng rng = make_rng(opt.seed, 0xb0d7);
    Mat x = f.sample(opt.samples, rng);
    std::vector<double> d(x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) d[k] = a.distance(x.col(k));
    const double N = static_cast<double>(x.cols());
    out.mass = std::count(d.begin(), d.end(), 0.0) / N;
    for (double e : eps) {
      double band = std::count_if(d.begin(), d.end(), [&](double v) { return v > 0 && v <= e; }) / N;
      out.quotients.push_back(band / e);
    }
    double p = out.quotients.back() * eps.back();
    out.noise = std::sqrt(p * (1 - p) / N) / eps.back();
  }
  for (std::size_t i = 1; i < eps.size(); ++i) {
    double r = eps[i - 1] / eps[i];
    out.richardson.push_back((r * out.quotients[i] - out.quotients[i - 1]) / (r - 1));
  }
  out.value = out.richardson.back();
  // quotients must move monotonically, up to tolerance and sampling noise
  double slack = std::max(tol * std::max(std::abs(out.value), 1.0), 3 * out.noise);
  bool up = false, down = false;
  for (std::size_t i = 1; i < out.quotients.size(); ++i) {
    double diff = out.quotients[i] - out.quotients[i - 1];
    up = up || diff > slack;
    down = down || diff < -slack;
  }
  if (up && down) throw Error(ErrorCode::extrapolation_unstable, "extension quotients are not monotone");
  return out;
}

inline double cheeger_ratio(const LogDensity& f, const TestSet& a, const std::vector<double>& eps = default_eps_ladder(),
                            const MassOptions& opt = {}) {
  double mass = set_mass(f, a, opt);
  if (mass > 0.5 + 1e-9) throw Error(ErrorCode::mass_too_large, "set mass exceeds 1/2");
  if (!(mass > 0)) throw Error(ErrorCode::constraint_violation, "set has zero mass");
  return boundary_measure(f, a, eps, opt).value / mass;
}

// Cheeger lower bound (1 - 2 lambda) / Theta from a concentration profile.
inline double milman_reduction(double lambda, double theta) {
  if (!(lambda > 0 && lambda < 0.5)) throw Error(ErrorCode::lambda_out_of_range, "lambda must lie in (0, 1/2)");
  if (!(theta > 0)) throw Error(ErrorCode::constraint_violation, "Theta must be positive");
  return (1 - 2 * lambda) / theta;
}

// Probes E, E_{r_1}, E_{r_2}, ... for a run.
inline std::vector<TestSet> extension_probes(const TestSet& e, const std::vector<double>& radii) {
  std::vector<TestSet> out{e};
  for (double r : radii) out.push_back(e.extended(r));
  return out;
}

// Captured mass E[int_{E_r \ E} f_t | 0.1 <= g(t) <= 0.9] at time t, with
// probes laid out as by extension_probes starting at `first`.
inline CheckReport extension_mass_probe(const std::vector<Trajectory>& runs, std::size_t first,
                                        const std::vector<double>& radii, double t, double threshold = 0.05) {
  CheckReport rep;
  rep.name = "extension_mass";
  std::vector<const StepRecord*> chosen;
  for (const auto& run : runs) {
    const StepRecord* best = nullptr;
    for (const auto& r : run.records)
      if (r.t <= t + 1e-12) best = &r;
    if (!best) continue;
    double g = best->probes.at(first);
    if (g >= 0.1 && g <= 0.9) chosen.push_back(best);
  }
  if (chosen.empty()) throw Error(ErrorCode::conditioning_event_empty, "no run has 0.1 <= g(t) <= 0.9");
  bool monotone = true;
  double prev = 0, smallest = std::nan("");
  Json rows = Json::array();
  std::vector<double> outside;
  for (const auto* r : chosen) outside.push_back(1 - r->probes[first]);
  for (std::size_t i = 0; i < radii.size(); ++i) {
    std::vector<double> cap;
    for (const auto* r : chosen) cap.push_back(r->probes.at(first + 1 + i) - r->probes[first]);
    double m = stats::mean(cap);
    monotone = monotone && m >= prev - 1e-12;
    prev = m;
    if (std::isnan(smallest) && m >= threshold) smallest = radii[i];
    rows.push_back({{"r", radii[i]}, {"captured", m}, {"stderr", stats::stderr_of_mean(cap)}});
  }
  rep.statistic = smallest;
  rep.status = verdict(monotone);
  rep.details = {{"t", t}, {"conditioned_runs", chosen.size()}, {"mean_outside", stats::mean(outside)},
                 {"radii", rows}};
  return rep;
}

}  // namespace sloc
