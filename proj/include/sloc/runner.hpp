#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "constants.hpp"
#include "coupling.hpp"

namespace sloc {

inline constexpr const char* version_tag = "sloc 0.1.0";

// 64-bit FNV-1a, used for config and file fingerprints.
inline std::string fingerprint(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string utc_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text) || !(out.flush())) throw Error(ErrorCode::io_error, "cannot write " + p.string());
}

// "# sloc-csv v1", a header row, then rows printed with %.17g.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {
    text_ = "# sloc-csv v1\n";
    for (std::size_t i = 0; i < columns_.size(); ++i) text_ += (i ? "," : "") + columns_[i];
    text_ += "\n";
  }
  void row(const std::vector<double>& v) {
    if (v.size() != columns_.size()) throw Error(ErrorCode::dimension_mismatch, "csv row has wrong width");
    char buf[32];
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", v[i]);
      if (i) text_ += ",";
      text_ += buf;
    }
    text_ += "\n";
  }
  const std::string& text() const { return text_; }

 private:
  std::vector<std::string> columns_;
  std::string text_;
};

inline CsvWriter trajectory_csv(const Trajectory& tr) {
  const int n = tr.dim();
  std::vector<std::string> cols = {"t", "V"};
  for (int i = 0; i < n; ++i) cols.push_back("a_" + std::to_string(i + 1));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) cols.push_back("A_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
  for (int i = 0; i < n; ++i) cols.push_back("eig_" + std::to_string(i + 1));
  cols.push_back("N_eff");
  cols.push_back("traceAtilde");
  CsvWriter csv(cols);
  for (const auto& r : tr.records) {
    std::vector<double> v = {r.t, r.V};
    for (int i = 0; i < n; ++i) v.push_back(r.a(i));
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) v.push_back(r.A(i, j));
    for (int i = 0; i < n; ++i) v.push_back(r.eigvals(i));
    v.push_back(r.n_eff);
    v.push_back(r.atilde().trace());
    csv.row(v);
  }
  return csv;
}

inline CsvWriter coupled_csv(const CoupledTrajectory& tr, double eps, std::optional<double> op_cap) {
  CsvWriter csv({"t", "S", "gap2", "D_hs2", "int_D_hs2", "trA", "trC", "V_f", "V_g", "V_h", "N_eff_f", "N_eff_g",
                 "N_eff_h", "mass_cap_ok", "op_cap_ok"});
  double max_s = -INFINITY;
  bool op_ok = true;
  for (const auto& r : tr.records) {
    max_s = std::max(max_s, r.S);
    if (op_cap && r.op_A > *op_cap * std::exp(-r.t)) op_ok = false;
    csv.row({r.t, r.S, r.gap2, r.D_hs2, r.int_D_hs2, r.A.trace(), r.C.trace(), r.V_f, r.V_g, r.V_h, r.neff_f,
             r.neff_g, r.neff_h, max_s <= 2 * tr.K / eps ? 1.0 : 0.0, op_ok ? 1.0 : 0.0});
  }
  return csv;
}

struct OutputFile {
  std::string path;  // relative to the output directory
  std::size_t bytes = 0;
  std::string hash;
};

struct RunFailure {
  int index = 0;
  std::uint64_t seed = 0;
  std::string error;
};

struct RunManifest {
  std::string experiment;
  std::string id;
  std::string config_hash;
  std::string version = version_tag;
  std::vector<std::uint64_t> seeds;
  std::string started;
  std::string finished;
  std::vector<OutputFile> files;
  std::vector<RunFailure> failures;
  bool passed = true;
};

inline Json to_json(const RunManifest& m) {
  Json files = Json::array(), fails = Json::array();
  for (const auto& f : m.files) files.push_back({{"path", f.path}, {"bytes", f.bytes}, {"fnv1a", f.hash}});
  for (const auto& f : m.failures) fails.push_back({{"run", f.index}, {"seed", f.seed}, {"error", f.error}});
  return {{"experiment", m.experiment}, {"id", m.id},         {"config_hash", m.config_hash},
          {"version", m.version},       {"seeds", m.seeds},   {"started", m.started},
          {"finished", m.finished},     {"files", files},     {"failures", fails},
          {"passed", m.passed}};
}

struct ExperimentResult {
  RunManifest manifest;
  Json summary = Json::object();  // check name -> {value, ci, status, details}
  bool passed = true;
};

namespace detail {

class Emitter {
 public:
  Emitter(const std::string& dir, RunManifest& m) : dir_(dir), m_(m) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_))
      throw Error(ErrorCode::io_error, "cannot create output directory " + dir_.string());
  }
  void write(const std::string& name, const std::string& text) {
    write_file(dir_ / name, text);
    m_.files.push_back({name, text.size(), fingerprint(text)});
  }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  RunManifest& m_;
};

inline void add_check(Json& summary, const CheckReport& r, const std::string& prefix = "") {
  std::string name = prefix.empty() ? r.name : prefix + "." + r.name;
  summary[name] = {{"value", finite_or_null(r.statistic)},
                   {"ci", {finite_or_null(r.ci.lo), finite_or_null(r.ci.hi)}},
                   {"status", to_string(r.status)},
                   {"details", r.details}};
}

inline BodySpec body_spec(const DensityConfig& d) {
  if (d.kind == "cube") return BodySpec::cube(d.side);
  if (d.kind == "ball") return BodySpec::ball(d.radius);
  if (d.kind == "simplex") return BodySpec::simplex(d.side);
  if (d.kind == "ellipsoid") return BodySpec::ellipsoid(d.axes);
  if (d.kind == "cube_ball") return BodySpec::cube_truncated_by_ball(d.side, d.radius);
  if (d.kind == "halfspace_truncation") return BodySpec::halfspace_truncation(d.side, d.offset);
  throw Error(ErrorCode::invalid_spec, "not a body: " + d.kind);
}

inline std::string density_name(const DensityConfig& d) { return d.kind + "_n" + std::to_string(d.dim); }

}  // namespace detail

// Density from its tagged record; `map` receives the isotropizing map (identity
// for builtins, which are already isotropic).
inline LogDensity build_density(const DensityConfig& d, AffineMap* map = nullptr) {
  const int n = d.dim;
  if (map) *map = AffineMap::identity(n);
  if (d.kind == "gaussian") return make_density(Builtin::standard_gaussian, n);
  if (d.kind == "exponential") return make_density(Builtin::exponential_product, n);
  if (d.kind == "uniform") return make_density(Builtin::uniform_product, n);
  BodySpec spec = detail::body_spec(d);
  if (d.unit_volume) spec = unit_volume(spec, n);
  LogDensity f = make_density(spec, n);
  if (!d.isotropize) return f;
  auto [g, m] = isotropize(f);
  if (map) *map = m;
  return g;
}

inline MomentStrategy choose_strategy(const ExperimentConfig& c, const LogDensity& f) {
  std::string s = c.strategy;
  if (s == "auto") {
    if (f.kind() == DensityKind::standard_gaussian) s = "closed_form";
    else s = f.dim() <= 3 ? "quadrature" : "particles";
  }
  if (s == "closed_form") return MomentStrategy::closed_form();
  if (s == "quadrature") return MomentStrategy::quadrature(c.order);
  return MomentStrategy::particles_of(c.particles);
}

namespace detail {

// Runs every index, recording failures; rethrows the first one under fail-fast.
template <class Out, class Fn>
std::vector<std::optional<Out>> run_all(const ExperimentConfig& c, bool fail_fast, RunManifest& m, Fn&& fn) {
  std::vector<std::optional<Out>> out(c.runs);
  std::vector<std::string> errors(c.runs);
  std::vector<std::exception_ptr> eptr(c.runs);
  for (int r = 0; r < c.runs; ++r) m.seeds.push_back(derive_seed(*c.seed, static_cast<std::uint64_t>(r)));
  parallel_for(static_cast<std::size_t>(c.runs), [&](std::size_t r) {
    try {
      out[r] = fn(m.seeds[r]);
    } catch (const std::exception& e) {
      errors[r] = e.what();
      eptr[r] = std::current_exception();
    }
  });
  for (int r = 0; r < c.runs; ++r)
    if (eptr[r]) {
      if (fail_fast) std::rethrow_exception(eptr[r]);
      m.failures.push_back({r, m.seeds[r], errors[r]});
    }
  return out;
}

template <class Out>
std::vector<Out> completed(std::vector<std::optional<Out>>& v) {
  std::vector<Out> out;
  for (auto& x : v)
    if (x) out.push_back(std::move(*x));
  return out;
}

inline std::string seed_name(const std::string& id, std::uint64_t seed) {
  return id + "_seed" + std::to_string(seed) + ".csv";
}

// Skips checks whose run-count requirement is not met, noting why.
template <class Fn>
void try_check(Json& summary, const std::string& name, Fn&& fn) {
  try {
    add_check(summary, fn());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::insufficient_runs) throw;
    summary[name] = {{"value", nullptr}, {"ci", {nullptr, nullptr}}, {"status", "report"}, {"details", {{"skipped", e.what()}}}};
  }
}

inline CheckReport barycenter_variance_check(const std::vector<Trajectory>& runs, double t, double tol) {
  CheckReport rep;
  rep.name = "barycenter_variance";
  std::vector<double> vars;
  const int n = runs.front().dim();
  for (int i = 0; i < n; ++i) {
    std::vector<double> x;
    for (const auto& r : runs) {
      const StepRecord* best = &r.records.front();
      for (const auto& rec : r.records)
        if (std::abs(rec.t - t) < std::abs(best->t - t)) best = &rec;
      x.push_back(best->a(i));
    }
    vars.push_back(stats::variance(x));
  }
  double v = stats::mean(vars), want = 1 - std::exp(-t);
  rep.statistic = v;
  rep.status = runs.size() >= 500 ? verdict(std::abs(v - want) <= tol * want) : Status::report;
  rep.details["t"] = t;
  rep.details["expected"] = want;
  rep.details["relative_tolerance"] = tol;
  return rep;
}

inline void run_failures_check(Json& summary, const RunManifest& m) {
  CheckReport rep;
  rep.name = "run_failures";
  rep.statistic = static_cast<double>(m.failures.size());
  rep.status = verdict(m.failures.empty());
  add_check(summary, rep);
}

inline void trajectory_experiment(const ExperimentConfig& c, bool fail_fast, RunManifest& m, Emitter& em,
                                  Json& summary, bool gaussian) {
  DensityConfig dc = c.density;
  if (gaussian) dc.kind = "gaussian";
  LogDensity f = build_density(dc);
  MomentStrategy st = choose_strategy(c, f);
  RunOptions opt;
  opt.check_isotropic = false;
  if (st.kind != StrategyKind::particle_weights) check_isotropic(f, 1e-6);
  auto runs = run_all<Trajectory>(c, fail_fast, m, [&](std::uint64_t seed) {
    return run_trajectory(f, c.schedule, st, seed, opt);
  });
  auto done = completed(runs);
  for (const auto& tr : done) em.write(seed_name(c.id, tr.seed), trajectory_csv(tr).text());
  run_failures_check(summary, m);
  if (done.empty()) return;
  if (gaussian) {
    bool cloud = st.kind == StrategyKind::particle_weights;
    double tol = c.tolerances.at(cloud ? "gaussian_cloud" : "gaussian_tilt");
    add_check(summary, gaussian_closed_form_check(done, tol, cloud));
    if (c.schedule.t_max >= 1) add_check(summary, barycenter_variance_check(done, 1.0, 0.1));
  }
  try_check(summary, "trace_identity", [&] { return trace_identity_check(done); });
  add_check(summary, ceiling_check(done, c.tolerances.at("ceiling")));
  try_check(summary, "opnorm_envelope", [&] { return opnorm_envelope(done); });
}

inline void isoperimetry_experiment(const ExperimentConfig& c, bool fail_fast, RunManifest& m, Emitter& em,
                                    Json& summary) {
  LogDensity f = build_density(c.density);
  const int n = f.dim();
  Vec dir = c.direction.empty() ? Vec(Vec::Unit(n, 0)) : Eigen::Map<const Vec>(c.direction.data(), n);
  TestSet set = c.offset ? TestSet::halfspace(dir, *c.offset) : median_halfspace(f, dir);
  MomentStrategy st = choose_strategy(c, f);
  // grid rules only align cut points with axis halfspaces
  if (c.strategy == "auto" && st.kind == StrategyKind::grid_quadrature && !set.axis_cut())
    st = MomentStrategy::particles_of(c.particles);
  RunOptions opt;
  opt.check_isotropic = false;
  opt.probes = {set};
  auto runs = run_all<Trajectory>(c, fail_fast, m, [&](std::uint64_t seed) {
    return run_trajectory(f, c.schedule, st, seed, opt);
  });
  auto done = completed(runs);
  run_failures_check(summary, m);
  if (done.empty()) return;
  auto g = mass_processes(done, 0);
  std::vector<double> t = record_times(done);
  CsvWriter csv({"t", "mean_g", "var_g", "mean_sq_dev", "qv_rate", "band_frequency"});
  for (std::size_t k = 0; k < t.size(); ++k) {
    std::vector<double> x, dev, qv;
    int band = 0;
    for (const auto& p : g) {
      std::size_t i = std::min(k, p.g.size() - 1);
      x.push_back(p.g[i]);
      dev.push_back((p.g[i] - 0.5) * (p.g[i] - 0.5));
      qv.push_back(t[k] > 0 ? p.qv[i] / t[k] : 0.0);
      band += p.g[i] >= 0.1 && p.g[i] <= 0.9;
    }
    csv.row({t[k], stats::mean(x), stats::variance(x), stats::mean(dev), stats::mean(qv),
             static_cast<double>(band) / static_cast<double>(g.size())});
  }
  em.write(c.id + "_set0.csv", csv.text());
  summary["halfspace_offset"] = {{"value", set.offset()}, {"ci", {nullptr, nullptr}}, {"status", "report"},
                                 {"details", {{"initial_mass", g.front().g.front()}}}};
  try_check(summary, "variance_bound",
            [&] { return variance_bound_check(done, 0, c.tolerances.at("variance_slack")); });
  try_check(summary, "mass_martingale", [&] { return mass_martingale_check(done, 0); });
  try_check(summary, "band_frequency", [&] { return band_frequency_check(done, 0); });
}

inline void constants_experiment(const ExperimentConfig& c, Emitter& em, Json& summary) {
  for (int n : c.dims)
    for (const auto& kind : c.battery) {
      DensityConfig dc;
      dc.kind = kind;
      dc.dim = n;
      LogDensity f = build_density(dc);
      SampleOptions so;
      so.order = c.order;
      so.mc_samples = c.mc_samples;
      so.seed = *c.seed;
      MeasureSample mu = measure_sample(f, so);
      std::string name = detail::density_name(dc);
      std::vector<int> ladder;
      for (int k : c.ladder)
        if (k <= n) ladder.push_back(k);
      ConstantsReport rep = constants_report(name, mu, ladder);
      em.write("constants_" + name + ".json", to_json(rep).dump(2) + "\n");
      add_check(summary, rep.kappa_q, name);
      add_check(summary, rep.shell_sum, name);
      summary[name + ".k_stat"] = {{"value", rep.k_stat}, {"ci", {nullptr, nullptr}}, {"status", "report"},
                                   {"details", {{"q_stat", rep.q_stat}, {"q_quad", rep.q_quad},
                                                {"sigma_stat", rep.sigma_stat}, {"source", mu.source}}}};
    }
}

inline void couple_experiment(const ExperimentConfig& c, bool fail_fast, RunManifest& m, Emitter& em,
                              Json& summary) {
  AffineMap map;
  LogDensity f = build_density(c.density, &map);
  DensityConfig tc = *c.target;
  tc.isotropize = false;
  LogDensity g = build_density(tc);
  if (tc.kind != "gaussian" && tc.kind != "exponential" && tc.kind != "uniform") {
    g = g.mapped(map);
    Vec b = exact_moments(g).barycenter;
    g = g.mapped({Mat::Identity(g.dim(), g.dim()), b});
  }
  SupConvolution H = sup_convolution(f, g);
  CouplingOptions co;
  co.schedule = c.schedule;
  co.particles = c.particles;
  if (c.strategy == "quadrature") co.quadrature_order = c.order;
  check_coupling_inputs(f, g, co);
  co.check_inputs = false;
  auto runs = run_all<CoupledTrajectory>(c, fail_fast, m, [&](std::uint64_t seed) {
    return run_coupled(f, g, H, seed, co);
  });
  auto done = completed(runs);
  for (const auto& tr : done) em.write(seed_name(c.id, tr.seed), coupled_csv(tr, c.eps, c.op_cap).text());
  run_failures_check(summary, m);
  summary["sup_convolution"] = {{"value", H.total_mass}, {"ci", {H.total_mass - 3 * H.mass_se, H.total_mass + 3 * H.mass_se}},
                                {"status", "report"}, {"details", {{"method", H.method}}}};
  if (done.empty()) return;
  if (H.method == "identical") add_check(summary, identical_coupling_check(done, c.tolerances.at("identical")));
  add_check(summary, singular_value_check(done, c.tolerances.at("singular_values")));
  try_check(summary, "s_martingale", [&] { return s_martingale_check(done); });
  try_check(summary, "optional_stopping", [&] {
    return drift_diagnostic(done, c.tolerances.at("drift_relative"), c.tolerances.at("covariation"));
  });
  WassersteinReport w = wasserstein_coupling(done, c.horizon.value_or(c.schedule.t_max), c.eps, c.op_cap);
  add_check(summary, w.doob);
  summary["wasserstein_bound"] = {{"value", w.bound}, {"ci", {nullptr, nullptr}}, {"status", "report"},
                                  {"details", to_json(w)}};
}

inline void collect_summaries(const std::filesystem::path& root, Json& merged) {
  std::vector<std::filesystem::path> found;
  std::error_code ec;
  for (auto it = std::filesystem::recursive_directory_iterator(root, ec);
       !ec && it != std::filesystem::recursive_directory_iterator(); it.increment(ec))
    if (it->path().filename() == "summary.json" && it->path().parent_path() != root) found.push_back(it->path());
  if (ec) throw Error(ErrorCode::io_error, "cannot scan " + root.string());
  std::sort(found.begin(), found.end());
  for (const auto& p : found) {
    Json s = Json::parse(read_file(p), nullptr, false);
    if (s.is_discarded()) throw Error(ErrorCode::io_error, "malformed " + p.string());
    std::string prefix = std::filesystem::relative(p.parent_path(), root).generic_string();
    for (auto it = s.begin(); it != s.end(); ++it) merged[prefix + "/" + it.key()] = it.value();
  }
}

}  // namespace detail

// Executes one experiment: per-run CSVs, summary.json, manifest.json in c.out.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const std::string& config_text,
                                       bool fail_fast = false) {
  ExperimentResult res;
  RunManifest& m = res.manifest;
  m.experiment = to_string(c.kind);
  m.id = c.id;
  m.config_hash = fingerprint(config_text + "\nseed=" + (c.seed ? std::to_string(*c.seed) : ""));
  m.started = utc_now();
  detail::Emitter em(c.out, m);
  Json& summary = res.summary;
  switch (c.kind) {
    case ExperimentKind::simulate: detail::trajectory_experiment(c, fail_fast, m, em, summary, false); break;
    case ExperimentKind::gaussian_check: detail::trajectory_experiment(c, fail_fast, m, em, summary, true); break;
    case ExperimentKind::isoperimetry: detail::isoperimetry_experiment(c, fail_fast, m, em, summary); break;
    case ExperimentKind::constants: detail::constants_experiment(c, em, summary); break;
    case ExperimentKind::couple: detail::couple_experiment(c, fail_fast, m, em, summary); break;
    case ExperimentKind::report: detail::collect_summaries(em.dir(), summary); break;
  }
  for (auto it = summary.begin(); it != summary.end(); ++it)
    if (it.value().value("status", "") == "fail") res.passed = false;
  m.passed = res.passed;
  em.write(c.kind == ExperimentKind::report ? "report.json" : "summary.json", summary.dump(2) + "\n");
  m.finished = utc_now();
  write_file(em.dir() / "manifest.json", to_json(m).dump(2) + "\n");
  return res;
}

}  // namespace sloc
