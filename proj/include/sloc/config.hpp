#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "engine.hpp"

namespace sloc {

enum class ExperimentKind { simulate, gaussian_check, constants, isoperimetry, couple, report };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::simulate: return "simulate";
    case ExperimentKind::gaussian_check: return "gaussian-check";
    case ExperimentKind::constants: return "constants";
    case ExperimentKind::isoperimetry: return "isoperimetry";
    case ExperimentKind::couple: return "couple";
    case ExperimentKind::report: return "report";
  }
  return "?";
}

inline std::optional<ExperimentKind> experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::simulate, ExperimentKind::gaussian_check, ExperimentKind::constants,
                 ExperimentKind::isoperimetry, ExperimentKind::couple, ExperimentKind::report})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

// Tagged density record: builtins (gaussian, exponential, uniform) or a body.
struct DensityConfig {
  std::string kind = "gaussian";
  int dim = 2;
  double side = 1.0;
  double radius = 1.0;
  double offset = 0.0;
  std::vector<double> axes;
  bool unit_volume = false;
  bool isotropize = true;
};

inline const std::vector<std::string>& density_kinds() {
  static const std::vector<std::string> k = {"gaussian", "exponential", "uniform", "cube", "ball",
                                             "simplex", "ellipsoid", "cube_ball", "halfspace_truncation"};
  return k;
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::simulate;
  std::string id = "experiment";
  std::optional<std::uint64_t> seed;
  int runs = 64;
  std::string out = "results";

  DensityConfig density;
  std::optional<DensityConfig> target;

  Schedule schedule;
  std::string strategy = "auto";  // auto, closed_form, quadrature, particles
  int order = 32;
  Eigen::Index particles = 10000;

  std::map<std::string, double> tolerances = {
      {"gaussian_tilt", 0.1}, {"gaussian_cloud", 0.15}, {"ceiling", 1.05}, {"variance_slack", 0.05},
      {"drift_relative", 0.10}, {"covariation", 0.20},   {"singular_values", 1e-8},    {"identical", 1e-10}};

  // isoperimetry
  std::vector<double> direction;        // default e_1
  std::optional<double> offset;         // default: median halfspace

  // constants
  std::vector<std::string> battery = {"gaussian", "exponential", "uniform", "cube", "ball"};
  std::vector<int> dims = {2, 3};
  Eigen::Index mc_samples = 1000000;
  std::vector<int> ladder = {5, 10};

  // couple
  double eps = 0.2;
  std::optional<double> horizon;  // T for the W2 bound; default t_max
  std::optional<double> op_cap;
};

struct ConfigIssue {
  ErrorCode code;
  std::string field;
  int line = 0;
  std::string message;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues)
      : Error(issues.empty() ? ErrorCode::invalid_spec : issues.front().code, summarize(issues)),
        issues_(std::move(issues)) {}
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  static std::string summarize(const std::vector<ConfigIssue>& v) {
    std::string s;
    for (const auto& i : v) {
      if (!s.empty()) s += "; ";
      s += std::string(to_string(i.code)) + " at " + i.field;
      if (i.line > 0) s += " (line " + std::to_string(i.line) + ")";
      s += ": " + i.message;
    }
    return s;
  }
  std::vector<ConfigIssue> issues_;
};

struct ConfigOverrides {
  std::optional<ExperimentKind> kind;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

namespace detail {

// Line of each "section.key" in the text, for error messages.
inline std::map<std::string, int> key_lines(const std::string& text) {
  std::map<std::string, int> out;
  std::istringstream in(text);
  std::string line, section;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#' || line[b] == ';') continue;
    if (line[b] == '[') {
      auto e = line.find(']', b);
      section = line.substr(b + 1, e == std::string::npos ? std::string::npos : e - b - 1);
      continue;
    }
    auto eq = line.find('=', b);
    if (eq == std::string::npos) continue;
    std::string key = line.substr(b, eq - b);
    key.erase(key.find_last_not_of(" \t") + 1);
    out.emplace(section.empty() ? key : section + "." + key, no);
  }
  return out;
}

template <class T>
std::optional<T> parse_scalar(const std::string& s) {
  T v{};
  if (!CLI::detail::lexical_cast(s, v)) return std::nullopt;
  return v;
}

}  // namespace detail

// Flat key/value text with [sections]; every violation is collected before
// throwing.
inline ExperimentConfig parse_config(const std::string& text, const ConfigOverrides& over = {}) {
  ExperimentConfig cfg;
  std::vector<ConfigIssue> issues;
  auto lines = detail::key_lines(text);
  auto line_of = [&](const std::string& k) {
    auto it = lines.find(k);
    return it == lines.end() ? 0 : it->second;
  };
  auto issue = [&](ErrorCode c, const std::string& field, const std::string& msg) {
    issues.push_back({c, field, line_of(field), msg});
  };

  std::vector<CLI::ConfigItem> items;
  try {
    std::istringstream in(text);
    items = CLI::ConfigTOML().from_config(in);
  } catch (const std::exception& e) {
    throw ConfigError({{ErrorCode::type_mismatch, "<file>", 0, e.what()}});
  }

  using Setter = std::function<bool(const std::vector<std::string>&)>;
  auto scalar = [](auto& target) -> Setter {
    return [&target](const std::vector<std::string>& in) {
      using T = std::decay_t<decltype(target)>;
      if (in.size() != 1) return false;
      auto v = detail::parse_scalar<T>(in[0]);
      if (!v) return false;
      target = *v;
      return true;
    };
  };
  auto optional_scalar = [](auto& target) -> Setter {
    return [&target](const std::vector<std::string>& in) {
      using T = typename std::decay_t<decltype(target)>::value_type;
      if (in.size() != 1) return false;
      auto v = detail::parse_scalar<T>(in[0]);
      if (!v) return false;
      target = *v;
      return true;
    };
  };
  auto list = [](auto& target) -> Setter {
    return [&target](const std::vector<std::string>& in) {
      using T = typename std::decay_t<decltype(target)>::value_type;
      std::decay_t<decltype(target)> out;
      for (const auto& s : in) {
        auto v = detail::parse_scalar<T>(s);
        if (!v) return false;
        out.push_back(*v);
      }
      target = std::move(out);
      return true;
    };
  };

  std::string experiment;
  std::optional<std::uint64_t> seed;
  std::optional<double> offset, horizon, op_cap;
  DensityConfig target;
  bool has_target = false;
  long long particles = cfg.particles, mc_samples = cfg.mc_samples;

  std::map<std::string, Setter> keys = {
      {"experiment", scalar(experiment)},
      {"id", scalar(cfg.id)},
      {"seed", optional_scalar(seed)},
      {"runs", scalar(cfg.runs)},
      {"out", scalar(cfg.out)},
      {"schedule.dt", scalar(cfg.schedule.dt)},
      {"schedule.t_max", scalar(cfg.schedule.t_max)},
      {"schedule.stride", scalar(cfg.schedule.stride)},
      {"schedule.stop_trace", scalar(cfg.schedule.stop_trace)},
      {"schedule.guard", scalar(cfg.schedule.guard)},
      {"schedule.max_halvings", scalar(cfg.schedule.max_halvings)},
      {"strategy.kind", scalar(cfg.strategy)},
      {"strategy.order", scalar(cfg.order)},
      {"strategy.particles", scalar(particles)},
      {"isoperimetry.direction", list(cfg.direction)},
      {"isoperimetry.offset", optional_scalar(offset)},
      {"constants.battery", list(cfg.battery)},
      {"constants.dims", list(cfg.dims)},
      {"constants.samples", scalar(mc_samples)},
      {"constants.ladder", list(cfg.ladder)},
      {"couple.eps", scalar(cfg.eps)},
      {"couple.horizon", optional_scalar(horizon)},
      {"couple.op_cap", optional_scalar(op_cap)},
  };
  for (auto [prefix, d] : {std::pair<std::string, DensityConfig*>{"density", &cfg.density}, {"target", &target}}) {
    keys[prefix + ".kind"] = scalar(d->kind);
    keys[prefix + ".dim"] = scalar(d->dim);
    keys[prefix + ".side"] = scalar(d->side);
    keys[prefix + ".radius"] = scalar(d->radius);
    keys[prefix + ".offset"] = scalar(d->offset);
    keys[prefix + ".axes"] = list(d->axes);
    keys[prefix + ".unit_volume"] = scalar(d->unit_volume);
    keys[prefix + ".isotropize"] = scalar(d->isotropize);
  }
  for (auto& [name, value] : cfg.tolerances) keys["tolerances." + name] = scalar(value);

  for (const auto& it : items) {
    if (it.name == "++" || it.name == "--") continue;
    std::string key = it.fullname();
    auto k = keys.find(key);
    if (k == keys.end()) {
      issue(ErrorCode::unknown_key, key, "unknown key \"" + key + "\"");
      continue;
    }
    if (!k->second(it.inputs)) issue(ErrorCode::type_mismatch, key, "cannot parse value");
    if (key.rfind("target.", 0) == 0) has_target = true;
  }
  cfg.seed = seed;
  cfg.particles = static_cast<Eigen::Index>(particles);
  cfg.mc_samples = static_cast<Eigen::Index>(mc_samples);
  cfg.offset = offset;
  cfg.horizon = horizon;
  cfg.op_cap = op_cap;
  if (has_target) cfg.target = target;

  if (!experiment.empty()) {
    if (auto k = experiment_kind(experiment)) cfg.kind = *k;
    else issue(ErrorCode::constraint_violation, "experiment", "unknown experiment \"" + experiment + "\"");
  }
  if (over.kind) {
    if (!experiment.empty() && experiment_kind(experiment) && *experiment_kind(experiment) != *over.kind)
      issue(ErrorCode::constraint_violation, "experiment",
            "config names \"" + experiment + "\" but the subcommand is " + to_string(*over.kind));
    cfg.kind = *over.kind;
  }
  if (over.seed) cfg.seed = over.seed;
  if (over.out) cfg.out = *over.out;

  auto need = [&](bool ok, const std::string& field, const std::string& msg) {
    if (!ok) issue(ErrorCode::constraint_violation, field, msg);
  };
  need(cfg.schedule.dt > 0, "schedule.dt", "dt must be positive");
  need(cfg.schedule.t_max >= cfg.schedule.dt, "schedule.t_max", "t_max must be at least dt");
  need(cfg.schedule.stride >= 1, "schedule.stride", "stride must be at least 1");
  need(cfg.schedule.stop_trace >= 0, "schedule.stop_trace", "stop_trace must be nonnegative");
  need(cfg.runs >= 1, "runs", "runs must be at least 1");
  need(!cfg.id.empty() && cfg.id.find('/') == std::string::npos, "id", "id must be a nonempty file-name stem");
  need(cfg.strategy == "auto" || cfg.strategy == "closed_form" || cfg.strategy == "quadrature" ||
           cfg.strategy == "particles",
       "strategy.kind", "strategy must be auto, closed_form, quadrature or particles");
  need(cfg.order >= 2, "strategy.order", "quadrature order must be at least 2");
  need(cfg.strategy != "particles" || cfg.particles >= 100, "strategy.particles",
       "cloud strategies need at least 100 particles");
  if (cfg.kind == ExperimentKind::couple) need(cfg.particles >= 100, "strategy.particles", "clouds need N >= 100");
  need(cfg.eps > 0 && cfg.eps < 1, "couple.eps", "eps must lie in (0,1)");
  need(!cfg.horizon || *cfg.horizon > 0, "couple.horizon", "horizon must be positive");
  need(cfg.mc_samples >= 100, "constants.samples", "at least 100 Monte Carlo samples");
  for (int d : cfg.dims) need(d >= 1, "constants.dims", "dimensions must be positive");
  for (const auto& b : cfg.battery)
    need(std::find(density_kinds().begin(), density_kinds().end(), b) != density_kinds().end(), "constants.battery",
         "unknown density \"" + b + "\"");
  for (auto [prefix, d] : {std::pair<std::string, const DensityConfig*>{"density", &cfg.density},
                           {"target", cfg.target ? &*cfg.target : nullptr}}) {
    if (!d) continue;
    need(std::find(density_kinds().begin(), density_kinds().end(), d->kind) != density_kinds().end(),
         prefix + ".kind", "unknown density \"" + d->kind + "\"");
    need(d->dim >= 1, prefix + ".dim", "dimension must be positive");
    need(d->side > 0 && d->radius > 0, prefix + ".side", "side and radius must be positive");
    need(d->kind != "ellipsoid" || static_cast<int>(d->axes.size()) == d->dim, prefix + ".axes",
         "ellipsoid needs one axis per dimension");
  }
  need(cfg.direction.empty() || static_cast<int>(cfg.direction.size()) == cfg.density.dim, "isoperimetry.direction",
       "direction must have density.dim entries");
  if (cfg.kind == ExperimentKind::couple) {
    need(cfg.target.has_value(), "target", "couple needs a [target] density");
    need(!cfg.target || cfg.target->dim == cfg.density.dim, "target.dim", "target and density dimensions differ");
  }
  if (cfg.kind != ExperimentKind::report) need(cfg.seed.has_value(), "seed", "stochastic experiments need a seed");

  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

}  // namespace sloc
