#include <iostream>

#include "sloc/sloc.hpp"

namespace {

int execute(sloc::ExperimentKind kind, const std::string& path, std::optional<std::uint64_t> seed,
            std::optional<std::string> out, bool fail_fast) {
  std::string text;
  if (!path.empty()) {
    try {
      text = sloc::read_file(path);
    } catch (const sloc::Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 3;
    }
  }
  sloc::ExperimentConfig cfg;
  try {
    cfg = sloc::parse_config(text, {kind, seed, out});
  } catch (const sloc::ConfigError& e) {
    for (const auto& i : e.issues()) {
      std::cerr << path << ":";
      if (i.line > 0) std::cerr << i.line << ":";
      std::cerr << " " << sloc::to_string(i.code) << " [" << i.field << "] " << i.message << "\n";
    }
    return 2;
  }
  try {
    sloc::ExperimentResult r = sloc::run_experiment(cfg, text, fail_fast);
    for (auto it = r.summary.begin(); it != r.summary.end(); ++it) {
      std::string status = it.value().value("status", "report");
      for (auto& c : status) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      std::cout << status << " " << it.key() << " " << it.value()["value"].dump() << "\n";
    }
    std::cout << "manifest: " << cfg.out << "/manifest.json\n";
    return r.passed ? 0 : 1;
  } catch (const sloc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic localization experiments"};
  app.set_version_flag("--version", std::string(sloc::version_tag));
  app.require_subcommand(1);

  struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool fail_fast = false;
  };
  std::vector<std::pair<sloc::ExperimentKind, std::string>> kinds = {
      {sloc::ExperimentKind::simulate, "run tilt trajectories and the trace/ceiling diagnostics"},
      {sloc::ExperimentKind::gaussian_check, "compare A_t with e^{-t} I on the standard Gaussian"},
      {sloc::ExperimentKind::constants, "thin-shell, kappa and q statistics over a density battery"},
      {sloc::ExperimentKind::isoperimetry, "halfspace mass processes and their variance bound"},
      {sloc::ExperimentKind::couple, "coupled localization of two densities and the W2 bound"},
      {sloc::ExperimentKind::report, "merge summary.json files under the output directory"}};
  std::vector<Args> args(kinds.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    CLI::App* s = app.add_subcommand(sloc::to_string(kinds[i].first), kinds[i].second);
    auto* cfg = s->add_option("config_path", args[i].config, "experiment config file");
    s->add_option("--config", args[i].config, "experiment config file")->excludes(cfg);
    s->add_option("--seed", args[i].seed, "base seed (overrides the config)");
    s->add_option("--out", args[i].out, "output directory (overrides the config)");
    s->add_flag("--fail-fast", args[i].fail_fast, "stop at the first failed run");
    subs.push_back(s);
  }
  CLI11_PARSE(app, argc, argv);
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (subs[i]->parsed()) {
      const Args& a = args[i];
      if (a.config.empty() && kinds[i].first != sloc::ExperimentKind::report) {
        std::cerr << "error: " << sloc::to_string(kinds[i].first) << " needs a config file\n";
        return 2;
      }
      return execute(kinds[i].first, a.config, a.seed, a.out, a.fail_fast);
    }
  return 2;
}
