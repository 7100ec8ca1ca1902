#include <gtest/gtest.h>

#include <filesystem>

#include "sloc/runner.hpp"

using namespace sloc;

namespace {

const char* minimal_gaussian = R"(experiment = "gaussian-check"
seed = 7
runs = 64

[density]
kind = "gaussian"
dim = 2

[schedule]
dt = 1e-3
t_max = 2
)";

std::vector<ConfigIssue> issues_of(const std::string& text, const ConfigOverrides& o = {}) {
  try {
    parse_config(text, o);
  } catch (const ConfigError& e) {
    return e.issues();
  }
  return {};
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sloc_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, MinimalGaussianCheckIsValid) {
  ExperimentConfig c = parse_config(minimal_gaussian);
  EXPECT_EQ(c.kind, ExperimentKind::gaussian_check);
  EXPECT_EQ(c.density.dim, 2);
  EXPECT_DOUBLE_EQ(c.schedule.dt, 1e-3);
  EXPECT_DOUBLE_EQ(c.schedule.t_max, 2);
  EXPECT_EQ(c.runs, 64);
  ASSERT_TRUE(c.seed);
  EXPECT_EQ(*c.seed, 7u);
}

TEST(Config, ZeroStepIsConstraintViolationOnDt) {
  std::string text = minimal_gaussian;
  text.replace(text.find("dt = 1e-3"), 9, "dt = 0");
  auto v = issues_of(text);
  ASSERT_FALSE(v.empty());
  bool found = false;
  for (const auto& i : v) found |= i.code == ErrorCode::constraint_violation && i.field == "schedule.dt";
  EXPECT_TRUE(found);
  EXPECT_GT(v.front().line, 0);
}

TEST(Config, UnknownKeyIsNamed) {
  auto v = issues_of(std::string(minimal_gaussian) + "foo = 1\n");
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].code, ErrorCode::unknown_key);
  EXPECT_NE(v[0].message.find("foo"), std::string::npos);
}

TEST(Config, TypeMismatch) {
  auto v = issues_of(std::string(minimal_gaussian) + "[strategy]\norder = \"many\"\n");
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].code, ErrorCode::type_mismatch);
  EXPECT_EQ(v[0].field, "strategy.order");
}

TEST(Config, CollectsEveryIssue) {
  auto v = issues_of("runs = 0\nbar = 2\n[schedule]\ndt = -1\n", {ExperimentKind::simulate, 1, {}});
  EXPECT_GE(v.size(), 3u);
}

TEST(Config, SeedRequiredExceptForReport) {
  std::string text = "[density]\nkind = \"gaussian\"\n";
  EXPECT_FALSE(issues_of(text, {ExperimentKind::simulate, {}, {}}).empty());
  EXPECT_TRUE(issues_of(text, {ExperimentKind::report, {}, {}}).empty());
  EXPECT_TRUE(issues_of(text, {ExperimentKind::simulate, 3, {}}).empty());
}

TEST(Config, SubcommandMustMatchExperiment) {
  auto v = issues_of(minimal_gaussian, {ExperimentKind::couple, {}, {}});
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v.front().field, "experiment");
}

TEST(Config, ListsAndSections) {
  ExperimentConfig c = parse_config(R"(experiment = "constants"
seed = 1
[constants]
battery = ["cube", "ball"]
dims = [2]
ladder = [3, 6]
[tolerances]
ceiling = 1.1
)");
  EXPECT_EQ(c.battery, (std::vector<std::string>{"cube", "ball"}));
  EXPECT_EQ(c.dims, std::vector<int>{2});
  EXPECT_EQ(c.ladder, (std::vector<int>{3, 6}));
  EXPECT_DOUBLE_EQ(c.tolerances.at("ceiling"), 1.1);
}

TEST(Csv, HeaderAndRoundTrip) {
  CsvWriter csv({"t", "x"});
  csv.row({0.1, 1.0 / 3.0});
  std::istringstream in(csv.text());
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  EXPECT_EQ(l1, "# sloc-csv v1");
  EXPECT_EQ(l2, "t,x");
  EXPECT_EQ(std::stod(l3.substr(l3.find(',') + 1)), 1.0 / 3.0);
  EXPECT_THROW(csv.row({1.0}), Error);
}

TEST(Runner, SameSeedGivesIdenticalFiles) {
  std::string text = std::string(minimal_gaussian);
  text.replace(text.find("t_max = 2"), 9, "t_max = 0.2");
  text.replace(text.find("runs = 64"), 9, "runs = 4");
  auto hashes = [&](const std::string& dir) {
    ExperimentConfig c = parse_config(text, {{}, {}, dir});
    ExperimentResult r = run_experiment(c, text);
    std::map<std::string, std::string> h;
    for (const auto& f : r.manifest.files)
      if (f.path != "summary.json") h[f.path] = f.hash;
    EXPECT_EQ(r.manifest.seeds.size(), 4u);
    return h;
  };
  auto a = scratch("det_a"), b = scratch("det_b");
  auto ha = hashes(a.string()), hb = hashes(b.string());
  EXPECT_EQ(ha.size(), 4u);
  EXPECT_EQ(ha, hb);
  for (const auto& [name, hash] : ha) EXPECT_EQ(fingerprint(read_file(a / name)), hash);
  EXPECT_TRUE(std::filesystem::exists(a / "manifest.json"));
  Json summary = Json::parse(read_file(a / "summary.json"));
  EXPECT_EQ(summary["gaussian_closed_form"]["status"], "pass");
  EXPECT_EQ(summary["trace_identity"]["status"], "report");  // fewer than 30 runs
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Runner, ReportMergesSummaries) {
  auto root = scratch("report");
  std::string text = std::string(minimal_gaussian);
  text.replace(text.find("t_max = 2"), 9, "t_max = 0.1");
  text.replace(text.find("runs = 64"), 9, "runs = 2");
  run_experiment(parse_config(text, {{}, {}, (root / "g").string()}), text);
  ExperimentConfig rc = parse_config("", {ExperimentKind::report, {}, root.string()});
  ExperimentResult r = run_experiment(rc, "");
  EXPECT_TRUE(r.summary.contains("g/gaussian_closed_form"));
  std::filesystem::remove_all(root);
}

TEST(Runner, UnwritableOutputIsIoError) {
  ExperimentConfig c = parse_config(minimal_gaussian, {{}, {}, "/proc/sloc_cannot_write"});
  try {
    run_experiment(c, minimal_gaussian);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io_error);
  }
}
