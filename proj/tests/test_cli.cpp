// SPDX-License-Identifier: Apache-2.0
// Drives the lrf binary as a subprocess: exit codes, artifact determinism and
// the allocation examples seen through the command-line boundary.

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "lrf/model_io.hpp"
#include "lrf/pipeline.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using testing_support::TempDir;

namespace {

int run_cli(const std::string &args) {
  const std::string cmd = std::string(LRF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path &p, const std::string &text) {
  std::ofstream(p, std::ios::binary) << text;
}

fs::path small_config(const fs::path &dir, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json j = {{"model", {{"blocks", 2}, {"hidden", 12}}},
                      {"calib", {{"n_samples", 64}, {"holdout_samples", 16}}},
                      {"threads", 2}};
  j.merge_patch(extra);
  const fs::path p = dir / "config.json";
  write_file(p, j.dump());
  return p;
}

bool is_timing_key(const std::string &k) {
  return k.ends_with("_ms") || k == "allocate_to_compress_ratio";
}

nlohmann::json strip_timings(nlohmann::json j) {
  if (j.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!is_timing_key(it.key()))
        out[it.key()] = strip_timings(it.value());
    return out;
  }
  if (j.is_array())
    for (auto &v : j)
      v = strip_timings(v);
  return j;
}

/// Writes a model and identity Grams for 2×2 query sites diag(10, tail_i).
void write_crafted_inputs(const fs::path &dir, const std::vector<double> &tails) {
  std::vector<lrf::WeightSite> sites;
  std::vector<lrf::GramAccumulator> grams;
  for (std::size_t i = 0; i < tails.size(); ++i) {
    lrf::WeightSite s;
    s.site_id = "L0" + std::to_string(i) + ".Q";
    s.layer_index = static_cast<int>(i);
    s.matrix_type = lrf::MatrixType::kQ;
    s.weight = lrf::Matrix::Zero(2, 2);
    s.weight(0, 0) = 10.0;
    s.weight(1, 1) = tails[i];
    grams.push_back(lrf::GramAccumulator::from_parts(s.site_id, lrf::Matrix::Identity(2, 2), 2));
    sites.push_back(std::move(s));
  }
  const lrf::ToyModel model(std::move(sites), lrf::Activation::kIdentity);
  const auto m = lrf::model_to_artifact(model);
  lrf::save(m.manifest, m.tensors, dir / "model.json");
  const auto g = lrf::grams_to_artifact(grams, false);
  lrf::save(g.manifest, g.tensors, dir / "grams.json");
}

std::vector<double> planned_ratios(const fs::path &dir) {
  const auto plan = lrf::load_plan(dir / "plan.json");
  std::vector<double> out;
  for (const auto &e : plan.entries)
    out.push_back(e.allocated_ratio);
  return out;
}

} // namespace

TEST(Cli, RunTwiceGivesIdenticalArtifacts) {
  TempDir tmp("cli_det");
  const auto cfg = small_config(tmp.path());
  const fs::path out = tmp.path() / "out";
  const fs::path first = tmp.path() / "first";
  const std::string args = "run --config " + cfg.string() + " --out " + out.string();

  ASSERT_EQ(run_cli(args), 0);
  fs::copy(out, first, fs::copy_options::recursive);
  fs::remove_all(out);
  ASSERT_EQ(run_cli(args), 0);

  int compared = 0;
  for (const auto &entry : fs::directory_iterator(first)) {
    const fs::path name = entry.path().filename();
    const std::string a = slurp(entry.path());
    const std::string b = slurp(out / name);
    if (name == "compress_report.json" || name == "summary.json")
      EXPECT_EQ(strip_timings(nlohmann::json::parse(a)), strip_timings(nlohmann::json::parse(b)))
          << name;
    else
      EXPECT_EQ(a, b) << name;
    ++compared;
  }
  EXPECT_EQ(compared, 13);
}

TEST(Cli, CsvRowCountsMatchSites) {
  TempDir tmp("cli_csv");
  const auto cfg = small_config(tmp.path());
  ASSERT_EQ(run_cli("run --config " + cfg.string() + " --out " + tmp.path().string()), 0);
  for (const char *file : {"sites.csv", "layers.csv"}) {
    const std::string text = slurp(tmp.path() / file);
    std::size_t rows = 0;
    for (std::size_t pos = 0; (pos = text.find("\r\n", pos)) != std::string::npos; pos += 2)
      ++rows;
    EXPECT_EQ(rows, 9u) << file; // header + 8 sites
  }
}

TEST(Cli, StagesRunSeparately) {
  TempDir tmp("cli_stages");
  const auto cfg = small_config(tmp.path());
  const std::string common = " --config " + cfg.string() + " --out " + tmp.path().string();
  for (const char *stage : {"calibrate", "allocate", "compress", "evaluate"})
    ASSERT_EQ(run_cli(std::string(stage) + common), 0) << stage;
  const auto summary = nlohmann::json::parse(slurp(tmp.path() / "summary.json"));
  EXPECT_EQ(summary.at("per_site").size(), 8u);
}

TEST(Cli, BenchWritesStageTimings) {
  TempDir tmp("cli_bench");
  const auto cfg = small_config(tmp.path());
  ASSERT_EQ(run_cli("bench --config " + cfg.string() + " --out " + tmp.path().string()), 0);
  const auto bench = nlohmann::json::parse(slurp(tmp.path() / "bench.json"));
  EXPECT_GT(bench.at("total_ms").get<double>(), 0.0);
  EXPECT_TRUE(bench.contains("allocate_to_compress_ratio"));
}

TEST(Cli, ConfigErrorsExitWithTwo) {
  TempDir tmp("cli_cfg");
  write_file(tmp.path() / "bad.json", "{\"no_such_key\": 1}");
  EXPECT_EQ(run_cli("run --config " + (tmp.path() / "bad.json").string() + " --out " +
                    tmp.path().string()),
            2);
  write_file(tmp.path() / "broken.json", "{ not json");
  EXPECT_EQ(run_cli("run --config " + (tmp.path() / "broken.json").string() + " --out " +
                    tmp.path().string()),
            2);
  EXPECT_EQ(run_cli("run --ratio 1.5 --out " + tmp.path().string()), 2);
  EXPECT_EQ(run_cli("run --engine nope --out " + tmp.path().string()), 2);
}

TEST(Cli, InfeasibleBudgetExitsWithThree) {
  TempDir tmp("cli_budget");
  const auto cfg = small_config(tmp.path());
  EXPECT_EQ(run_cli("run --config " + cfg.string() + " --ratio 0.99 --out " +
                    tmp.path().string()),
            3);
}

TEST(Cli, MissingArtifactsExitWithFour) {
  TempDir tmp("cli_io");
  EXPECT_EQ(run_cli("evaluate --out " + tmp.path().string()), 4);
  const auto cfg = small_config(tmp.path());
  ASSERT_EQ(run_cli("calibrate --config " + cfg.string() + " --out " + tmp.path().string()), 0);
  write_file(tmp.path() / "grams.bin", "truncated");
  EXPECT_EQ(run_cli("allocate --config " + cfg.string() + " --out " + tmp.path().string()), 4);
}

TEST(Cli, AllSitesFailingExitsWithFive) {
  TempDir tmp("cli_fail");
  // One identity-activated site fed a rank-2 batch: its Gram is singular.
  const auto cfg = small_config(
      tmp.path(), {{"model", {{"blocks", 1}, {"types", {"Q"}}, {"activation", "identity"}}},
                   {"calib", {{"distribution", "low_rank(2)"}}},
                   {"engine", "cholesky"},
                   {"allocation", "homogeneous"},
                   {"engine_params", {{"jitter", 0.0}}}});
  EXPECT_EQ(run_cli("run --config " + cfg.string() + " --out " + tmp.path().string()), 5);
}

TEST(Cli, AllocateSingleSiteKeepsTheTarget) {
  TempDir tmp("cli_single");
  write_crafted_inputs(tmp.path(), {0.5});
  ASSERT_EQ(run_cli("allocate --ratio 0.3 --out " + tmp.path().string()), 0);
  const auto ratios = planned_ratios(tmp.path());
  ASSERT_EQ(ratios.size(), 1u);
  EXPECT_EQ(ratios[0], 0.3);
}

TEST(Cli, AllocateEqualScoresSplitsEvenly) {
  TempDir tmp("cli_equal");
  write_crafted_inputs(tmp.path(), {2.0, 2.0});
  ASSERT_EQ(run_cli("allocate --ratio 0.3 --out " + tmp.path().string()), 0);
  const auto ratios = planned_ratios(tmp.path());
  ASSERT_EQ(ratios.size(), 2u);
  EXPECT_EQ(ratios[0], 0.3);
  EXPECT_EQ(ratios[1], 0.3);
}

TEST(Cli, AllocateScoresEAndESquared) {
  TempDir tmp("cli_e");
  const double e = std::numbers::e;
  write_crafted_inputs(tmp.path(), {e, e * e});
  const double r = 0.3;
  ASSERT_EQ(run_cli("allocate --ratio 0.3 --out " + tmp.path().string()), 0);
  const auto ratios = planned_ratios(tmp.path());
  ASSERT_EQ(ratios.size(), 2u);
  // Scores come out of an SVD, so allow a few ulps through the logarithm.
  EXPECT_NEAR(ratios[0], 4.0 * r / 3.0, 1e-14);
  EXPECT_NEAR(ratios[1], 2.0 * r / 3.0, 1e-14);
}
