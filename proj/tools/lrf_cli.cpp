// SPDX-License-Identifier: Apache-2.0
//
// lrf: calibrate → allocate → compress → evaluate driver for toy models.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lrf/error.hpp"
#include "lrf/model_io.hpp"
#include "lrf/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kInfeasible = 3,
  kIo = 4,
  kAllFailed = 5,
};

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> ratio;
  std::optional<std::string> engine;
  std::optional<std::string> allocation;
  bool refine = false;
  std::optional<std::string> out;
};

void add_common(CLI::App *cmd, Overrides &o) {
  cmd->add_option("--config", o.config, "JSON run config (defaults apply to missing keys)");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--ratio", o.ratio, "Target compression ratio in [0, 1)");
  cmd->add_option("--engine", o.engine, "plain | cholesky | double_svd | admm_noise");
  cmd->add_option("--allocation", o.allocation, "homogeneous | heterogeneous");
  cmd->add_flag("--refine", o.refine, "Refine factors with L-BFGS after truncation");
  cmd->add_option("--out", o.out, "Output directory");
}

lrf::RunConfig resolve_config(const Overrides &o) {
  json j = o.config.empty() ? json::object() : json::parse(lrf::read_text(o.config));
  if (o.seed)
    j["seed"] = *o.seed;
  if (o.ratio)
    j["target_ratio"] = *o.ratio;
  if (o.engine)
    j["engine"] = *o.engine;
  if (o.allocation)
    j["allocation"] = *o.allocation;
  if (o.refine)
    j["refine"] = true;
  if (o.out)
    j["output_dir"] = *o.out;
  return lrf::config_from_json(j);
}

struct Paths {
  fs::path dir;
  fs::path model() const { return dir / "model.json"; }
  fs::path calibration() const { return dir / "calibration.json"; }
  fs::path grams() const { return dir / "grams.json"; }
  fs::path plan() const { return dir / "plan.json"; }
  fs::path compressed() const { return dir / "compressed.json"; }
  fs::path compress_report() const { return dir / "compress_report.json"; }
  fs::path summary() const { return dir / "summary.json"; }
  fs::path sites_csv() const { return dir / "sites.csv"; }
  fs::path layers_csv() const { return dir / "layers.csv"; }
  fs::path bench() const { return dir / "bench.json"; }
};

Paths prepare_output(const lrf::RunConfig &cfg) {
  Paths p{cfg.output_dir};
  std::error_code ec;
  fs::create_directories(p.dir, ec);
  if (ec)
    throw lrf::Error(lrf::ErrorCode::kIoError, "cannot create " + p.dir.string() + ": " + ec.message());
  return p;
}

using Clock = std::chrono::steady_clock;
double ms_since(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

// -- stages ------------------------------------------------------------------

double stage_calibrate(const lrf::RunConfig &cfg, const Paths &paths) {
  const auto start = Clock::now();
  const lrf::ToyModel model = cfg.model_path.empty()
                                  ? lrf::generate_toy_model(cfg.model, cfg.seed)
                                  : lrf::model_from_artifact(lrf::load(cfg.model_path));
  const lrf::CalibrationResult calib = lrf::run_calibration(model, cfg);

  const auto model_art = lrf::model_to_artifact(model, {{"seed", std::to_string(cfg.seed)}});
  lrf::save(model_art.manifest, model_art.tensors, paths.model());

  const std::vector<lrf::NamedTensor> batches{{"calibration", calib.calibration},
                                              {"holdout", calib.holdout}};
  lrf::save(lrf::make_manifest(lrf::ArtifactKind::kCalibration, batches,
                               {{"seed", std::to_string(cfg.seed)},
                                {"distribution", lrf::to_string(cfg.calib.distribution)}}),
            batches, paths.calibration());

  const auto grams_art = lrf::grams_to_artifact(calib.grams, false);
  lrf::save(grams_art.manifest, grams_art.tensors, paths.grams());

  for (const auto &g : calib.grams)
    std::cout << "calibrated " << g.site_id() << ": " << g.sample_count() << " samples, dim "
              << g.dim() << "\n";
  return ms_since(start);
}

double stage_allocate(const lrf::RunConfig &cfg, const Paths &paths) {
  const auto start = Clock::now();
  const lrf::ToyModel model = lrf::model_from_artifact(lrf::load(paths.model()));
  const auto grams =
      lrf::engine_grams(lrf::grams_from_artifact(lrf::load(paths.grams())), cfg.calib.normalize);
  const lrf::CompressionPlan plan = lrf::run_allocation(model, grams, cfg);
  lrf::save_plan(plan, paths.plan());

  std::printf("%-6s %-12s %14s %10s %6s\n", "type", "site", "l_min", "ratio", "rank");
  std::map<std::string, std::vector<const lrf::PlanEntry *>> by_type;
  for (const auto &e : plan.entries)
    by_type[std::string(lrf::to_string(e.matrix_type))].push_back(&e);
  for (const auto &[type, entries] : by_type)
    for (const auto *e : entries)
      std::printf("%-6s %-12s %14.6g %10.6f %6lld\n", type.c_str(), e->site_id.c_str(),
                  e->l_min_score, e->allocated_ratio, static_cast<long long>(e->resolved_rank));
  return ms_since(start);
}

struct CompressTimes {
  double compress_ms = 0.0;
  double refine_ms = 0.0;
  bool all_failed = false;
};

CompressTimes stage_compress(const lrf::RunConfig &cfg, const Paths &paths) {
  const auto start = Clock::now();
  const lrf::ToyModel model = lrf::model_from_artifact(lrf::load(paths.model()));
  const auto grams =
      lrf::engine_grams(lrf::grams_from_artifact(lrf::load(paths.grams())), cfg.calib.normalize);
  const lrf::Artifact calib = lrf::load(paths.calibration());
  const lrf::Matrix *batch = calib.tensor("calibration");
  if (!batch)
    throw lrf::Error(lrf::ErrorCode::kArtifactMismatch, "calibration artifact lacks its batch");
  const lrf::CompressionPlan plan = lrf::load_plan(paths.plan());

  lrf::CompressionResult result = lrf::run_compression(model, grams, *batch, plan, cfg);
  const auto art = lrf::compressed_to_artifact(
      result.model, {{"seed", std::to_string(cfg.seed)},
                     {"target_ratio", lrf::format_double(cfg.target_ratio)}});
  lrf::save(art.manifest, art.tensors, paths.compressed());

  json reports = json::array();
  int failed = 0;
  for (const auto &r : result.reports) {
    reports.push_back(lrf::report_to_json(r));
    failed += r.ok ? 0 : 1;
  }
  const json doc = {{"config", lrf::config_to_json(cfg)},
                    {"reports", reports},
                    {"compress_ms", result.compress_ms},
                    {"refine_ms", result.refine_ms}};
  lrf::write_text_atomic(paths.compress_report(), doc.dump(2) + "\n");

  std::cout << "compressed " << result.reports.size() - failed << "/" << result.reports.size()
            << " sites with " << lrf::to_string(cfg.engine) << (cfg.refine ? " + lbfgs" : "")
            << "\n";
  for (const auto &r : result.reports)
    if (!r.ok)
      std::cout << "  " << r.site_id << " failed: " << r.failure << "\n";

  const double total = ms_since(start);
  return {total - result.refine_ms, result.refine_ms,
          !result.reports.empty() && failed == static_cast<int>(result.reports.size())};
}

double stage_evaluate(const lrf::RunConfig &cfg, const Paths &paths,
                      const std::map<std::string, double> &timings) {
  const auto start = Clock::now();
  const lrf::ToyModel model = lrf::model_from_artifact(lrf::load(paths.model()));
  const lrf::CompressedModel compressed =
      lrf::compressed_from_artifact(lrf::load(paths.compressed()));
  const lrf::Artifact calib = lrf::load(paths.calibration());
  const lrf::Matrix *batch = calib.tensor("calibration");
  const lrf::Matrix *holdout = calib.tensor("holdout");
  if (!batch || !holdout)
    throw lrf::Error(lrf::ErrorCode::kArtifactMismatch, "calibration artifact is incomplete");

  std::optional<lrf::CompressionPlan> plan;
  if (fs::exists(paths.plan()))
    plan = lrf::load_plan(paths.plan());

  // Per-site timings and traces only exist in the compress report.
  std::optional<std::vector<lrf::TruncationReport>> reports;
  if (fs::exists(paths.compress_report())) {
    reports.emplace();
    const json doc = json::parse(lrf::read_text(paths.compress_report()));
    for (const auto &j : doc.at("reports"))
      reports->push_back(lrf::report_from_json(j));
  }

  lrf::EvaluationSummary summary = lrf::run_evaluation(
      model, compressed, *batch, *holdout, plan ? &*plan : nullptr, reports ? &*reports : nullptr);
  summary.stage_timings_ms = timings;
  summary.stage_timings_ms["evaluate"] = ms_since(start);

  lrf::write_text_atomic(paths.summary(), lrf::summary_to_json(summary, cfg).dump(2) + "\n");
  lrf::write_text_atomic(paths.sites_csv(), lrf::sites_csv(summary));
  lrf::write_text_atomic(paths.layers_csv(), lrf::layers_csv(summary));

  std::printf("sum L_min^2 = %.6g, sum L^2 = %.6g, param reduction = %.4f, failures = %d, "
              "output MSE = %.6g\n",
              summary.totals.sum_theoretical_sq, summary.totals.sum_achieved_sq,
              summary.totals.param_reduction_achieved, summary.totals.failures,
              summary.end_to_end_mse);
  return summary.stage_timings_ms["evaluate"];
}

int run_bench(const lrf::RunConfig &base, const Paths &paths) {
  lrf::RunConfig cfg = base;
  cfg.refine = true; // the refine stage is part of the timed pipeline
  const lrf::PipelineRun run = lrf::run_pipeline(cfg);
  const auto &t = run.summary.stage_timings_ms;
  double sum = 0.0;
  for (const auto &[stage, ms] : t) {
    std::printf("%-10s %12.3f ms\n", stage.c_str(), ms);
    sum += ms;
  }
  const double ratio = t.at("allocate") / t.at("compress");
  std::printf("%-10s %12.3f ms (stages sum %.3f ms)\n", "total", run.total_ms, sum);
  std::printf("allocate:compress time ratio = %.4f\n", ratio);

  json doc = lrf::summary_to_json(run.summary, cfg);
  doc["total_ms"] = run.total_ms;
  doc["allocate_to_compress_ratio"] = ratio;
  lrf::write_text_atomic(paths.bench(), doc.dump(2) + "\n");
  return kOk;
}

int exit_code_for(const lrf::Error &e) {
  switch (e.code()) {
  case lrf::ErrorCode::kConfigError:
  case lrf::ErrorCode::kRatioOutOfRange:
    return kConfigError;
  case lrf::ErrorCode::kInfeasibleBudget:
    return kInfeasible;
  case lrf::ErrorCode::kIoError:
  case lrf::ErrorCode::kManifestInvalid:
  case lrf::ErrorCode::kCorruptBlob:
  case lrf::ErrorCode::kNonFiniteTensor:
  case lrf::ErrorCode::kUnsupportedVersion:
  case lrf::ErrorCode::kArtifactMismatch:
    return kIo;
  default:
    return kFailure;
  }
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Activation-aware low-rank compression of toy model weights"};
  app.require_subcommand(1);

  Overrides o;
  std::map<std::string, CLI::App *> cmds;
  for (const char *name : {"calibrate", "allocate", "compress", "evaluate", "bench", "run"}) {
    cmds[name] = app.add_subcommand(name);
    add_common(cmds[name], o);
  }
  cmds["calibrate"]->description("Generate or load the model and accumulate per-site Grams");
  cmds["allocate"]->description("Score sites and write the compression plan");
  cmds["compress"]->description("Truncate every site with the chosen engine");
  cmds["evaluate"]->description("Per-site losses, CSV reports and end-to-end output MSE");
  cmds["bench"]->description("Time every stage of an in-memory pipeline run");
  cmds["run"]->description("calibrate, allocate, compress and evaluate in one go");

  CLI11_PARSE(app, argc, argv);

  try {
    lrf::RunConfig cfg;
    try {
      cfg = resolve_config(o);
    } catch (const json::exception &e) {
      throw lrf::Error(lrf::ErrorCode::kConfigError, e.what());
    }
    const Paths paths = prepare_output(cfg);

    if (cmds["calibrate"]->parsed()) {
      stage_calibrate(cfg, paths);
    } else if (cmds["allocate"]->parsed()) {
      stage_allocate(cfg, paths);
    } else if (cmds["compress"]->parsed()) {
      if (stage_compress(cfg, paths).all_failed)
        return kAllFailed;
    } else if (cmds["evaluate"]->parsed()) {
      stage_evaluate(cfg, paths, {});
    } else if (cmds["bench"]->parsed()) {
      return run_bench(cfg, paths);
    } else if (cmds["run"]->parsed()) {
      std::map<std::string, double> timings;
      timings["calibrate"] = stage_calibrate(cfg, paths);
      timings["allocate"] = stage_allocate(cfg, paths);
      const CompressTimes ct = stage_compress(cfg, paths);
      timings["compress"] = ct.compress_ms;
      timings["refine"] = ct.refine_ms;
      stage_evaluate(cfg, paths, timings);
      if (ct.all_failed)
        return kAllFailed;
    }
  } catch (const lrf::Error &e) {
    std::cerr << "lrf: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception &e) {
    std::cerr << "lrf: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
