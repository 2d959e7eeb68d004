// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrf/allocation.hpp"
#include "lrf/calibration.hpp"
#include "lrf/engines.hpp"
#include "lrf/model_io.hpp"

namespace lrf {

struct ModelSpec {
  int blocks = 4;
  int hidden = 32;
  std::vector<MatrixType> types{MatrixType::kQ, MatrixType::kK, MatrixType::kV, MatrixType::kO};
  std::vector<double> decay{0.2, 0.5, 0.9, 1.4}; ///< decay exponent per block, cycled when shorter
  Activation activation = Activation::kGelu;
  std::optional<int> planted_rank; ///< zero all singular values past this index
};

struct CalibSpec {
  int n_samples = 256;
  int holdout_samples = 64;
  Distribution distribution = Distribution::gaussian();
  bool normalize = false; ///< hand engines gram/count instead of the raw sum
};

struct EngineParams {
  double jitter = 1e-6;
  double eps = 1e-3;
  double rho = 1.0;
  int admm_iters = 50;
  double admm_tol = 1e-6;
  double pinv_tol = -1.0; ///< < 0 selects d·u
  LbfgsOptions lbfgs{};
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelSpec model{};
  CalibSpec calib{};
  double target_ratio = 0.2;
  AllocationMode allocation = AllocationMode::kHeterogeneous;
  EngineKind engine = EngineKind::kDoubleSvd;
  bool refine = false;
  EngineParams engine_params{};
  AllocationOptions allocation_params{};
  int threads = 0; ///< 0 = logical cores; LRF_THREADS overrides
  std::string output_dir = "lrf_out";
  std::string model_path; ///< load this model artifact instead of generating one
};

/// Overlays `j` onto the built-in defaults. Unknown keys and invalid values
/// raise kConfigError.
RunConfig config_from_json(const nlohmann::json &j);
nlohmann::json config_to_json(const RunConfig &cfg);
RunConfig load_config(const std::filesystem::path &path);

int resolve_threads(const RunConfig &cfg);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
/// thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)> &fn);

/// Chain of blocks × types square sites, each W = U·diag(σ)·Vᵀ with random
/// orthogonal U, V and σ_i ∝ (i + 1)^(−decay[block]).
ToyModel generate_toy_model(const ModelSpec &spec, std::uint64_t seed);

struct CalibrationResult {
  Matrix calibration; ///< model input batch, features × samples
  Matrix holdout;
  std::vector<GramAccumulator> grams; ///< chain order
};

CalibrationResult run_calibration(const ToyModel &model, const RunConfig &cfg);

/// Site id → Gram as seen by the engines (raw sum or sample mean).
std::map<std::string, Matrix> engine_grams(const std::vector<GramAccumulator> &grams,
                                           bool normalize);

CompressionPlan run_allocation(const ToyModel &model, const std::map<std::string, Matrix> &grams,
                               const RunConfig &cfg);

struct CompressionResult {
  CompressedModel model;
  std::vector<TruncationReport> reports; ///< sorted by site_id
  double compress_ms = 0.0;
  double refine_ms = 0.0;
};

/// Compresses every site independently. Engine failures become failed
/// reports and the site keeps its dense weight. `calibration` (the model's
/// input batch) lets reports carry the exact oracle loss.
CompressionResult run_compression(const ToyModel &model, const std::map<std::string, Matrix> &grams,
                                  const Matrix &calibration, const CompressionPlan &plan,
                                  const RunConfig &cfg);

struct EvaluationTotals {
  double sum_theoretical_sq = 0.0;
  double sum_achieved_sq = 0.0;
  double param_reduction_achieved = 0.0;
  int failures = 0;
};

struct EvaluationSummary {
  std::vector<TruncationReport> per_site; ///< sorted by site_id
  std::map<std::string, int> layer_of;
  std::map<std::string, std::string> type_of;
  EvaluationTotals totals;
  double end_to_end_mse = 0.0;
  std::map<std::string, double> stage_timings_ms;
};

/// Re-derives every per-site loss from the calibration batch, and the output
/// MSE between the original and compressed model on the holdout batch.
EvaluationSummary run_evaluation(const ToyModel &original, const CompressedModel &compressed,
                                 const Matrix &calibration, const Matrix &holdout,
                                 const CompressionPlan *plan,
                                 const std::vector<TruncationReport> *compress_reports);

nlohmann::json report_to_json(const TruncationReport &r);
TruncationReport report_from_json(const nlohmann::json &j);
nlohmann::json summary_to_json(const EvaluationSummary &s, const RunConfig &cfg);

/// site_id,layer,type,rank,theoretical,achieved,normalized
std::string sites_csv(const EvaluationSummary &s);
/// layer,type,site_id,rank,theoretical_loss,achieved_loss (chain order by layer then type)
std::string layers_csv(const EvaluationSummary &s);

/// Full in-memory pipeline with wall-clock timings per stage.
struct PipelineRun {
  ToyModel model;
  CalibrationResult calibration;
  CompressionPlan plan;
  CompressionResult compression;
  EvaluationSummary summary;
  double total_ms = 0.0;
};

PipelineRun run_pipeline(const RunConfig &cfg);

} // namespace lrf
