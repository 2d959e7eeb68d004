// SPDX-License-Identifier: Apache-2.0

#include "lrf/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/QR>

#include "lrf/error.hpp"
#include "lrf/linalg.hpp"

namespace lrf {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Matrix random_orthogonal(Eigen::Index n, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i)
    g.data()[i] = normal(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix column signs so the factor is a deterministic function of g.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0.0)
      q.col(j) *= -1.0;
  return q;
}

std::string site_id_for(int block, MatrixType type) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "L%02d.", block);
  return std::string(buf) + std::string(to_string(type));
}

// Seeds for the calibration and holdout batches are derived from the run seed.
constexpr std::uint64_t kCalibrationStream = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kHoldoutStream = 0xC2B2AE3D27D4EB4Full;

} // namespace

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)> &fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure)
              failure = std::current_exception();
          }
        }
      });
  }
  if (failure)
    std::rethrow_exception(failure);
}

ToyModel generate_toy_model(const ModelSpec &spec, std::uint64_t seed) {
  if (spec.blocks < 1 || spec.hidden < 2 || spec.types.empty())
    throw Error(ErrorCode::kConfigError, "model spec needs blocks >= 1, hidden >= 2, types");
  if (spec.decay.empty())
    throw Error(ErrorCode::kConfigError, "decay needs at least one entry");

  std::mt19937_64 rng(seed);
  const Eigen::Index d = spec.hidden;
  const double gain = spec.activation == Activation::kIdentity ? 1.0 : 2.0;
  std::vector<WeightSite> sites;
  for (int b = 0; b < spec.blocks; ++b) {
    const double decay = spec.decay[static_cast<std::size_t>(b) % spec.decay.size()];
    for (auto type : spec.types) {
      Vector sigma(d);
      for (Eigen::Index i = 0; i < d; ++i)
        sigma(i) = std::pow(static_cast<double>(i + 1), -decay);
      if (spec.planted_rank)
        for (Eigen::Index i = std::max(*spec.planted_rank, 0); i < d; ++i)
          sigma(i) = 0.0;
      // Keep E‖W·x‖² ≈ gain·‖x‖² so activations neither blow up nor vanish.
      sigma *= std::sqrt(gain * static_cast<double>(d) / sigma.squaredNorm());
      const Matrix u = random_orthogonal(d, rng);
      const Matrix v = random_orthogonal(d, rng);
      WeightSite site;
      site.site_id = site_id_for(b, type);
      site.layer_index = b;
      site.matrix_type = type;
      site.weight = u * sigma.asDiagonal() * v.transpose();
      sites.push_back(std::move(site));
    }
  }
  return ToyModel(std::move(sites), spec.activation);
}

CalibrationResult run_calibration(const ToyModel &model, const RunConfig &cfg) {
  CalibrationResult out;
  const int dim = static_cast<int>(model.input_dim());
  out.calibration = generate_calibration(cfg.seed ^ kCalibrationStream, cfg.calib.n_samples, dim,
                                         cfg.calib.distribution);
  out.holdout = generate_calibration(cfg.seed ^ kHoldoutStream, cfg.calib.holdout_samples, dim,
                                     cfg.calib.distribution);

  for (const auto &site : model.layers())
    out.grams.emplace_back(site.site_id, site.input_dim());

  // Stream the batch in chunks, as a calibration loader would.
  constexpr Eigen::Index kChunk = 64;
  for (Eigen::Index start = 0; start < out.calibration.cols(); start += kChunk) {
    const Eigen::Index width = std::min(kChunk, out.calibration.cols() - start);
    const Matrix chunk = out.calibration.middleCols(start, width);
    const ForwardCapture cap = forward_capture(model, chunk);
    for (auto &acc : out.grams)
      acc.add(cap.activations.at(acc.site_id()));
  }
  return out;
}

std::map<std::string, Matrix> engine_grams(const std::vector<GramAccumulator> &grams,
                                           bool normalize) {
  std::map<std::string, Matrix> out;
  for (const auto &g : grams)
    out.emplace(g.site_id(), normalize ? g.normalized() : g.gram());
  return out;
}

CompressionPlan run_allocation(const ToyModel &model, const std::map<std::string, Matrix> &grams,
                               const RunConfig &cfg) {
  const auto &sites = model.layers();
  const auto scores = score_sites(sites, grams, cfg.target_ratio);
  CompressionPlan plan = cfg.allocation == AllocationMode::kHeterogeneous
                             ? allocate(sites, scores, cfg.target_ratio, cfg.allocation_params)
                             : homogeneous_plan(sites, cfg.target_ratio);
  for (auto &e : plan.entries)
    e.l_min_score = scores.at(e.site_id);
  return plan;
}

namespace {

struct SiteWork {
  const WeightSite *site = nullptr;
  const Matrix *gram = nullptr;
  const Matrix *x = nullptr;
  Eigen::Index rank = 1;
  CompressedSite out;
  TruncationReport report;
};

void run_engine(SiteWork &work, const RunConfig &cfg) {
  const auto start = Clock::now();
  const Matrix &w = work.site->weight;
  const Matrix &gram = *work.gram;
  const auto &p = cfg.engine_params;
  auto &report = work.report;
  report.site_id = work.site->site_id;
  report.engine = cfg.engine;
  report.rank = work.rank;

  std::optional<LowRankFactors> factors;
  try {
    report.gram_condition = condition_number(singular_values(gram));
    switch (cfg.engine) {
    case EngineKind::kPlain:
      factors = truncate_plain(w, work.rank);
      break;
    case EngineKind::kCholesky: {
      auto outcome = truncate_cholesky(w, gram, work.rank, p.jitter);
      report.jitter_used = outcome.jitter_used;
      if (outcome.ok())
        factors = std::move(outcome.factors);
      else
        report.failure = outcome.failure;
      break;
    }
    case EngineKind::kDoubleSvd:
      factors = truncate_double_svd(w, gram, work.rank, p.pinv_tol);
      break;
    case EngineKind::kAdmmNoise: {
      auto outcome = truncate_admm_noise(w, gram, work.rank,
                                         {p.eps, p.rho, p.admm_iters, p.admm_tol});
      report.admm_trace = std::move(outcome.trace);
      factors = std::move(outcome.factors);
      break;
    }
    }
  } catch (const Error &e) {
    report.failure = e.what();
  }

  work.out.site_id = work.site->site_id;
  work.out.layer_index = work.site->layer_index;
  work.out.matrix_type = work.site->matrix_type;
  work.out.engine = std::string(to_string(cfg.engine));
  if (factors) {
    report.ok = true;
    work.out.factors = std::move(factors);
  } else {
    report.ok = false;
    work.out.failure = report.failure;
    work.out.dense = w;
  }
  report.wall_time_ms = elapsed_ms(start);
}

void run_refine(SiteWork &work, const RunConfig &cfg) {
  if (!work.out.factors)
    return;
  const auto start = Clock::now();
  auto refined = refine_lbfgs(*work.out.factors, work.site->weight, *work.gram,
                              cfg.engine_params.lbfgs);
  work.out.factors = std::move(refined.factors);
  work.out.refined = true;
  work.report.refined = true;
  work.report.refine_curve = std::move(refined.loss_curve);
  work.report.wall_time_ms += elapsed_ms(start);
}

void fill_losses(SiteWork &work) {
  auto &r = work.report;
  r.theoretical_loss = theoretical_min_loss(work.site->weight, *work.x, work.rank);
  if (work.out.factors) {
    r.achieved_loss = truncation_loss(work.site->weight, *work.x, *work.out.factors);
    r.normalized_loss = normalized_loss(r.achieved_loss, r.theoretical_loss);
  } else {
    r.achieved_loss = 0.0;
    r.normalized_loss = std::numeric_limits<double>::quiet_NaN();
  }
}

} // namespace

CompressionResult run_compression(const ToyModel &model, const std::map<std::string, Matrix> &grams,
                                  const Matrix &calibration, const CompressionPlan &plan,
                                  const RunConfig &cfg) {
  const ForwardCapture capture = forward_capture(model, calibration);
  std::vector<SiteWork> work;
  for (const auto &site : model.layers()) {
    const PlanEntry *entry = plan.find(site.site_id);
    if (!entry)
      throw Error(ErrorCode::kArtifactMismatch, "plan has no entry for " + site.site_id);
    auto g = grams.find(site.site_id);
    if (g == grams.end())
      throw Error(ErrorCode::kMissingGram, "no gram for " + site.site_id);
    SiteWork w;
    w.site = &site;
    w.gram = &g->second;
    w.x = &capture.activations.at(site.site_id);
    w.rank = entry->resolved_rank;
    work.push_back(std::move(w));
  }

  const int threads = resolve_threads(cfg);
  CompressionResult out;
  auto start = Clock::now();
  parallel_for(work.size(), threads, [&](std::size_t i) { run_engine(work[i], cfg); });
  out.compress_ms = elapsed_ms(start);
  if (cfg.refine) {
    start = Clock::now();
    parallel_for(work.size(), threads, [&](std::size_t i) { run_refine(work[i], cfg); });
    out.refine_ms = elapsed_ms(start);
  }
  start = Clock::now();
  parallel_for(work.size(), threads, [&](std::size_t i) { fill_losses(work[i]); });
  out.compress_ms += elapsed_ms(start);

  out.model.activation = model.activation();
  for (auto &w : work) {
    out.model.sites.push_back(std::move(w.out));
    out.reports.push_back(std::move(w.report));
  }
  std::sort(out.reports.begin(), out.reports.end(),
            [](const TruncationReport &a, const TruncationReport &b) { return a.site_id < b.site_id; });
  return out;
}

EvaluationSummary run_evaluation(const ToyModel &original, const CompressedModel &compressed,
                                 const Matrix &calibration, const Matrix &holdout,
                                 const CompressionPlan *plan,
                                 const std::vector<TruncationReport> *compress_reports) {
  if (compressed.sites.size() != original.layers().size())
    throw Error(ErrorCode::kArtifactMismatch, "compressed model has a different site count");
  const ForwardCapture capture = forward_capture(original, calibration);

  EvaluationSummary s;
  std::int64_t dense_total = 0, stored_total = 0;
  for (std::size_t i = 0; i < compressed.sites.size(); ++i) {
    const auto &site = original.layers()[i];
    const auto &c = compressed.sites[i];
    if (c.site_id != site.site_id)
      throw Error(ErrorCode::kArtifactMismatch, "site order differs at " + c.site_id);
    const Matrix &x = capture.activations.at(site.site_id);

    TruncationReport r;
    r.site_id = site.site_id;
    r.engine = parse_engine(c.engine).value_or(EngineKind::kDoubleSvd);
    r.refined = c.refined;
    r.ok = c.factors.has_value();
    r.failure = c.failure;
    const Eigen::Index full = std::min(site.output_dim(), site.input_dim());
    if (c.factors) {
      r.rank = c.factors->rank();
    } else if (const PlanEntry *e = plan ? plan->find(site.site_id) : nullptr) {
      r.rank = e->resolved_rank;
    } else {
      r.rank = full;
    }
    r.theoretical_loss = theoretical_min_loss(site.weight, x, std::max<Eigen::Index>(r.rank, 1));
    if (c.factors) {
      r.achieved_loss = truncation_loss(site.weight, x, *c.factors);
      r.normalized_loss = normalized_loss(r.achieved_loss, r.theoretical_loss);
      s.totals.sum_theoretical_sq += r.theoretical_loss * r.theoretical_loss;
      s.totals.sum_achieved_sq += r.achieved_loss * r.achieved_loss;
      stored_total += c.factors->rank() * (site.output_dim() + site.input_dim());
    } else {
      r.normalized_loss = std::numeric_limits<double>::quiet_NaN();
      ++s.totals.failures;
      stored_total += site.weight.size();
    }
    dense_total += site.weight.size();
    const Matrix gram = x * x.transpose();
    r.gram_condition = condition_number(singular_values(gram));
    if (compress_reports) {
      for (const auto &cr : *compress_reports)
        if (cr.site_id == r.site_id) {
          r.wall_time_ms = cr.wall_time_ms;
          r.jitter_used = cr.jitter_used;
          r.admm_trace = cr.admm_trace;
          r.refine_curve = cr.refine_curve;
        }
    }
    s.layer_of[r.site_id] = site.layer_index;
    s.type_of[r.site_id] = std::string(to_string(site.matrix_type));
    s.per_site.push_back(std::move(r));
  }
  std::sort(s.per_site.begin(), s.per_site.end(),
            [](const TruncationReport &a, const TruncationReport &b) { return a.site_id < b.site_id; });
  s.totals.param_reduction_achieved =
      1.0 - static_cast<double>(stored_total) / static_cast<double>(dense_total);

  const ToyModel dense = compressed.to_dense();
  const Matrix y0 = forward_capture(original, holdout).output;
  const Matrix y1 = forward_capture(dense, holdout).output;
  s.end_to_end_mse = (y0 - y1).squaredNorm() / static_cast<double>(y0.size());
  return s;
}

namespace {

json finite_or_null(double v) {
  return std::isfinite(v) ? json(v) : json(nullptr);
}

std::string csv_number(double v) {
  return std::isfinite(v) ? format_double(v) : std::string();
}

} // namespace

json report_to_json(const TruncationReport &r) {
  json j = {{"site_id", r.site_id},
            {"engine", to_string(r.engine)},
            {"refined", r.refined},
            {"theoretical_loss", r.theoretical_loss},
            {"achieved_loss", r.achieved_loss},
            {"normalized_loss", finite_or_null(r.normalized_loss)},
            {"gram_condition", finite_or_null(r.gram_condition)},
            {"rank", r.rank},
            {"wall_time_ms", r.wall_time_ms},
            {"status", r.ok ? "ok" : "failed"},
            {"jitter_used", r.jitter_used}};
  if (!r.ok)
    j["failure"] = r.failure;
  if (!r.admm_trace.empty())
    j["admm_trace"] = r.admm_trace;
  if (!r.refine_curve.empty())
    j["refine_curve"] = r.refine_curve;
  return j;
}

TruncationReport report_from_json(const json &j) {
  const auto number = [&](const char *key) {
    return j.at(key).is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at(key).get<double>();
  };
  TruncationReport r;
  r.site_id = j.at("site_id").get<std::string>();
  const auto engine = parse_engine(j.at("engine").get<std::string>());
  if (!engine)
    throw Error(ErrorCode::kArtifactMismatch, "unknown engine in report for " + r.site_id);
  r.engine = *engine;
  r.refined = j.at("refined").get<bool>();
  r.theoretical_loss = number("theoretical_loss");
  r.achieved_loss = number("achieved_loss");
  r.normalized_loss = number("normalized_loss");
  r.gram_condition = number("gram_condition");
  r.rank = j.at("rank").get<Eigen::Index>();
  r.wall_time_ms = j.at("wall_time_ms").get<double>();
  r.ok = j.at("status").get<std::string>() == "ok";
  r.jitter_used = j.at("jitter_used").get<bool>();
  r.failure = j.value("failure", std::string());
  r.admm_trace = j.value("admm_trace", std::vector<double>{});
  r.refine_curve = j.value("refine_curve", std::vector<double>{});
  return r;
}

json summary_to_json(const EvaluationSummary &s, const RunConfig &cfg) {
  json sites = json::array();
  for (const auto &r : s.per_site) {
    json j = report_to_json(r);
    j["layer_index"] = s.layer_of.at(r.site_id);
    j["matrix_type"] = s.type_of.at(r.site_id);
    sites.push_back(std::move(j));
  }
  return {{"config", config_to_json(cfg)},
          {"per_site", std::move(sites)},
          {"totals",
           {{"sum_theoretical_loss_sq", s.totals.sum_theoretical_sq},
            {"sum_achieved_loss_sq", s.totals.sum_achieved_sq},
            {"param_reduction_achieved", s.totals.param_reduction_achieved},
            {"failures", s.totals.failures}}},
          {"end_to_end", {{"output_mse", s.end_to_end_mse}}},
          {"stage_timings_ms", s.stage_timings_ms}};
}

std::string sites_csv(const EvaluationSummary &s) {
  std::ostringstream out;
  out << "site_id,layer,type,rank,theoretical,achieved,normalized\r\n";
  for (const auto &r : s.per_site)
    out << r.site_id << ',' << s.layer_of.at(r.site_id) << ',' << s.type_of.at(r.site_id) << ','
        << r.rank << ',' << csv_number(r.theoretical_loss) << ','
        << (r.ok ? csv_number(r.achieved_loss) : std::string()) << ','
        << csv_number(r.normalized_loss) << "\r\n";
  return out.str();
}

std::string layers_csv(const EvaluationSummary &s) {
  std::vector<const TruncationReport *> rows;
  for (const auto &r : s.per_site)
    rows.push_back(&r);
  std::stable_sort(rows.begin(), rows.end(), [&](const auto *a, const auto *b) {
    const int la = s.layer_of.at(a->site_id), lb = s.layer_of.at(b->site_id);
    if (la != lb)
      return la < lb;
    return s.type_of.at(a->site_id) < s.type_of.at(b->site_id);
  });
  std::ostringstream out;
  out << "layer,type,site_id,rank,theoretical_loss,achieved_loss\r\n";
  for (const auto *r : rows)
    out << s.layer_of.at(r->site_id) << ',' << s.type_of.at(r->site_id) << ',' << r->site_id
        << ',' << r->rank << ',' << csv_number(r->theoretical_loss) << ','
        << (r->ok ? csv_number(r->achieved_loss) : std::string()) << "\r\n";
  return out.str();
}

PipelineRun run_pipeline(const RunConfig &cfg) {
  const auto total_start = Clock::now();
  auto start = Clock::now();
  ToyModel model = cfg.model_path.empty() ? generate_toy_model(cfg.model, cfg.seed)
                                          : model_from_artifact(load(cfg.model_path));
  CalibrationResult calib = run_calibration(model, cfg);
  const double calibrate_ms = elapsed_ms(start);

  start = Clock::now();
  const auto grams = engine_grams(calib.grams, cfg.calib.normalize);
  CompressionPlan plan = run_allocation(model, grams, cfg);
  const double allocate_ms = elapsed_ms(start);

  CompressionResult compression = run_compression(model, grams, calib.calibration, plan, cfg);

  start = Clock::now();
  EvaluationSummary summary = run_evaluation(model, compression.model, calib.calibration,
                                             calib.holdout, &plan, &compression.reports);
  const double evaluate_ms = elapsed_ms(start);

  summary.stage_timings_ms = {{"calibrate", calibrate_ms},
                              {"allocate", allocate_ms},
                              {"compress", compression.compress_ms},
                              {"refine", compression.refine_ms},
                              {"evaluate", evaluate_ms}};
  const double total = elapsed_ms(total_start);
  return PipelineRun{std::move(model), std::move(calib), std::move(plan), std::move(compression),
                     std::move(summary), total};
}

} // namespace lrf
