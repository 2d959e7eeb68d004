// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "lrf/allocation.hpp"
#include "lrf/calibration.hpp"
#include "lrf/engines.hpp"
#include "lrf/pipeline.hpp"

namespace {

struct Instance {
  lrf::Matrix w;
  lrf::Matrix gram;
};

Instance make_instance(Eigen::Index d) {
  Instance out;
  out.w = lrf::generate_calibration(1, static_cast<int>(d), static_cast<int>(d),
                                    lrf::Distribution::gaussian());
  const lrf::Matrix x = lrf::generate_calibration(2, static_cast<int>(4 * d),
                                                  static_cast<int>(d),
                                                  lrf::Distribution::heavy_tailed());
  out.gram = x * x.transpose();
  return out;
}

void BM_Plain(benchmark::State &state) {
  const auto inst = make_instance(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(lrf::truncate_plain(inst.w, state.range(0) / 4));
}

void BM_Cholesky(benchmark::State &state) {
  const auto inst = make_instance(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(lrf::truncate_cholesky(inst.w, inst.gram, state.range(0) / 4, 1e-6));
}

void BM_DoubleSvd(benchmark::State &state) {
  const auto inst = make_instance(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(lrf::truncate_double_svd(inst.w, inst.gram, state.range(0) / 4));
}

void BM_AdmmNoise(benchmark::State &state) {
  const auto inst = make_instance(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(lrf::truncate_admm_noise(inst.w, inst.gram, state.range(0) / 4, {}));
}

void BM_Refine(benchmark::State &state) {
  const auto inst = make_instance(state.range(0));
  const auto init = lrf::truncate_plain(inst.w, state.range(0) / 4);
  for (auto _ : state)
    benchmark::DoNotOptimize(lrf::refine_lbfgs(init, inst.w, inst.gram));
}

void BM_GroupAllocation(benchmark::State &state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> score(0.5, 50.0);
  std::vector<double> scores(static_cast<std::size_t>(state.range(0)));
  for (auto &s : scores)
    s = score(rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(lrf::allocate_group_ratios(scores, 0.3));
}

void BM_Pipeline(benchmark::State &state) {
  lrf::RunConfig cfg;
  cfg.model.blocks = 2;
  cfg.model.hidden = 16;
  cfg.calib.n_samples = 64;
  cfg.calib.holdout_samples = 16;
  cfg.threads = 1;
  for (auto _ : state)
    benchmark::DoNotOptimize(lrf::run_pipeline(cfg));
}

} // namespace

BENCHMARK(BM_Plain)->Arg(16)->Arg(64);
BENCHMARK(BM_Cholesky)->Arg(16)->Arg(64);
BENCHMARK(BM_DoubleSvd)->Arg(16)->Arg(64);
BENCHMARK(BM_AdmmNoise)->Arg(16)->Arg(32);
BENCHMARK(BM_Refine)->Arg(16);
BENCHMARK(BM_GroupAllocation)->Arg(4)->Arg(64);
BENCHMARK(BM_Pipeline)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
