// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "lrf/allocation.hpp"
#include "lrf/engines.hpp"
#include "lrf/linalg.hpp"
#include "lrf/model_io.hpp"
#include "lrf/pipeline.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace {

using lrf::ErrorCode;
using lrf::Matrix;
using lrf::MatrixType;
using lrf::WeightSite;
using testing_support::error_of;

constexpr double e1 = std::numbers::e;
const double e2 = std::exp(2.0);

TEST(ScoreSites, IdentityWeightAndGram) {
  const std::vector<WeightSite> sites{{"a", 0, MatrixType::kQ, Matrix::Identity(6, 6)}};
  const std::map<std::string, Matrix> grams{{"a", Matrix::Identity(6, 6)}};
  // R = 0 keeps rank 3 of 6, R = 0.5 keeps rank 1.
  EXPECT_NEAR(lrf::score_sites(sites, grams, 0.0).at("a"), std::sqrt(3.0), 1e-14);
  EXPECT_NEAR(lrf::score_sites(sites, grams, 0.5).at("a"), std::sqrt(5.0), 1e-14);
}

TEST(ScoreSites, IdenticalSitesScoreIdentically) {
  std::mt19937_64 rng(1);
  const Matrix w = oracle::gaussian(rng, 5, 5), x = oracle::gaussian(rng, 5, 20);
  const std::vector<WeightSite> sites{{"a", 0, MatrixType::kQ, w}, {"b", 1, MatrixType::kQ, w}};
  const std::map<std::string, Matrix> grams{{"a", x * x.transpose()}, {"b", x * x.transpose()}};
  const auto s = lrf::score_sites(sites, grams, 0.3);
  EXPECT_EQ(s.at("a"), s.at("b"));
}

TEST(ScoreSites, EqualsActivationOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix w = oracle::gaussian(rng, 8, 6), x = oracle::gaussian(rng, 6, 24);
    const std::vector<WeightSite> sites{{"s", 0, MatrixType::kV, w}};
    const double r = 0.25;
    const auto k = lrf::rank_for_ratio(8, 6, r).resolved_rank;
    const double ref = oracle::tail_loss(w, x, k);
    EXPECT_NEAR(lrf::score_sites(sites, {{"s", x * x.transpose()}}, r).at("s"), ref, 1e-9 * ref);
  }
}

TEST(ScoreSites, MissingGram) {
  const std::vector<WeightSite> sites{{"a", 0, MatrixType::kQ, Matrix::Identity(2, 2)}};
  EXPECT_EQ(error_of([&] { lrf::score_sites(sites, {}, 0.2); }), ErrorCode::kMissingGram);
}

TEST(AllocateGroup, SingleMemberGetsTargetExactly) {
  for (double r : {0.02, 0.2, 0.37, 0.5, 0.9}) {
    const double score[] = {123.4};
    EXPECT_EQ(lrf::allocate_group_ratios(score, r)[0], r);
  }
}

TEST(AllocateGroup, EqualScoresGetTargetExactly) {
  for (double r : {0.1, 0.2, 0.45}) {
    const double scores[] = {7.5, 7.5};
    const auto out = lrf::allocate_group_ratios(scores, r);
    EXPECT_EQ(out[0], r);
    EXPECT_EQ(out[1], r);
  }
}

TEST(AllocateGroup, HandEvaluatedPair) {
  const double scores[] = {e1, e2};
  for (double r : {0.05, 0.2, 0.3, 0.48}) {
    const auto out = lrf::allocate_group_ratios(scores, r);
    EXPECT_NEAR(out[0], 4 * r / 3, 4e-16);
    EXPECT_NEAR(out[1], 2 * r / 3, 4e-16);
  }
}

TEST(AllocateGroup, LogBaseCancels) {
  const double scores[] = {3.0, 40.0, 900.0, 1.5e4};
  const auto natural = lrf::allocate_group_ratios(scores, 0.3);
  for (double base : {2.0, 10.0}) {
    lrf::AllocationOptions opt;
    opt.log_base = base;
    const auto other = lrf::allocate_group_ratios(scores, 0.3, opt);
    for (std::size_t i = 0; i < 4; ++i)
      EXPECT_NEAR(other[i], natural[i], 1e-15);
  }
}

TEST(AllocateGroup, LowScoresAreClamped) {
  // Scores ≤ e^0.1 all behave like e^0.1, so they split evenly.
  const double scores[] = {0.0, 0.5, 1.0};
  const auto out = lrf::allocate_group_ratios(scores, 0.2);
  EXPECT_NEAR(out[0], 0.2, 1e-15);
  EXPECT_NEAR(out[1], 0.2, 1e-15);
  EXPECT_NEAR(out[2], 0.2, 1e-15);
}

TEST(AllocateGroup, ClipsAndRedistributes) {
  // Without clamps the first member would receive far more than the ceiling.
  const double scores[] = {1.2, 1e6, 1e6, 1e6};
  const auto out = lrf::allocate_group_ratios(scores, 0.5);
  EXPECT_EQ(out[0], 0.98);
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  EXPECT_NEAR(total, 4 * 0.5, 1e-12);
  for (double r : out) {
    EXPECT_GE(r, 0.02);
    EXPECT_LE(r, 0.98);
  }
}

TEST(AllocateGroup, InfeasibleBudgets) {
  const double scores[] = {2.0, 3.0};
  EXPECT_EQ(error_of([&] { lrf::allocate_group_ratios(scores, 0.99); }), ErrorCode::kInfeasibleBudget);
  EXPECT_EQ(error_of([&] { lrf::allocate_group_ratios(scores, 0.01); }), ErrorCode::kInfeasibleBudget);
  EXPECT_EQ(error_of([&] { lrf::allocate_group_ratios(scores, 1.0); }), ErrorCode::kRatioOutOfRange);
}

TEST(AllocateGroupProperty, SumPreservedRangeRespectedAndMonotone) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> size(1, 12);
  std::uniform_real_distribution<double> log_score(-1.0, 12.0), ratio(0.02, 0.98);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> scores(size(rng));
    for (auto &s : scores)
      s = std::exp(log_score(rng));
    const double r = ratio(rng);
    const auto out = lrf::allocate_group_ratios(scores, r);
    const double total = std::accumulate(out.begin(), out.end(), 0.0);
    EXPECT_NEAR(total / scores.size(), r, 1e-12);
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_GE(out[i], 0.02);
      EXPECT_LE(out[i], 0.98);
      for (std::size_t j = 0; j < out.size(); ++j) {
        const bool both_free = out[i] > 0.02 && out[i] < 0.98 && out[j] > 0.02 && out[j] < 0.98;
        const double clamp = std::exp(0.1);
        if (both_free && scores[i] > scores[j] && scores[i] > clamp) {
          EXPECT_LT(out[i], out[j]);
        }
      }
    }
  }
}

std::vector<WeightSite> seeded_sites(int blocks) {
  lrf::ModelSpec spec;
  spec.blocks = blocks;
  spec.hidden = 16;
  spec.decay = {0.3, 0.6, 1.0, 1.5, 0.2, 0.8, 1.2, 0.4};
  spec.decay.resize(blocks, 0.7);
  return lrf::generate_toy_model(spec, 21).layers();
}

std::map<std::string, double> random_scores(const std::vector<WeightSite> &sites) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.5, 500.0);
  std::map<std::string, double> scores;
  for (const auto &s : sites)
    scores[s.site_id] = u(rng);
  return scores;
}

TEST(Allocate, GroupMeansAndRanks) {
  const auto sites = seeded_sites(8);
  const auto plan = lrf::allocate(sites, random_scores(sites), 0.4);
  ASSERT_EQ(plan.entries.size(), sites.size());
  std::map<MatrixType, std::vector<double>> by_type;
  for (const auto &e : plan.entries) {
    by_type[e.matrix_type].push_back(e.allocated_ratio);
    EXPECT_EQ(e.resolved_rank, lrf::rank_for_ratio(e.rows, e.cols, e.allocated_ratio).resolved_rank);
  }
  EXPECT_EQ(by_type.size(), 4u);
  for (const auto &[type, ratios] : by_type)
    EXPECT_NEAR(std::accumulate(ratios.begin(), ratios.end(), 0.0) / ratios.size(), 0.4, 1e-12);
  EXPECT_TRUE(std::is_sorted(plan.entries.begin(), plan.entries.end(),
                             [](const auto &a, const auto &b) { return a.site_id < b.site_id; }));
}

TEST(HomogeneousPlan, EverySiteGetsTarget) {
  const auto sites = seeded_sites(8);
  const auto plan = lrf::homogeneous_plan(sites, 0.5);
  ASSERT_EQ(plan.entries.size(), 32u);
  for (const auto &e : plan.entries) {
    EXPECT_EQ(e.allocated_ratio, 0.5);
    // floor(0.5 · 16 · 16 / 32) computed independently.
    EXPECT_EQ(e.resolved_rank, (16 * 16) / (2 * 32));
  }
}

TEST(HomogeneousPlan, BudgetMatchesHeterogeneousWithinOneRankPerSite) {
  const auto sites = seeded_sites(8);
  for (double r : {0.2, 0.5}) {
    const auto homo = lrf::homogeneous_plan(sites, r);
    const auto hetero = lrf::allocate(sites, random_scores(sites), r);
    const std::int64_t unit = 16 + 16;
    EXPECT_LE(std::llabs(homo.factored_params() - hetero.factored_params()),
              unit * static_cast<std::int64_t>(sites.size()));
    EXPECT_EQ(homo.dense_params(), hetero.dense_params());
  }
}

TEST(Plan, JsonRoundTripIsExact) {
  const auto sites = seeded_sites(4);
  const auto plan = lrf::allocate(sites, random_scores(sites), 0.3);
  const auto back = lrf::plan_from_json(lrf::plan_to_json(plan));
  EXPECT_EQ(back, plan);
  EXPECT_EQ(lrf::plan_to_json(back).dump(), lrf::plan_to_json(plan).dump());
}

TEST(AllocationMode, Names) {
  EXPECT_EQ(lrf::parse_allocation("homogeneous"), lrf::AllocationMode::kHomogeneous);
  EXPECT_EQ(lrf::parse_allocation("heterogeneous"), lrf::AllocationMode::kHeterogeneous);
  EXPECT_FALSE(lrf::parse_allocation("mixed").has_value());
}

} // namespace
