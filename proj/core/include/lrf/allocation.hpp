// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lrf/calibration.hpp"
#include "lrf/matrix.hpp"

namespace lrf {

struct AllocationOptions {
  double score_clamp = std::exp(0.1); ///< scores below this are raised to it before 1/log
  double ratio_floor = 0.02;
  double ratio_ceiling = 0.98;
  double log_base = std::numbers::e;
};

struct PlanEntry {
  std::string site_id;
  MatrixType matrix_type = MatrixType::kDense;
  int layer_index = 0;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  double allocated_ratio = 0.0;
  std::int64_t resolved_rank = 1;
  double l_min_score = 0.0;

  bool operator==(const PlanEntry &) const = default;
};

enum class AllocationMode { kHomogeneous, kHeterogeneous };

std::string_view to_string(AllocationMode m) noexcept;
std::optional<AllocationMode> parse_allocation(std::string_view s) noexcept;

/// Per-site compression ratios and ranks; entries are kept sorted by site_id.
struct CompressionPlan {
  double target_ratio = 0.0;
  AllocationMode mode = AllocationMode::kHeterogeneous;
  std::vector<PlanEntry> entries;

  const PlanEntry *find(std::string_view site_id) const noexcept;
  std::int64_t factored_params() const noexcept;
  std::int64_t dense_params() const noexcept;

  bool operator==(const CompressionPlan &) const = default;
};

/// Theoretical minimum truncation loss of every site at the rank implied by
/// `target_ratio`, computed from its Gram. Throws kMissingGram.
std::map<std::string, double> score_sites(const std::vector<WeightSite> &sites,
                                          const std::map<std::string, Matrix> &grams,
                                          double target_ratio);

/// Ratios for one group: ℓ_i = 1/log(max(score_i, clamp)), r_i = |g|·R·ℓ_i/Σℓ,
/// kept inside [floor, ceiling]. Clipping is resolved exactly: r_i = clamp(λ·ℓ_i)
/// with the single λ that preserves the budget. kInfeasibleBudget otherwise.
std::vector<double> allocate_group_ratios(std::span<const double> scores, double target_ratio,
                                          const AllocationOptions &options = {});

/// Groups sites by matrix type across layers and allocates per group.
CompressionPlan allocate(const std::vector<WeightSite> &sites,
                         const std::map<std::string, double> &scores, double target_ratio,
                         const AllocationOptions &options = {});

/// Every site gets `target_ratio`.
CompressionPlan homogeneous_plan(const std::vector<WeightSite> &sites, double target_ratio);

} // namespace lrf
