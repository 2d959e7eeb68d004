// SPDX-License-Identifier: Apache-2.0

#include "lrf/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lrf/engines.hpp"
#include "lrf/error.hpp"
#include "lrf/linalg.hpp"

namespace lrf {

std::string_view to_string(AllocationMode m) noexcept {
  return m == AllocationMode::kHomogeneous ? "homogeneous" : "heterogeneous";
}

std::optional<AllocationMode> parse_allocation(std::string_view s) noexcept {
  if (s == "homogeneous")
    return AllocationMode::kHomogeneous;
  if (s == "heterogeneous")
    return AllocationMode::kHeterogeneous;
  return std::nullopt;
}

const PlanEntry *CompressionPlan::find(std::string_view site_id) const noexcept {
  auto it = std::lower_bound(entries.begin(), entries.end(), site_id,
                             [](const PlanEntry &e, std::string_view id) { return e.site_id < id; });
  return it != entries.end() && it->site_id == site_id ? &*it : nullptr;
}

std::int64_t CompressionPlan::factored_params() const noexcept {
  std::int64_t total = 0;
  for (const auto &e : entries)
    total += e.resolved_rank * (e.rows + e.cols);
  return total;
}

std::int64_t CompressionPlan::dense_params() const noexcept {
  std::int64_t total = 0;
  for (const auto &e : entries)
    total += e.rows * e.cols;
  return total;
}

std::map<std::string, double> score_sites(const std::vector<WeightSite> &sites,
                                          const std::map<std::string, Matrix> &grams,
                                          double target_ratio) {
  std::map<std::string, double> scores;
  for (const auto &site : sites) {
    auto it = grams.find(site.site_id);
    if (it == grams.end())
      throw Error(ErrorCode::kMissingGram, "no gram for site " + site.site_id);
    if (it->second.rows() != site.input_dim() || it->second.cols() != site.input_dim())
      throw Error(ErrorCode::kDimensionMismatch, "gram for " + site.site_id + " has wrong shape");
    const auto budget = rank_for_ratio(site.output_dim(), site.input_dim(), target_ratio);
    scores[site.site_id] =
        theoretical_min_loss_from_gram(site.weight, it->second, budget.resolved_rank);
  }
  return scores;
}

std::vector<double> allocate_group_ratios(std::span<const double> scores, double target_ratio,
                                          const AllocationOptions &options) {
  if (!(target_ratio >= 0.0 && target_ratio < 1.0))
    throw Error(ErrorCode::kRatioOutOfRange, "target ratio " + std::to_string(target_ratio));
  const std::size_t n = scores.size();
  if (n == 0)
    return {};
  const double budget = static_cast<double>(n) * target_ratio;
  if (target_ratio > options.ratio_ceiling || target_ratio < options.ratio_floor)
    throw Error(ErrorCode::kInfeasibleBudget,
                "group mean " + std::to_string(target_ratio) + " outside [" +
                    std::to_string(options.ratio_floor) + ", " +
                    std::to_string(options.ratio_ceiling) + "]");

  const double log_scale = std::log(options.log_base);
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::max(scores[i], options.score_clamp);
    weight[i] = 1.0 / (std::log(s) / log_scale);
  }

  // Water-filling: ratio_i = clamp(λ·w_i, floor, ceil) with λ chosen so the
  // sum meets the budget. The sum is nondecreasing and piecewise linear in λ,
  // so the crossing segment is found among the clamp breakpoints.
  const double lo = options.ratio_floor;
  const double hi = options.ratio_ceiling;
  auto clamped_sum = [&](double lambda) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      sum += std::clamp(lambda * weight[i], lo, hi);
    return sum;
  };
  std::vector<double> breaks;
  breaks.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    breaks.push_back(lo / weight[i]);
    breaks.push_back(hi / weight[i]);
  }
  std::sort(breaks.begin(), breaks.end());

  std::vector<double> ratio(n);
  std::size_t seg = 0;
  while (seg < breaks.size() && clamped_sum(breaks[seg]) < budget)
    ++seg;
  const double left = seg == 0 ? 0.0 : breaks[seg - 1];
  const double right = seg == breaks.size() ? 2.0 * breaks.back() : breaks[seg];
  const double mid = 0.5 * (left + right);

  double remaining = budget;
  double free_weight = 0.0;
  std::size_t free_count = 0;
  std::vector<bool> is_free(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = mid * weight[i];
    if (x <= lo) {
      ratio[i] = lo;
      remaining -= lo;
    } else if (x >= hi) {
      ratio[i] = hi;
      remaining -= hi;
    } else {
      is_free[i] = true;
      free_weight += weight[i];
      ++free_count;
    }
  }
  if (free_count == 0) {
    for (std::size_t i = 0; i < n; ++i)
      ratio[i] = std::clamp(right * weight[i], lo, hi);
  } else {
    // Share first: a lone member or equal weights then reproduce R bit for bit.
    const bool uniform = std::all_of(weight.begin(), weight.end(), [&](double w) {
      return w == weight.front();
    });
    const double share = free_count == n ? target_ratio
                                         : remaining / static_cast<double>(free_count);
    for (std::size_t i = 0; i < n; ++i)
      if (is_free[i])
        ratio[i] = uniform ? share
                           : share * (static_cast<double>(free_count) * weight[i] / free_weight);
  }

  const double total = std::accumulate(ratio.begin(), ratio.end(), 0.0);
  const bool in_range = std::all_of(ratio.begin(), ratio.end(), [&](double r) {
    return r >= options.ratio_floor && r <= options.ratio_ceiling;
  });
  if (!in_range || std::abs(total - budget) > 1e-12 * std::max(1.0, budget))
    throw Error(ErrorCode::kInfeasibleBudget, "clamping cannot preserve the group budget");
  return ratio;
}

namespace {

PlanEntry entry_for(const WeightSite &site, double ratio, double score) {
  PlanEntry e;
  e.site_id = site.site_id;
  e.matrix_type = site.matrix_type;
  e.layer_index = site.layer_index;
  e.rows = site.output_dim();
  e.cols = site.input_dim();
  e.allocated_ratio = ratio;
  e.resolved_rank = rank_for_ratio(e.rows, e.cols, ratio).resolved_rank;
  e.l_min_score = score;
  return e;
}

void sort_entries(CompressionPlan &plan) {
  std::sort(plan.entries.begin(), plan.entries.end(),
            [](const PlanEntry &a, const PlanEntry &b) { return a.site_id < b.site_id; });
}

} // namespace

CompressionPlan allocate(const std::vector<WeightSite> &sites,
                         const std::map<std::string, double> &scores, double target_ratio,
                         const AllocationOptions &options) {
  std::map<MatrixType, std::vector<const WeightSite *>> groups;
  for (const auto &site : sites)
    groups[site.matrix_type].push_back(&site);

  CompressionPlan plan;
  plan.target_ratio = target_ratio;
  plan.mode = AllocationMode::kHeterogeneous;
  for (const auto &[type, members] : groups) {
    std::vector<double> group_scores;
    for (const auto *site : members) {
      auto it = scores.find(site->site_id);
      if (it == scores.end())
        throw Error(ErrorCode::kMissingGram, "no score for site " + site->site_id);
      group_scores.push_back(it->second);
    }
    const auto ratios = allocate_group_ratios(group_scores, target_ratio, options);
    for (std::size_t i = 0; i < members.size(); ++i)
      plan.entries.push_back(entry_for(*members[i], ratios[i], group_scores[i]));
  }
  sort_entries(plan);
  return plan;
}

CompressionPlan homogeneous_plan(const std::vector<WeightSite> &sites, double target_ratio) {
  CompressionPlan plan;
  plan.target_ratio = target_ratio;
  plan.mode = AllocationMode::kHomogeneous;
  for (const auto &site : sites)
    plan.entries.push_back(entry_for(site, target_ratio, 0.0));
  sort_entries(plan);
  return plan;
}

} // namespace lrf
