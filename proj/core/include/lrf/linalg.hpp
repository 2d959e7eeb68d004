// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>

#include "lrf/matrix.hpp"

namespace lrf {

/// Thin SVD: u is m×r, sigma has r non-increasing entries, vt is r×n, r = min(m, n).
struct SvdResult {
  Matrix u;
  Vector sigma;
  Matrix vt;

  Eigen::Index rank_capacity() const noexcept { return sigma.size(); }
  Matrix reconstruct() const;
};

/// Deterministic one-pass SVD (two-sided Jacobi). Throws kConvergenceFailure
/// when the backend reports failure or produces non-finite factors.
SvdResult svd(const Matrix &m);

/// Singular values only.
Vector singular_values(const Matrix &m);

/// Lower-triangular L with L·Lᵀ = m. The input is symmetrized first and must
/// be symmetric to 1e-10 relative. Raises kNotPositiveDefinite when a
/// diagonally pivoted LDLᵀ has a pivot at or below 64·d·u·max(diag), or when
/// an unpivoted pivot falls to d·u·max(diag).
Matrix cholesky(const Matrix &m);

/// Inverse map built from an SVD, inverting only σ_i > tol_rel·σ_max:
/// V·diag(σ⁺)·Uᵀ. Throws kAllSingular when σ_max = 0.
Matrix pseudo_inverse_factors(const SvdResult &svd, double tol_rel);

/// Default numerical-rank threshold for a d-dimensional operator.
inline double default_rank_tolerance(Eigen::Index dim) noexcept {
  return static_cast<double>(dim) * std::numeric_limits<double>::epsilon();
}

struct RankBudget {
  double target_ratio = 0.0;
  std::int64_t resolved_rank = 1;
  std::int64_t dense_params = 0;
  std::int64_t factored_params = 0;
};

/// rank = max(1, floor((1 − ratio)·rows·cols / (rows + cols))).
RankBudget rank_for_ratio(std::int64_t rows, std::int64_t cols, double ratio);

/// Largest over smallest singular value; +inf when the smallest is zero.
double condition_number(const Vector &sigma) noexcept;

double nuclear_norm(const Matrix &m);

} // namespace lrf
