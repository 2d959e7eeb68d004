// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "lrf/linalg.hpp"

namespace lrf::detail {

/// S = U_s·diag(√σ_s) with S·Sᵀ = G, and its thresholded pseudo-inverse.
struct Whitening {
  Matrix u;         ///< U_s
  Vector sqrt_sigma;
  Vector inv_sqrt_sigma; ///< zero where σ_s ≤ tol·σ_max
  Vector sigma;
  Matrix s;         ///< U_s·diag(√σ_s)
  Matrix s_pinv;    ///< diag(√σ_s)⁺·U_sᵀ
};

/// Throws kDegenerateGram when the Gram is identically zero.
Whitening whiten_by_svd(const Matrix &gram, double tol_rel);

} // namespace lrf::detail
