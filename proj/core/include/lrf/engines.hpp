// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lrf/lbfgs.hpp"
#include "lrf/matrix.hpp"

namespace lrf {

/// W′ = a·b with a: m×k and b: k×n, kept factored.
struct LowRankFactors {
  Matrix a;
  Matrix b;

  Eigen::Index rank() const noexcept { return a.cols(); }
  Eigen::Index rows() const noexcept { return a.rows(); }
  Eigen::Index cols() const noexcept { return b.cols(); }
};

enum class EngineKind { kPlain, kCholesky, kDoubleSvd, kAdmmNoise };

std::string_view to_string(EngineKind e) noexcept;
std::optional<EngineKind> parse_engine(std::string_view s) noexcept;

// -- losses --------------------------------------------------------------

/// Eckart–Young floor: sqrt(Σ_{i>k} σ_i²) over the singular values of W·X.
double theoretical_min_loss(const Matrix &w, const Matrix &x, Eigen::Index k);

/// Same floor from the Gram alone: the tail of the spectrum of W·U_s·√S_s.
double theoretical_min_loss_from_gram(const Matrix &w, const Matrix &gram, Eigen::Index k);

/// ‖W·X − a·b·X‖_F.
double truncation_loss(const Matrix &w, const Matrix &x, const LowRankFactors &f);

/// trace((W − ab)·G·(W − ab)ᵀ), the squared truncation loss written through the Gram.
double gram_objective(const Matrix &w, const Matrix &gram, const Matrix &a, const Matrix &b);

// -- engines -------------------------------------------------------------

/// Rank-k SVD of W itself, ignoring activations.
LowRankFactors truncate_plain(const Matrix &w, Eigen::Index k);

struct CholeskyOutcome {
  std::optional<LowRankFactors> factors; ///< empty when both attempts failed
  bool jitter_used = false;
  std::string failure; ///< empty on success
  bool ok() const noexcept { return factors.has_value(); }
};

/// Cholesky whitening S = chol(G); truncate W·S; undo S by triangular solve.
/// On a non-positive pivot, retries once with G + jitter·(trace/d)·I when
/// jitter > 0. Failure is reported in the outcome, not thrown.
CholeskyOutcome truncate_cholesky(const Matrix &w, const Matrix &gram, Eigen::Index k,
                                  double jitter);

/// Whitening through the SVD of the Gram followed by an SVD of W·U_s·√S_s.
/// The inverse of √S_s is a pseudo-inverse thresholded at tol_rel·max
/// (defaults to d·u when tol_rel < 0). Achieves theoretical_min_loss.
LowRankFactors truncate_double_svd(const Matrix &w, const Matrix &gram, Eigen::Index k,
                                   double tol_rel = -1.0);

struct AdmmOptions {
  double eps = 1e-3;
  double rho = 1.0;
  int max_iter = 50;
  double tol = 1e-6; ///< relative primal residual
};

struct AdmmOutcome {
  LowRankFactors factors;
  Matrix delta_w;                   ///< perturbation applied to W before truncation
  std::vector<double> trace;        ///< ‖W_n·S‖_* per iteration; entry 0 is the unperturbed ‖W·S‖_*
  double final_objective = 0.0;     ///< ‖W_n·S‖_* of the returned perturbation
  int iterations = 0;
  bool non_monotone = false;
};

/// Perturbs W by ΔW = −ε·Q·L (LᵀL = G⁻¹, ‖Q‖_F = 1) with Q chosen by ADMM to
/// shrink the nuclear norm of W_n·S, then truncates W_n with the double-SVD
/// engine. eps = 0 or k >= min(m, n) short-circuits to truncate_double_svd.
AdmmOutcome truncate_admm_noise(const Matrix &w, const Matrix &gram, Eigen::Index k,
                                const AdmmOptions &options);

struct RefineOutcome {
  LowRankFactors factors;
  std::vector<double> loss_curve; ///< gram objective per accepted iterate
  int iterations = 0;
  bool line_search_failed = false;
};

/// L-BFGS over both factors minimizing gram_objective. The result never has a
/// larger objective than `init`.
RefineOutcome refine_lbfgs(const LowRankFactors &init, const Matrix &w, const Matrix &gram,
                           LbfgsOptions options = {});

struct FactorGradients {
  Matrix da; ///< −2·(W − AB)·G·Bᵀ
  Matrix db; ///< −2·Aᵀ·(W − AB)·G
};

FactorGradients objective_gradients(const Matrix &w, const Matrix &gram, const Matrix &a,
                                    const Matrix &b);

/// Max entrywise relative error between analytic gradients and central differences.
double gradient_check(const Matrix &w, const Matrix &gram, const Matrix &a, const Matrix &b);

// -- reporting -----------------------------------------------------------

struct TruncationReport {
  std::string site_id;
  EngineKind engine = EngineKind::kDoubleSvd;
  bool refined = false;
  double theoretical_loss = 0.0;
  double achieved_loss = 0.0;
  double normalized_loss = 0.0;
  double gram_condition = 0.0;
  Eigen::Index rank = 0;
  double wall_time_ms = 0.0;
  bool ok = true;
  std::string failure;
  bool jitter_used = false;
  std::vector<double> admm_trace;
  std::vector<double> refine_curve;
};

/// achieved / max(theoretical, 1e-300).
double normalized_loss(double achieved, double theoretical) noexcept;

} // namespace lrf
