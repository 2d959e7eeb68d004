// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <string>

#include "lrf/engines.hpp"
#include "lrf/error.hpp"
#include "lrf/linalg.hpp"
#include "whitening.hpp"

namespace lrf {

namespace {

// Proximal operator of τ‖·‖_*: shrink every singular value by τ.
Matrix singular_value_threshold(const Matrix &m, double tau) {
  const SvdResult dec = svd(m);
  const Vector shrunk = (dec.sigma.array() - tau).cwiseMax(0.0).matrix();
  return dec.u * shrunk.asDiagonal() * dec.vt;
}

} // namespace

AdmmOutcome truncate_admm_noise(const Matrix &w, const Matrix &gram, Eigen::Index k,
                                const AdmmOptions &options) {
  require_dims(gram.rows() == gram.cols() && gram.rows() == w.cols(),
               "truncate_admm_noise: gram must be d×d with d = W columns");
  if (!(options.eps >= 0.0) || !(options.rho > 0.0) || options.max_iter < 0)
    throw Error(ErrorCode::kConfigError, "admm needs eps >= 0, rho > 0, max_iter >= 0");

  AdmmOutcome out;
  // Nothing is truncated at full rank, so noise could only add loss.
  if (options.eps == 0.0 || k >= std::min(w.rows(), w.cols())) {
    out.factors = truncate_double_svd(w, gram, k);
    out.delta_w = Matrix::Zero(w.rows(), w.cols());
    return out;
  }

  const Eigen::Index d = gram.rows();
  const detail::Whitening white = detail::whiten_by_svd(gram, -1.0);
  const double tol = default_rank_tolerance(d);
  if (white.sigma(d - 1) <= tol * white.sigma(0))
    throw Error(ErrorCode::kGramNotInvertible,
                "gram condition exceeds " + std::to_string(1.0 / tol));

  // (XXᵀ)⁻¹ = LᵀL with L upper triangular (transpose of the lower Cholesky factor).
  const Vector inv_sigma = white.sigma.cwiseInverse();
  Matrix gram_inv = white.u * inv_sigma.asDiagonal() * white.u.transpose();
  gram_inv = 0.5 * (gram_inv + gram_inv.transpose()).eval();
  Matrix l_chol;
  try {
    l_chol = cholesky(gram_inv).transpose();
  } catch (const Error &e) {
    if (e.code() != ErrorCode::kNotPositiveDefinite)
      throw;
    throw Error(ErrorCode::kGramNotInvertible, std::string("inverse gram: ") + e.what());
  }

  const double eps = options.eps;
  const double rho = options.rho;
  const Matrix c = w * white.s;    // W·S
  const Matrix mix = l_chol * white.s; // L·S, orthogonal in exact arithmetic
  const Eigen::LDLT<Eigen::MatrixXd> mix_gram(Eigen::MatrixXd(mix * mix.transpose()));

  auto objective = [&](const Matrix &q) { return nuclear_norm(c - eps * q * mix); };

  // Start from the first-order descent direction of ‖C − εQM‖_* at ε = 0.
  const SvdResult c_dec = svd(c);
  Matrix q = c_dec.u * c_dec.vt * mix.transpose();
  if (q.norm() == 0.0)
    q = Matrix::Identity(w.rows(), d);
  q /= q.norm();

  out.trace.push_back(c_dec.sigma.sum());
  Matrix best_q = q;
  double best = objective(q);

  Matrix z = c - eps * q * mix;
  Matrix y = Matrix::Zero(c.rows(), c.cols());
  const double c_norm = std::max(c.norm(), 1e-300);

  for (int it = 0; it < options.max_iter; ++it) {
    z = singular_value_threshold(c - eps * q * mix - y / rho, 1.0 / rho);

    // Least squares for Q:  min ‖ε·Q·M − (C − Z − Y/ρ)‖_F.
    const Matrix target = c - z - y / rho;
    const Eigen::MatrixXd rhs = (mix * target.transpose()) / eps;
    Matrix q_new = mix_gram.solve(rhs).transpose();
    const double q_norm = q_new.norm();
    if (!std::isfinite(q_norm) || q_norm == 0.0)
      break;
    q = q_new / q_norm;

    const Matrix residual = z - c + eps * q * mix;
    y += rho * residual;
    ++out.iterations;

    const double value = objective(q);
    if (value > out.trace.back() * (1.0 + 1e-6))
      out.non_monotone = true;
    out.trace.push_back(value);
    if (value < best) {
      best = value;
      best_q = q;
    }
    if (residual.norm() / c_norm < options.tol)
      break;
  }

  out.final_objective = best;
  out.delta_w = -eps * best_q * l_chol;
  out.factors = truncate_double_svd(w + out.delta_w, gram, k);
  return out;
}

} // namespace lrf
