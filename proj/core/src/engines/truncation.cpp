// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <string>

#include "lrf/engines.hpp"
#include "lrf/error.hpp"
#include "lrf/linalg.hpp"
#include "whitening.hpp"

namespace lrf {

namespace detail {

Whitening whiten_by_svd(const Matrix &gram, double tol_rel) {
  require_dims(gram.rows() == gram.cols() && gram.rows() > 0, "gram must be square");
  const Matrix sym = 0.5 * (gram + gram.transpose());
  SvdResult dec = svd(sym);
  if (dec.sigma(0) <= 0.0)
    throw Error(ErrorCode::kDegenerateGram, "gram has no positive singular value");
  const double tol = tol_rel < 0.0 ? default_rank_tolerance(gram.rows()) : tol_rel;

  Whitening out;
  out.sigma = dec.sigma;
  out.sqrt_sigma = dec.sigma.cwiseSqrt();
  out.inv_sqrt_sigma.resize(dec.sigma.size());
  for (Eigen::Index i = 0; i < dec.sigma.size(); ++i)
    out.inv_sqrt_sigma(i) = dec.sigma(i) > tol * dec.sigma(0) ? 1.0 / out.sqrt_sigma(i) : 0.0;
  out.u = std::move(dec.u);
  out.s = out.u * out.sqrt_sigma.asDiagonal();
  out.s_pinv = out.inv_sqrt_sigma.asDiagonal() * out.u.transpose();
  return out;
}

} // namespace detail

namespace {

Eigen::Index effective_rank(Eigen::Index k, Eigen::Index m, Eigen::Index n) {
  if (k < 1)
    throw Error(ErrorCode::kInvalidRank, "rank must be >= 1, got " + std::to_string(k));
  return std::min({k, m, n});
}

void require_gram_for(const Matrix &w, const Matrix &gram, const char *who) {
  require_dims(gram.rows() == gram.cols() && gram.rows() == w.cols(), who);
  require_finite(w, who);
  require_finite(gram, who);
}

} // namespace

LowRankFactors truncate_plain(const Matrix &w, Eigen::Index k) {
  const Eigen::Index r = effective_rank(k, w.rows(), w.cols());
  const SvdResult dec = svd(w);
  LowRankFactors out;
  out.a = dec.u.leftCols(r) * dec.sigma.head(r).asDiagonal();
  out.b = dec.vt.topRows(r);
  return out;
}

CholeskyOutcome truncate_cholesky(const Matrix &w, const Matrix &gram, Eigen::Index k,
                                  double jitter) {
  require_gram_for(w, gram, "truncate_cholesky: gram must be d×d with d = W columns");
  const Eigen::Index r = effective_rank(k, w.rows(), w.cols());
  CholeskyOutcome out;

  Matrix lower;
  try {
    lower = cholesky(gram);
  } catch (const Error &first) {
    if (first.code() != ErrorCode::kNotPositiveDefinite)
      throw;
    if (jitter <= 0.0) {
      out.failure = first.what();
      return out;
    }
    const double shift = jitter * gram.trace() / static_cast<double>(gram.rows());
    Matrix shifted = gram;
    shifted.diagonal().array() += shift;
    try {
      lower = cholesky(shifted);
      out.jitter_used = true;
    } catch (const Error &second) {
      if (second.code() != ErrorCode::kNotPositiveDefinite)
        throw;
      out.failure = second.what();
      return out;
    }
  }

  const SvdResult dec = svd(w * lower);
  LowRankFactors f;
  f.a = dec.u.leftCols(r) * dec.sigma.head(r).asDiagonal();
  // b = V_kᵀ·L⁻¹, i.e. Lᵀ·bᵀ = V_k.
  const Matrix vk = dec.vt.topRows(r).transpose();
  f.b = lower.transpose().triangularView<Eigen::Upper>().solve(vk).transpose();
  if (!all_finite(f.b)) {
    out.failure = "triangular solve produced non-finite factors";
    return out;
  }
  out.factors = std::move(f);
  return out;
}

LowRankFactors truncate_double_svd(const Matrix &w, const Matrix &gram, Eigen::Index k,
                                   double tol_rel) {
  require_gram_for(w, gram, "truncate_double_svd: gram must be d×d with d = W columns");
  const Eigen::Index r = effective_rank(k, w.rows(), w.cols());
  const detail::Whitening white = detail::whiten_by_svd(gram, tol_rel);

  const SvdResult dec = svd(w * white.s);
  LowRankFactors out;
  out.a = dec.u.leftCols(r) * dec.sigma.head(r).asDiagonal();
  out.b = dec.vt.topRows(r) * white.s_pinv;
  return out;
}

} // namespace lrf
