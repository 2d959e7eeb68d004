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

double tail_norm(const Vector &sigma, Eigen::Index k) {
  double sum = 0.0;
  for (Eigen::Index i = std::min(k, sigma.size()); i < sigma.size(); ++i)
    sum += sigma(i) * sigma(i);
  return std::sqrt(sum);
}

void require_rank(Eigen::Index k) {
  if (k < 1)
    throw Error(ErrorCode::kInvalidRank, "rank must be >= 1, got " + std::to_string(k));
}

} // namespace

std::string_view to_string(EngineKind e) noexcept {
  switch (e) {
  case EngineKind::kPlain: return "plain";
  case EngineKind::kCholesky: return "cholesky";
  case EngineKind::kDoubleSvd: return "double_svd";
  case EngineKind::kAdmmNoise: return "admm_noise";
  }
  return "double_svd";
}

std::optional<EngineKind> parse_engine(std::string_view s) noexcept {
  for (auto e : {EngineKind::kPlain, EngineKind::kCholesky, EngineKind::kDoubleSvd,
                 EngineKind::kAdmmNoise})
    if (to_string(e) == s)
      return e;
  return std::nullopt;
}

double theoretical_min_loss(const Matrix &w, const Matrix &x, Eigen::Index k) {
  require_dims(w.cols() == x.rows(), "theoretical_min_loss: W columns must match X rows");
  require_rank(k);
  const Matrix product = w * x;
  return tail_norm(singular_values(product), k);
}

double theoretical_min_loss_from_gram(const Matrix &w, const Matrix &gram, Eigen::Index k) {
  require_dims(gram.rows() == gram.cols() && w.cols() == gram.rows(),
               "theoretical_min_loss_from_gram: gram must be d×d with d = W columns");
  require_rank(k);
  const detail::Whitening white = detail::whiten_by_svd(gram, -1.0);
  return tail_norm(singular_values(w * white.s), k);
}

double truncation_loss(const Matrix &w, const Matrix &x, const LowRankFactors &f) {
  require_dims(w.cols() == x.rows() && f.rows() == w.rows() && f.cols() == w.cols() &&
                   f.a.cols() == f.b.rows(),
               "truncation_loss: shapes do not compose");
  const Matrix wx = w * x;
  const Matrix bx = f.b * x;
  return (wx - f.a * bx).norm();
}

double gram_objective(const Matrix &w, const Matrix &gram, const Matrix &a, const Matrix &b) {
  require_dims(a.rows() == w.rows() && b.cols() == w.cols() && a.cols() == b.rows() &&
                   gram.rows() == w.cols() && gram.cols() == w.cols(),
               "gram_objective: shapes do not compose");
  const Matrix r = w - a * b;
  const Matrix rg = r * gram;
  return rg.cwiseProduct(r).sum();
}

double normalized_loss(double achieved, double theoretical) noexcept {
  return achieved / std::max(theoretical, 1e-300);
}

} // namespace lrf
