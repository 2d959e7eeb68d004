// SPDX-License-Identifier: Apache-2.0

#include "lrf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "lrf/error.hpp"

namespace lrf {

Matrix SvdResult::reconstruct() const {
  return u * sigma.asDiagonal() * vt;
}

SvdResult svd(const Matrix &m) {
  require_dims(m.rows() > 0 && m.cols() > 0, "svd: empty matrix");
  require_finite(m, "svd");
  const Eigen::MatrixXd a = m;
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success)
    throw Error(ErrorCode::kConvergenceFailure, "Jacobi SVD did not converge");

  SvdResult out;
  out.u = solver.matrixU();
  out.sigma = solver.singularValues();
  out.vt = solver.matrixV().transpose();
  if (!all_finite(out.u) || !all_finite(out.vt) || !out.sigma.allFinite())
    throw Error(ErrorCode::kConvergenceFailure, "SVD produced non-finite factors");
  return out;
}

Vector singular_values(const Matrix &m) {
  require_dims(m.rows() > 0 && m.cols() > 0, "singular_values: empty matrix");
  require_finite(m, "singular_values");
  const Eigen::MatrixXd a = m;
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success || !solver.singularValues().allFinite())
    throw Error(ErrorCode::kConvergenceFailure, "Jacobi SVD did not converge");
  return solver.singularValues();
}

Matrix cholesky(const Matrix &m) {
  require_dims(m.rows() == m.cols() && m.rows() > 0, "cholesky: matrix must be square");
  require_finite(m, "cholesky");
  const Eigen::Index d = m.rows();

  const double scale = m.cwiseAbs().maxCoeff();
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * scale)
    throw Error(ErrorCode::kNotSymmetric,
                "asymmetry " + std::to_string(asym) + " exceeds 1e-10 relative");
  const Matrix a = 0.5 * (m + m.transpose());

  const double max_diag = a.diagonal().maxCoeff();
  const double pivot_floor =
      static_cast<double>(d) * std::numeric_limits<double>::epsilon() * std::max(max_diag, 0.0);

  // Unpivoted pivots of a singular Gram carry roundoff amplified by the
  // leading block's conditioning, so rank is judged on a diagonally pivoted
  // LDLᵀ whose trailing pivots stay near u·max(diag).
  const Eigen::LDLT<Matrix> pivoted(a);
  const double rank_floor = 64.0 * pivot_floor;
  if (pivoted.info() != Eigen::Success || !(pivoted.vectorD().minCoeff() > rank_floor))
    throw Error(ErrorCode::kNotPositiveDefinite,
                "numerically singular: smallest pivoted pivot " +
                    std::to_string(pivoted.vectorD().minCoeff()));

  Matrix l = Matrix::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    double pivot = a(j, j);
    for (Eigen::Index p = 0; p < j; ++p)
      pivot -= l(j, p) * l(j, p);
    if (!(pivot > pivot_floor))
      throw Error(ErrorCode::kNotPositiveDefinite,
                  "pivot " + std::to_string(j) + " = " + std::to_string(pivot));
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < d; ++i) {
      double s = a(i, j);
      for (Eigen::Index p = 0; p < j; ++p)
        s -= l(i, p) * l(j, p);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Matrix pseudo_inverse_factors(const SvdResult &svd, double tol_rel) {
  if (svd.sigma.size() == 0 || svd.sigma(0) <= 0.0)
    throw Error(ErrorCode::kAllSingular, "largest singular value is zero");
  const double cutoff = tol_rel * svd.sigma(0);
  Vector inv(svd.sigma.size());
  for (Eigen::Index i = 0; i < inv.size(); ++i)
    inv(i) = svd.sigma(i) > cutoff ? 1.0 / svd.sigma(i) : 0.0;
  return svd.vt.transpose() * inv.asDiagonal() * svd.u.transpose();
}

RankBudget rank_for_ratio(std::int64_t rows, std::int64_t cols, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw Error(ErrorCode::kRatioOutOfRange, "ratio " + std::to_string(ratio) + " not in [0, 1)");
  if (rows <= 0 || cols <= 0)
    throw Error(ErrorCode::kDimensionMismatch, "rank_for_ratio: non-positive shape");

  const double dense = static_cast<double>(rows) * static_cast<double>(cols);
  // The 1e-9 guard keeps exact integer quotients from flooring one rank low.
  const double raw = (1.0 - ratio) * dense / static_cast<double>(rows + cols);
  RankBudget b;
  b.target_ratio = ratio;
  b.resolved_rank = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(raw + 1e-9)));
  b.dense_params = rows * cols;
  b.factored_params = b.resolved_rank * (rows + cols);
  return b;
}

double condition_number(const Vector &sigma) noexcept {
  if (sigma.size() == 0)
    return std::numeric_limits<double>::infinity();
  const double lo = sigma(sigma.size() - 1);
  if (lo <= 0.0)
    return std::numeric_limits<double>::infinity();
  return sigma(0) / lo;
}

double nuclear_norm(const Matrix &m) {
  return singular_values(m).sum();
}

} // namespace lrf
