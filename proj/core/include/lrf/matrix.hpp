// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include <Eigen/Dense>

namespace lrf {

/// Row-major dense matrix of 64-bit floats; the tensor currency of the library.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Builds a matrix from row-major data, rejecting NaN/Inf and size mismatches.
Matrix make_matrix(Eigen::Index rows, Eigen::Index cols, std::span<const double> data);

bool all_finite(const Matrix &m) noexcept;

/// Throws kNonFinite if any entry is NaN or Inf.
void require_finite(const Matrix &m, const char *what);

/// Throws kDimensionMismatch unless `cond` holds.
void require_dims(bool cond, const char *what);

} // namespace lrf
