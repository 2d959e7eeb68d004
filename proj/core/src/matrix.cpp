// SPDX-License-Identifier: Apache-2.0

#include "lrf/matrix.hpp"

#include <cmath>
#include <string>

#include "lrf/error.hpp"

namespace lrf {

Matrix make_matrix(Eigen::Index rows, Eigen::Index cols, std::span<const double> data) {
  if (rows <= 0 || cols <= 0 || static_cast<std::size_t>(rows * cols) != data.size())
    throw Error(ErrorCode::kDimensionMismatch,
                "data length " + std::to_string(data.size()) + " does not match " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  require_finite(m, "make_matrix");
  return m;
}

bool all_finite(const Matrix &m) noexcept {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (!std::isfinite(m.data()[i]))
      return false;
  return true;
}

void require_finite(const Matrix &m, const char *what) {
  if (!all_finite(m))
    throw Error(ErrorCode::kNonFinite, std::string(what) + ": non-finite entry");
}

void require_dims(bool cond, const char *what) {
  if (!cond)
    throw Error(ErrorCode::kDimensionMismatch, what);
}

} // namespace lrf
