// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "lrf/engines.hpp"
#include "lrf/error.hpp"

namespace lrf {

namespace {

using RowMap = Eigen::Map<Matrix>;
using ConstRowMap = Eigen::Map<const Matrix>;

} // namespace

FactorGradients objective_gradients(const Matrix &w, const Matrix &gram, const Matrix &a,
                                    const Matrix &b) {
  require_dims(a.rows() == w.rows() && b.cols() == w.cols() && a.cols() == b.rows() &&
                   gram.rows() == w.cols() && gram.cols() == w.cols(),
               "objective_gradients: shapes do not compose");
  const Matrix rg = (w - a * b) * gram;
  return {-2.0 * rg * b.transpose(), -2.0 * a.transpose() * rg};
}

double gradient_check(const Matrix &w, const Matrix &gram, const Matrix &a, const Matrix &b) {
  const FactorGradients analytic = objective_gradients(w, gram, a, b);
  const double gmax = std::max(analytic.da.size() ? analytic.da.cwiseAbs().maxCoeff() : 0.0,
                               analytic.db.size() ? analytic.db.cwiseAbs().maxCoeff() : 0.0);

  double worst = 0.0;
  auto check = [&](const Matrix &base, const Matrix &grad, bool is_a) {
    const double scale = std::max(1.0, base.size() ? base.cwiseAbs().maxCoeff() : 0.0);
    const double h = 1e-6 * scale;
    Matrix probe = base;
    for (Eigen::Index i = 0; i < base.size(); ++i) {
      const double orig = probe.data()[i];
      probe.data()[i] = orig + h;
      const double fp = is_a ? gram_objective(w, gram, probe, b) : gram_objective(w, gram, a, probe);
      probe.data()[i] = orig - h;
      const double fm = is_a ? gram_objective(w, gram, probe, b) : gram_objective(w, gram, a, probe);
      probe.data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double exact = grad.data()[i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8 * (1.0 + gmax)});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
  };
  check(a, analytic.da, true);
  check(b, analytic.db, false);
  return worst;
}

RefineOutcome refine_lbfgs(const LowRankFactors &init, const Matrix &w, const Matrix &gram,
                           LbfgsOptions options) {
  const Eigen::Index m = w.rows(), n = w.cols(), k = init.rank();
  require_dims(init.a.rows() == m && init.b.cols() == n && init.b.rows() == k &&
                   gram.rows() == n && gram.cols() == n,
               "refine_lbfgs: init factors do not match W");
  const Eigen::Index na = m * k;

  Vector x0(na + k * n);
  std::copy_n(init.a.data(), na, x0.data());
  std::copy_n(init.b.data(), k * n, x0.data() + na);

  const Objective objective = [&](const Vector &x, Vector &grad) {
    const ConstRowMap a(x.data(), m, k);
    const ConstRowMap b(x.data() + na, k, n);
    const Matrix r = w - a * b;
    const Matrix rg = r * gram;
    RowMap(grad.data(), m, k) = -2.0 * rg * b.transpose();
    RowMap(grad.data() + na, k, n) = -2.0 * a.transpose() * rg;
    return rg.cwiseProduct(r).sum();
  };

  const LbfgsResult res = minimize_lbfgs(objective, x0, options);

  RefineOutcome out;
  out.iterations = res.iterations;
  out.line_search_failed = res.line_search_failed;
  out.loss_curve = res.history;
  if (res.iterations == 0 || !(res.f <= res.history.front())) {
    out.factors = init;
    return out;
  }
  out.factors.a = ConstRowMap(res.x.data(), m, k);
  out.factors.b = ConstRowMap(res.x.data() + na, k, n);
  return out;
}

} // namespace lrf
