// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "lrf/lbfgs.hpp"

namespace {

using lrf::Vector;

double rosenbrock(const Vector &x, Vector &g) {
  double f = 0;
  g.setZero();
  for (Eigen::Index i = 0; i + 1 < x.size(); ++i) {
    const double a = x(i + 1) - x(i) * x(i), b = 1 - x(i);
    f += 100 * a * a + b * b;
    g(i) += -400 * x(i) * a - 2 * b;
    g(i + 1) += 200 * a;
  }
  return f;
}

TEST(Lbfgs, SolvesQuadratic) {
  Vector diag(4);
  diag << 1, 10, 100, 1000;
  const auto obj = [&](const Vector &x, Vector &g) {
    g = diag.cwiseProduct(x - Vector::Ones(4));
    return 0.5 * (x - Vector::Ones(4)).cwiseProduct(g).sum();
  };
  lrf::LbfgsOptions opt;
  opt.max_iter = 200;
  const auto r = lrf::minimize_lbfgs(obj, Vector::Zero(4), opt);
  EXPECT_LE((r.x - Vector::Ones(4)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_FALSE(r.line_search_failed);
}

TEST(Lbfgs, RosenbrockHistoryNeverIncreases) {
  lrf::LbfgsOptions opt;
  opt.max_iter = 500;
  Vector x0(2);
  x0 << -1.2, 1.0;
  const auto r = lrf::minimize_lbfgs(rosenbrock, x0, opt);
  ASSERT_GE(r.history.size(), 2u);
  for (std::size_t i = 1; i < r.history.size(); ++i)
    EXPECT_LE(r.history[i], r.history[i - 1]);
  EXPECT_NEAR(r.x(0), 1.0, 1e-4);
  EXPECT_NEAR(r.x(1), 1.0, 1e-4);
}

TEST(Lbfgs, RespectsIterationCap) {
  lrf::LbfgsOptions opt;
  opt.max_iter = 3;
  Vector x0(2);
  x0 << -1.2, 1.0;
  const auto r = lrf::minimize_lbfgs(rosenbrock, x0, opt);
  EXPECT_LE(r.iterations, 3);
  EXPECT_EQ(r.history.size(), static_cast<std::size_t>(r.iterations) + 1);
}

TEST(Lbfgs, StationaryStartStopsImmediately) {
  const auto obj = [](const Vector &x, Vector &g) {
    g = 2 * x;
    return x.squaredNorm();
  };
  const auto r = lrf::minimize_lbfgs(obj, Vector::Zero(3), {});
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.f, 0.0);
}

TEST(Lbfgs, FirstTrialStepIsTheLearningRate) {
  // On f = ½‖x‖² from x0 = 1 the first trial point is x0 − lr·g = (1 − lr)·x0.
  std::vector<Vector> evaluated;
  const auto obj = [&](const Vector &x, Vector &g) {
    evaluated.push_back(x);
    g = x;
    return 0.5 * x.squaredNorm();
  };
  lrf::LbfgsOptions opt;
  opt.max_iter = 1;
  const auto r = lrf::minimize_lbfgs(obj, Vector::Ones(2), opt);
  ASSERT_GE(evaluated.size(), 2u);
  EXPECT_NEAR(evaluated[1](0), 0.99, 1e-15);
  (void)r;
}

} // namespace
