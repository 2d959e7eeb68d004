// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "lrf/matrix.hpp"

namespace lrf {

/// Evaluates f(x) and writes ∇f(x) into `grad` (already sized like x).
using Objective = std::function<double(const Vector &x, Vector &grad)>;

struct LbfgsOptions {
  double initial_step = 0.01; ///< step length tried first by the very first line search
  int max_iter = 40;
  int memory = 10;
  double c1 = 1e-4; ///< sufficient decrease
  double c2 = 0.9;  ///< curvature (strong Wolfe)
  double gradient_tol = 1e-12; ///< stop when ‖g‖∞ ≤ tol·(1 + |f|)
  int max_line_search_evals = 60;
};

struct LbfgsResult {
  Vector x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  std::vector<double> history; ///< f after each accepted iterate, starting with f(x0)
  bool line_search_failed = false;
};

/// Limited-memory BFGS with a strong-Wolfe line search (bracketing + cubic zoom).
/// Every accepted step satisfies sufficient decrease, so f never increases.
LbfgsResult minimize_lbfgs(const Objective &objective, Vector x0, const LbfgsOptions &options);

} // namespace lrf
