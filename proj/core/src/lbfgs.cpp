// SPDX-License-Identifier: Apache-2.0

#include "lrf/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace lrf {

namespace {

struct Probe {
  double alpha = 0.0;
  double f = 0.0;
  double slope = 0.0; // directional derivative φ'(α)
  Vector grad;
};

// Minimizer of the cubic through (a, fa, da) and (b, fb, db); NaN if degenerate.
double cubic_minimizer(double a, double fa, double da, double b, double fb, double db) {
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  if (disc < 0.0)
    return std::numeric_limits<double>::quiet_NaN();
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  const double denom = db - da + 2.0 * d2;
  if (denom == 0.0)
    return std::numeric_limits<double>::quiet_NaN();
  return b - (b - a) * (db + d2 - d1) / denom;
}

class LineSearch {
public:
  LineSearch(const Objective &objective, const Vector &x, const Vector &dir, double f0,
             double slope0, const LbfgsOptions &opt, int &evaluations)
      : objective_(objective), x_(x), dir_(dir), f0_(f0), slope0_(slope0), opt_(opt),
        evaluations_(evaluations) {}

  // Returns true with `accepted` filled when a strong-Wolfe point is found.
  bool run(double alpha0, Probe &accepted) {
    Probe prev{0.0, f0_, slope0_, Vector()};
    double alpha = alpha0;
    for (int i = 0; budget_left(); ++i) {
      Probe cur = probe(alpha);
      if (!std::isfinite(cur.f) || cur.f > f0_ + opt_.c1 * alpha * slope0_ ||
          (i > 0 && cur.f >= prev.f))
        return zoom(prev, cur, accepted);
      if (std::abs(cur.slope) <= -opt_.c2 * slope0_) {
        accepted = std::move(cur);
        return true;
      }
      if (cur.slope >= 0.0)
        return zoom(cur, prev, accepted);
      prev = std::move(cur);
      alpha *= 2.0;
    }
    return false;
  }

private:
  bool budget_left() const { return used_ < opt_.max_line_search_evals; }

  Probe probe(double alpha) {
    ++used_;
    ++evaluations_;
    Probe p;
    p.alpha = alpha;
    p.grad.resize(x_.size());
    p.f = objective_(x_ + alpha * dir_, p.grad);
    p.slope = p.grad.dot(dir_);
    return p;
  }

  bool zoom(Probe lo, Probe hi, Probe &accepted) {
    while (budget_left()) {
      const double width = hi.alpha - lo.alpha;
      if (std::abs(width) <= 1e-16 * std::max(1.0, std::abs(lo.alpha)))
        break;
      double alpha = std::isfinite(hi.f)
                         ? cubic_minimizer(lo.alpha, lo.f, lo.slope, hi.alpha, hi.f, hi.slope)
                         : std::numeric_limits<double>::quiet_NaN();
      const double left = std::min(lo.alpha, hi.alpha) + 0.1 * std::abs(width);
      const double right = std::max(lo.alpha, hi.alpha) - 0.1 * std::abs(width);
      if (!std::isfinite(alpha) || alpha < left || alpha > right)
        alpha = 0.5 * (lo.alpha + hi.alpha);

      Probe cur = probe(alpha);
      if (!std::isfinite(cur.f) || cur.f > f0_ + opt_.c1 * alpha * slope0_ || cur.f >= lo.f) {
        hi = std::move(cur);
        continue;
      }
      if (std::abs(cur.slope) <= -opt_.c2 * slope0_) {
        accepted = std::move(cur);
        return true;
      }
      if (cur.slope * (hi.alpha - lo.alpha) >= 0.0)
        hi = lo;
      lo = std::move(cur);
    }
    // Out of budget: settle for a point with sufficient decrease if we have one.
    if (lo.alpha > 0.0 && lo.f < f0_) {
      accepted = std::move(lo);
      return true;
    }
    return false;
  }

  const Objective &objective_;
  const Vector &x_;
  const Vector &dir_;
  double f0_;
  double slope0_;
  const LbfgsOptions &opt_;
  int &evaluations_;
  int used_ = 0;
};

} // namespace

LbfgsResult minimize_lbfgs(const Objective &objective, Vector x0, const LbfgsOptions &options) {
  LbfgsResult res;
  res.x = std::move(x0);
  Vector g(res.x.size());
  res.f = objective(res.x, g);
  res.evaluations = 1;
  res.history.push_back(res.f);

  std::deque<std::pair<Vector, Vector>> pairs; // (s, y)
  auto converged = [&] {
    return g.size() == 0 || g.cwiseAbs().maxCoeff() <= options.gradient_tol * (1.0 + std::abs(res.f));
  };

  for (int it = 0; it < options.max_iter && !converged(); ++it) {
    // Two-loop recursion for d = −H·g.
    Vector q = g;
    std::vector<double> alphas(pairs.size());
    for (std::size_t i = pairs.size(); i-- > 0;) {
      const auto &[s, y] = pairs[i];
      alphas[i] = s.dot(q) / y.dot(s);
      q -= alphas[i] * y;
    }
    if (!pairs.empty()) {
      const auto &[s, y] = pairs.back();
      q *= s.dot(y) / y.dot(y);
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto &[s, y] = pairs[i];
      const double beta = y.dot(q) / y.dot(s);
      q += (alphas[i] - beta) * s;
    }
    Vector dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      pairs.clear();
      dir = -g;
      slope = g.dot(dir);
    }

    const double alpha0 = it == 0 ? options.initial_step : 1.0;
    LineSearch search(objective, res.x, dir, res.f, slope, options, res.evaluations);
    Probe step;
    if (!search.run(alpha0, step)) {
      res.line_search_failed = true;
      break;
    }

    Vector s = step.alpha * dir;
    Vector y = step.grad - g;
    if (s.dot(y) > 1e-16 * s.norm() * y.norm()) {
      pairs.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(pairs.size()) > options.memory)
        pairs.pop_front();
    }
    res.x += step.alpha * dir;
    res.f = step.f;
    g = std::move(step.grad);
    res.history.push_back(res.f);
    ++res.iterations;
  }
  return res;
}

} // namespace lrf
