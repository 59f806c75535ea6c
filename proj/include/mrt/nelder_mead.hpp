// Copyright 2026 The mrt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "mrt/linalg.hpp"

namespace mrt {

struct NelderMeadOptions {
  int max_evaluations = 500;
  double tolerance = 1e-6;  // on both simplex diameter and objective spread
  Vec initial_step;         // per-coordinate; empty means 0.1 everywhere
  Vec lower;                // optional box; empty means unbounded
  Vec upper;
};

struct NelderMeadResult {
  Vec x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
};

/// Derivative-free minimization (Nelder-Mead with the standard
/// reflection/expansion/contraction/shrink coefficients 1, 2, 1/2, 1/2).
/// Trial points are projected onto the box when one is given. The starting
/// point is a simplex vertex, so the result is never worse than x0.
inline NelderMeadResult nelder_mead(const std::function<double(const Vec&)>& objective, const Vec& x0,
                                    const NelderMeadOptions& opt = {}) {
  const int n = static_cast<int>(x0.size());
  NelderMeadResult res;
  int evals = 0;

  auto project = [&](Vec x) {
    if (opt.lower.size() == n) x = x.cwiseMax(opt.lower);
    if (opt.upper.size() == n) x = x.cwiseMin(opt.upper);
    return x;
  };
  auto eval = [&](const Vec& x) {
    ++evals;
    const double v = objective(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Vec> simplex;
  std::vector<double> values;
  simplex.reserve(n + 1);
  simplex.push_back(project(x0));
  values.push_back(eval(simplex[0]));
  for (int i = 0; i < n && evals < opt.max_evaluations; ++i) {
    Vec v = simplex[0];
    const double step = opt.initial_step.size() == n ? opt.initial_step(i) : 0.1;
    v(i) += step;
    v = project(v);
    if (v(i) == simplex[0](i)) v(i) -= step;  // pushed back onto the bound
    v = project(v);
    simplex.push_back(v);
    values.push_back(eval(v));
  }

  std::vector<int> order(simplex.size());
  auto sort_simplex = [&]() {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    std::vector<Vec> s2;
    std::vector<double> v2;
    s2.reserve(order.size());
    v2.reserve(order.size());
    for (int k : order) {
      s2.push_back(std::move(simplex[k]));
      v2.push_back(values[k]);
    }
    simplex = std::move(s2);
    values = std::move(v2);
  };

  const bool full = static_cast<int>(simplex.size()) == n + 1;
  while (full && evals < opt.max_evaluations) {
    sort_simplex();
    double fspread = values[n] - values[0];
    double xspread = 0.0;
    for (int k = 1; k <= n; ++k) xspread = std::max(xspread, (simplex[k] - simplex[0]).cwiseAbs().maxCoeff());
    if (std::isfinite(fspread) && fspread <= opt.tolerance && xspread <= opt.tolerance) {
      res.converged = true;
      break;
    }

    Vec centroid = Vec::Zero(n);
    for (int k = 0; k < n; ++k) centroid += simplex[k];
    centroid /= n;

    const Vec xr = project(centroid + (centroid - simplex[n]));
    const double fr = eval(xr);
    if (fr < values[0]) {
      if (evals >= opt.max_evaluations) {
        simplex[n] = xr;
        values[n] = fr;
        break;
      }
      const Vec xe = project(centroid + 2.0 * (centroid - simplex[n]));
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[n] = xe;
        values[n] = fe;
      } else {
        simplex[n] = xr;
        values[n] = fr;
      }
      continue;
    }
    if (fr < values[n - 1]) {
      simplex[n] = xr;
      values[n] = fr;
      continue;
    }
    if (evals >= opt.max_evaluations) break;
    const bool outside = fr < values[n];
    const Vec xc = outside ? project(centroid + 0.5 * (xr - centroid)) : project(centroid + 0.5 * (simplex[n] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : values[n])) {
      simplex[n] = xc;
      values[n] = fc;
      continue;
    }
    for (int k = 1; k <= n && evals < opt.max_evaluations; ++k) {
      simplex[k] = project(simplex[0] + 0.5 * (simplex[k] - simplex[0]));
      values[k] = eval(simplex[k]);
    }
  }

  const auto best = std::min_element(values.begin(), values.end()) - values.begin();
  res.x = simplex[best];
  res.value = values[best];
  res.evaluations = evals;
  return res;
}

}  // namespace mrt
