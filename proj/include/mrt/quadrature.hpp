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

#include <array>
#include <cmath>
#include <cstddef>

namespace mrt {

/// Gauss-Hermite rule for integral of exp(-x^2) f(x) dx. Nodes are found by
/// Newton iteration on the orthonormal Hermite recurrence.
template <std::size_t N>
struct GaussHermite {
  std::array<double, N> nodes{};
  std::array<double, N> weights{};

  GaussHermite() {
    constexpr double kPiM4 = 0.7511255444649425;  // pi^(-1/4)
    const int n = static_cast<int>(N);
    const int half = (n + 1) / 2;
    double z = 0.0;
    double pp = 0.0;
    for (int i = 0; i < half; ++i) {
      if (i == 0) {
        z = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -0.16667);
      } else if (i == 1) {
        z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
      } else if (i == 2) {
        z = 1.86 * z - 0.86 * nodes[0];
      } else if (i == 3) {
        z = 1.91 * z - 0.91 * nodes[1];
      } else {
        z = 2.0 * z - nodes[i - 2];
      }
      for (int it = 0; it < 100; ++it) {
        double p1 = kPiM4;
        double p2 = 0.0;
        for (int j = 0; j < n; ++j) {
          const double p3 = p2;
          p2 = p1;
          p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
        }
        pp = std::sqrt(2.0 * n) * p2;
        const double z1 = z;
        z = z1 - p1 / pp;
        if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
      }
      nodes[i] = z;
      nodes[n - 1 - i] = -z;
      weights[i] = weights[n - 1 - i] = 2.0 / (pp * pp);
    }
  }

  static const GaussHermite& instance() {
    static const GaussHermite rule;
    return rule;
  }
};

}  // namespace mrt
