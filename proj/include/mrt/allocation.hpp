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

// Smooth posterior sampling. The randomization probability is
//
//   pi = E[ rho(f(S)^T beta) ],  beta ~ N(mu_beta, Sigma_beta)
//   rho(x) = L_min + (L_max - L_min) / (1 + c exp(-b x)),  b = B / sigma_res
//
// so pi always lies in [L_min, L_max].

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mrt/error.hpp"
#include "mrt/linalg.hpp"
#include "mrt/quadrature.hpp"
#include "mrt/rng.hpp"

namespace mrt {

struct SmoothConfig {
  double l_min = 0.2;
  double l_max = 0.8;
  double c = 5.0;
  double big_b = 20.0;
  double sigma_res = 0.95;

  double b() const { return big_b / sigma_res; }

  void validate() const {
    if (!(0.0 < l_min && l_min < l_max && l_max < 1.0)) {
      throw InputDomainError("smooth config requires 0 < l_min < l_max < 1");
    }
    if (!(c > 0.0)) throw InputDomainError("smooth config requires c > 0");
    if (!(big_b > 0.0)) throw InputDomainError("smooth config requires B > 0");
    if (!(sigma_res > 0.0)) throw InputDomainError("smooth config requires sigma_res > 0");
  }
};

inline double rho(double x, const SmoothConfig& cfg) {
  const double z = std::clamp(-cfg.b() * x, -700.0, 700.0);
  return cfg.l_min + (cfg.l_max - cfg.l_min) / (1.0 + cfg.c * std::exp(z));
}

inline constexpr int kHermiteNodes = 50;

namespace detail {

// Above this value of b * sd the logistic transition is narrower than the
// Hermite node spacing and the expectation is evaluated on the logistic
// side instead (see expected_rho).
inline constexpr double kHermiteSpreadLimit = 1.5;

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double logistic_pdf(double l) {
  const double e = std::exp(-std::abs(l));
  return e / ((1.0 + e) * (1.0 + e));
}

}  // namespace detail

/// E[rho(Z)] for Z ~ N(mean, var).
///
/// For moderate spread, 50-node Gauss-Hermite on Z. When b*sd is large the
/// identity E[sigmoid(a + s xi)] = E_L[Phi((a + L)/s)], L ~ Logistic(0,1),
/// turns the integrand smooth again and a trapezoid rule on L (analytic in
/// a strip of half-width pi, so geometrically convergent) is used.
inline double expected_rho(double mean, double var, const SmoothConfig& cfg) {
  if (var <= 0.0) return rho(mean, cfg);
  const double sd = std::sqrt(var);
  const double spread = cfg.b() * sd;
  double p;
  if (spread <= detail::kHermiteSpreadLimit) {
    const auto& gh = GaussHermite<kHermiteNodes>::instance();
    double acc = 0.0;
    for (int k = 0; k < kHermiteNodes; ++k) {
      acc += gh.weights[k] * rho(mean + std::numbers::sqrt2 * sd * gh.nodes[k], cfg);
    }
    p = acc / std::sqrt(std::numbers::pi);
  } else {
    const double a = cfg.b() * mean - std::log(cfg.c);
    constexpr double kHalfWidth = 40.0;
    constexpr double kStep = 0.25;
    constexpr int kSteps = static_cast<int>(2 * kHalfWidth / kStep);
    double acc = 0.0;
    for (int k = 0; k <= kSteps; ++k) {
      const double l = -kHalfWidth + k * kStep;
      const double w = (k == 0 || k == kSteps) ? 0.5 : 1.0;
      acc += w * detail::logistic_pdf(l) * detail::std_normal_cdf((a + l) / spread);
    }
    p = cfg.l_min + (cfg.l_max - cfg.l_min) * acc * kStep;
  }
  return std::clamp(p, cfg.l_min, cfg.l_max);
}

/// Randomization probability for advantage features f_s under the beta
/// marginal N(adv_mean, adv_cov).
inline double action_probability(const Vec& adv_mean, const Mat& adv_cov, const Vec& f_s,
                                 const SmoothConfig& cfg) {
  if (adv_mean.size() != f_s.size() || adv_cov.rows() != f_s.size() || adv_cov.cols() != f_s.size()) {
    throw InputDomainError("advantage dimensions disagree");
  }
  const double mean = f_s.dot(adv_mean);
  double var = f_s.dot(adv_cov * f_s);
  if (var < -1e-12) throw NumericalFailure("negative advantage variance", var);
  var = std::max(var, 0.0);
  return expected_rho(mean, var, cfg);
}

/// Bernoulli(pi) draw that depends only on the key.
inline int sample_action(double pi, RngKey key) {
  if (!(pi >= 0.0 && pi <= 1.0)) throw InputDomainError("probability outside [0,1]");
  return key.uniform() < pi ? 1 : 0;
}

}  // namespace mrt
