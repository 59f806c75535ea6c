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

#include "mrt/features.hpp"
#include "mrt/linalg.hpp"

namespace mrt {

/// Gaussian prior on the (population) parameter vector [alpha, beta, gamma].
struct PriorSpec {
  Vec mean;
  Mat cov;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Random-effects covariance (as its lower Cholesky factor) and noise
/// variance.
struct Hyperparams {
  Mat sigma_u_chol;
  double sigma_eps2 = 0.85;

  Mat sigma_u() const { return sigma_u_chol * sigma_u_chol.transpose(); }
  int dim() const { return static_cast<int>(sigma_u_chol.rows()); }

  bool valid() const {
    if (!(sigma_eps2 > 0.0) || !std::isfinite(sigma_eps2)) return false;
    for (int i = 0; i < sigma_u_chol.rows(); ++i) {
      if (!(sigma_u_chol(i, i) > 0.0)) return false;
      for (int j = i + 1; j < sigma_u_chol.cols(); ++j) {
        if (sigma_u_chol(i, j) != 0.0) return false;
      }
    }
    return true;
  }
};

inline constexpr double kInitialNoiseVariance = 0.85;
inline constexpr double kInitialRandomEffectSd = 0.1;

/// Sigma_u = (0.1)^2 I, sigma^2 = 0.85.
inline Hyperparams initial_hyperparams(int dim) {
  Hyperparams h;
  h.sigma_u_chol = kInitialRandomEffectSd * Mat::Identity(dim, dim);
  h.sigma_eps2 = kInitialNoiseVariance;
  return h;
}

namespace detail {
// Ordered as [1, S1, S2, S3, S1S2, S2S3, S1S3, S1S2S3].
inline constexpr std::array<double, 8> kBaselineMean = {2.12, 0.0, 0.0, -0.69, 0.0, 0.0, 0.0, 0.0};
inline constexpr std::array<double, 8> kBaselineSd = {0.78, 0.38, 0.62, 0.98, 0.16, 0.16, 0.1, 0.1};
inline constexpr std::array<double, 8> kAdvantageMean = {0, 0, 0, 0, 0, 0, 0, 0};
inline constexpr std::array<double, 8> kAdvantageSd = {0.27, 0.33, 0.3, 0.32, 0.1, 0.1, 0.1, 0.1};
}  // namespace detail

/// Informative prior for a feature variant. Beta and gamma share the
/// advantage block; blocks are independent a priori.
inline PriorSpec default_prior(FeatureVariant v) {
  const int dg = baseline_dim(v);
  const int df = advantage_dim(v);
  const int d = dg + 2 * df;
  PriorSpec p;
  p.mean = Vec::Zero(d);
  p.cov = Mat::Zero(d, d);
  for (int k = 0; k < dg; ++k) {
    p.mean(k) = detail::kBaselineMean[k];
    p.cov(k, k) = detail::kBaselineSd[k] * detail::kBaselineSd[k];
  }
  for (int k = 0; k < df; ++k) {
    for (int block : {dg, dg + df}) {
      p.mean(block + k) = detail::kAdvantageMean[k];
      p.cov(block + k, block + k) = detail::kAdvantageSd[k] * detail::kAdvantageSd[k];
    }
  }
  return p;
}

}  // namespace mrt
