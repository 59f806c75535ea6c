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

#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>

#include "mrt/allocation.hpp"

namespace mrt {
namespace {

// Adaptive Gauss-Kronrod on the normal density times rho, split at the
// logistic midpoint so narrow transitions are resolved.
double expected_rho_oracle(double mean, double sd, const SmoothConfig& cfg) {
  using boost::math::quadrature::gauss_kronrod;
  auto f = [&](double x) {
    const double z = (x - mean) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi)) * rho(x, cfg);
  };
  const double mid = std::log(cfg.c) / cfg.b();
  const double lo = mean - 14.0 * sd, hi = mean + 14.0 * sd;
  double total = 0.0;
  if (mid <= lo || mid >= hi) return gauss_kronrod<double, 61>::integrate(f, lo, hi, 20, 1e-14);
  const double eps = 5.0 / cfg.b();
  const double cuts[] = {lo, std::max(lo, mid - eps), mid, std::min(hi, mid + eps), hi};
  for (int k = 0; k < 4; ++k) {
    if (cuts[k + 1] > cuts[k]) total += gauss_kronrod<double, 61>::integrate(f, cuts[k], cuts[k + 1], 20, 1e-14);
  }
  return total;
}

TEST(Rho, AnchorValues) {
  const SmoothConfig cfg;
  EXPECT_NEAR(rho(0.0, cfg), 0.3, 1e-15);
  EXPECT_NEAR(cfg.b(), 21.0526315789, 1e-9);
  EXPECT_NEAR(rho(10.0, cfg), 0.8, 1e-12);
  EXPECT_NEAR(rho(-10.0, cfg), 0.2, 1e-12);
  EXPECT_NEAR(rho(std::log(cfg.c) / cfg.b(), cfg), 0.5, 1e-14);
  EXPECT_EQ(rho(1e6, cfg), 0.8);
  EXPECT_EQ(rho(-1e6, cfg), 0.2);
}

TEST(Rho, ConfigValidation) {
  SmoothConfig cfg;
  cfg.l_min = 0.9;
  EXPECT_THROW(cfg.validate(), InputDomainError);
  cfg = {};
  cfg.c = 0.0;
  EXPECT_THROW(cfg.validate(), InputDomainError);
  cfg = {};
  cfg.big_b = -1.0;
  EXPECT_THROW(cfg.validate(), InputDomainError);
  EXPECT_NO_THROW(SmoothConfig{}.validate());
}

TEST(ExpectedRho, ZeroVarianceIsPointEvaluation) {
  const SmoothConfig cfg;
  for (double m : {-0.5, -0.05, 0.0, 0.077, 0.4}) EXPECT_EQ(expected_rho(m, 0.0, cfg), rho(m, cfg));
}

TEST(ExpectedRho, MatchesAdaptiveQuadrature) {
  for (double big_b : {10.0, 20.0}) {
    SmoothConfig cfg;
    cfg.big_b = big_b;
    for (double mean : {-1.0, -0.3, -0.05, 0.0, 0.03, 0.0764, 0.2, 0.6, 1.5}) {
      for (double sd : {1e-4, 0.01, 0.05, 0.0712, 0.1, 0.3, 1.0, 3.0}) {
        const double got = expected_rho(mean, sd * sd, cfg);
        const double want = expected_rho_oracle(mean, sd, cfg);
        EXPECT_NEAR(got, want, 1e-9) << "B=" << big_b << " mean=" << mean << " sd=" << sd;
      }
    }
  }
}

TEST(ExpectedRho, MatchesMonteCarlo) {
  const SmoothConfig cfg;
  KeyedStream rng(RngKey(8).with(Stream::kTest));
  for (auto [mean, sd] : {std::pair{0.05, 0.1}, std::pair{-0.1, 0.5}, std::pair{0.3, 0.02}}) {
    constexpr int kDraws = 2'000'000;
    double acc = 0.0;
    for (int k = 0; k < kDraws; ++k) acc += rho(rng.normal(mean, sd), cfg);
    EXPECT_NEAR(expected_rho(mean, sd * sd, cfg), acc / kDraws, 1e-3);
  }
}

TEST(ExpectedRho, StaysInsideBounds) {
  const SmoothConfig cfg;
  for (double mean = -5.0; mean <= 5.0; mean += 0.37)
    for (double var : {0.0, 1e-8, 0.01, 1.0, 100.0}) {
      const double p = expected_rho(mean, var, cfg);
      EXPECT_GE(p, cfg.l_min);
      EXPECT_LE(p, cfg.l_max);
    }
}

TEST(ExpectedRho, MonotoneInMean) {
  const SmoothConfig cfg;
  for (double var : {0.0001, 0.005, 0.05, 1.0}) {
    double prev = 0.0;
    for (double mean = -1.0; mean <= 1.0; mean += 0.01) {
      const double p = expected_rho(mean, var, cfg);
      EXPECT_GE(p, prev - 1e-15);
      prev = p;
    }
  }
}

TEST(ExpectedRho, LargerBIsMoreDecisive) {
  SmoothConfig b10, b20;
  b10.big_b = 10.0;
  b20.big_b = 20.0;
  for (double var : {0.0, 0.001, 0.01}) {
    EXPECT_GE(expected_rho(0.4, var, b20), expected_rho(0.4, var, b10));
    EXPECT_LE(expected_rho(-0.2, var, b20), expected_rho(-0.2, var, b10));
  }
}

TEST(ActionProbability, UsesAdvantageContrast) {
  const SmoothConfig cfg;
  Vec mean(2);
  mean << 0.1, -0.02;
  Mat cov(2, 2);
  cov << 0.02, 0.005, 0.005, 0.01;
  Vec f(2);
  f << 1.0, 1.0;
  EXPECT_DOUBLE_EQ(action_probability(mean, cov, f, cfg), expected_rho(0.08, 0.04, cfg));
  EXPECT_THROW(action_probability(mean, cov, Vec::Ones(3), cfg), InputDomainError);
  EXPECT_THROW(action_probability(mean, -cov, f, cfg), NumericalFailure);
}

TEST(SampleAction, DeterministicPerKey) {
  const RngKey key = RngKey(3).with(Stream::kAction).with({4, 5});
  EXPECT_EQ(sample_action(0.5, key), sample_action(0.5, key));
  EXPECT_EQ(sample_action(0.0, key), 0);
  EXPECT_EQ(sample_action(1.0, key), 1);
  EXPECT_THROW(sample_action(1.5, key), InputDomainError);
  EXPECT_THROW(sample_action(std::nan(""), key), InputDomainError);
}

TEST(SampleAction, FrequencyMatchesProbability) {
  for (double pi : {0.2, 0.37, 0.8}) {
    constexpr int kDraws = 200'000;
    int ones = 0;
    for (int k = 0; k < kDraws; ++k) ones += sample_action(pi, RngKey(11).with(static_cast<std::uint64_t>(k)));
    EXPECT_NEAR(static_cast<double>(ones) / kDraws, pi, 0.005);
  }
}

TEST(GaussHermite, IntegratesPolynomialsExactly) {
  const auto& gh = GaussHermite<kHermiteNodes>::instance();
  double w = 0.0, x2 = 0.0, x4 = 0.0;
  for (int k = 0; k < kHermiteNodes; ++k) {
    w += gh.weights[k];
    x2 += gh.weights[k] * gh.nodes[k] * gh.nodes[k];
    x4 += gh.weights[k] * std::pow(gh.nodes[k], 4);
  }
  const double sp = std::sqrt(std::numbers::pi);
  EXPECT_NEAR(w, sp, 1e-13);
  EXPECT_NEAR(x2, sp / 2.0, 1e-13);
  EXPECT_NEAR(x4, 3.0 * sp / 4.0, 1e-12);
}

}  // namespace
}  // namespace mrt
