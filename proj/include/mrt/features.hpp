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

// State construction and the action-centered design map
//
//   phi(S, a, pi) = [ g(S), (a - pi) f(S), pi f(S) ]
//
// Feature order is fixed: [1, S1, S2, S3, S1S2, S2S3, S1S3, S1S2S3], with
// the one-way variants keeping the leading four entries. Posterior blocks
// and prior tables depend on this order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "mrt/error.hpp"
#include "mrt/linalg.hpp"

namespace mrt {

struct State {
  int s1 = 0;  // recent engagement: mean of recent rewards >= 2
  int s2 = 0;  // time of day: 0 morning, 1 evening
  int s3 = 1;  // recent cannabis use: 1 = none reported

  static constexpr State initial() { return State{0, 0, 1}; }

  bool valid() const {
    auto bin = [](int v) { return v == 0 || v == 1; };
    return bin(s1) && bin(s2) && bin(s3);
  }

  friend constexpr bool operator==(const State&, const State&) = default;
};

enum class FeatureVariant {
  kFull,                // V0: all interactions in baseline and advantage
  kOneWay,              // V1: one-way terms in both
  kInterceptAdvantage,  // V2: one-way baseline, intercept-only advantage
};

constexpr int variant_index(FeatureVariant v) { return static_cast<int>(v); }

inline FeatureVariant variant_from_index(int i) {
  switch (i) {
    case 0: return FeatureVariant::kFull;
    case 1: return FeatureVariant::kOneWay;
    case 2: return FeatureVariant::kInterceptAdvantage;
  }
  throw InputDomainError("feature variant must be 0, 1 or 2, got " + std::to_string(i));
}

constexpr int baseline_dim(FeatureVariant v) { return v == FeatureVariant::kFull ? 8 : 4; }

constexpr int advantage_dim(FeatureVariant v) {
  switch (v) {
    case FeatureVariant::kFull: return 8;
    case FeatureVariant::kOneWay: return 4;
    case FeatureVariant::kInterceptAdvantage: return 1;
  }
  return 0;
}

constexpr int design_dim(FeatureVariant v) { return baseline_dim(v) + 2 * advantage_dim(v); }

/// Offset of the centered-advantage (beta) block inside a design row.
constexpr int advantage_offset(FeatureVariant v) { return baseline_dim(v); }

inline constexpr int kDefaultRewardWindow = 3;     // X
inline constexpr int kDefaultCannabisWindow = 1;   // Y

/// Engagement bit. Averages the last min(window, n) rewards; with no rewards
/// yet (first decision point) returns 0, the initial-state value.
inline int compute_s1(std::span<const int> reward_history, int window = kDefaultRewardWindow) {
  if (window < 1) throw InputDomainError("reward window must be >= 1");
  for (int r : reward_history) {
    if (r < 0 || r > 3) {
      throw InputDomainError("reward " + std::to_string(r) + " outside {0,1,2,3}");
    }
  }
  const std::size_t n = std::min<std::size_t>(reward_history.size(), static_cast<std::size_t>(window));
  if (n == 0) return 0;
  int sum = 0;
  for (std::size_t i = reward_history.size() - n; i < reward_history.size(); ++i) {
    sum += reward_history[i];
  }
  return sum >= 2 * static_cast<int>(n) ? 1 : 0;
}

/// Cannabis bit: 0 when the mean of the last min(window, n) reports is
/// positive, otherwise 1. An empty history gives 1.
inline int compute_s3(std::span<const double> cannabis_history, int window = kDefaultCannabisWindow) {
  if (window < 1) throw InputDomainError("cannabis window must be >= 1");
  for (double g : cannabis_history) {
    if (!(g >= 0.0) || !std::isfinite(g)) {
      throw InputDomainError("cannabis use must be a non-negative number of grams");
    }
  }
  const std::size_t n = std::min<std::size_t>(cannabis_history.size(), static_cast<std::size_t>(window));
  if (n == 0) return 1;
  double sum = 0.0;
  for (std::size_t i = cannabis_history.size() - n; i < cannabis_history.size(); ++i) {
    sum += cannabis_history[i];
  }
  return sum / static_cast<double>(n) > 0.0 ? 0 : 1;
}

namespace detail {
inline Vec full_interactions(const State& s) {
  Vec v(8);
  v << 1.0, s.s1, s.s2, s.s3, s.s1 * s.s2, s.s2 * s.s3, s.s1 * s.s3, s.s1 * s.s2 * s.s3;
  return v;
}
}  // namespace detail

inline Vec baseline_features(const State& s, FeatureVariant v) {
  Vec full = detail::full_interactions(s);
  return full.head(baseline_dim(v));
}

inline Vec advantage_features(const State& s, FeatureVariant v) {
  Vec full = detail::full_interactions(s);
  return full.head(advantage_dim(v));
}

struct DesignRow {
  Vec phi;
  double pi = 0.0;
  int action = 0;
};

inline DesignRow design_row(const State& s, int action, double pi, FeatureVariant v) {
  if (!(pi >= 0.0 && pi <= 1.0)) {
    throw InputDomainError("probability outside [0,1]");
  }
  if (action != 0 && action != 1) throw InputDomainError("action must be 0 or 1");
  if (!s.valid()) throw InputDomainError("state fields must be binary");
  const int dg = baseline_dim(v);
  const int df = advantage_dim(v);
  const Vec g = baseline_features(s, v);
  const Vec f = advantage_features(s, v);
  DesignRow row;
  row.pi = pi;
  row.action = action;
  row.phi.resize(dg + 2 * df);
  row.phi.head(dg) = g;
  row.phi.segment(dg, df) = (static_cast<double>(action) - pi) * f;
  row.phi.tail(df) = pi * f;
  return row;
}

inline std::string_view variant_name(FeatureVariant v) {
  switch (v) {
    case FeatureVariant::kFull: return "0";
    case FeatureVariant::kOneWay: return "1";
    case FeatureVariant::kInterceptAdvantage: return "2";
  }
  return "?";
}

}  // namespace mrt
