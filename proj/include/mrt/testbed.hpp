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

// Generative simulation environment: participants drawn with replacement
// from the base population, covariate traces, environment variants that
// rescale the advantage intercepts, and multinomial-logistic rewards.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/features.hpp"
#include "mrt/fixture.hpp"
#include "mrt/rng.hpp"

namespace mrt {

// ---------------------------------------------------------------------------
// Normalization

inline double normalize_day(double day) { return (day - 15.5) / 14.5; }
inline double denormalize_day(double v) { return v * 14.5 + 15.5; }
inline double normalize_app(double seconds) { return (seconds - 350.0) / 350.0; }
inline double denormalize_app(double v) { return v * 350.0 + 350.0; }
inline double normalize_cannabis(double grams) { return (grams - 1.3) / 1.35; }
inline double denormalize_cannabis(double v) { return v * 1.35 + 1.3; }

inline constexpr double kMorningCannabisShare = 0.33;
inline constexpr double kEveningCannabisShare = 0.67;
inline constexpr double kCannabisScale = 1.5;

// ---------------------------------------------------------------------------
// Environment configuration

enum class Effect { kMinimal, kLow, kHigh };
enum class Differential { kNone, kLowAmHighPm, kHighAmLowPm };

inline constexpr double kLowMultiplier = 0.7;
inline constexpr double kHighMultiplier = 2.5;

struct EnvironmentConfig {
  Effect effect = Effect::kMinimal;
  Differential differential = Differential::kNone;
  bool decay = false;
  int participants = 120;
  int horizon = 60;  // decision points; two per day
  std::uint64_t seed = 0;

  int days() const { return horizon / 2; }

  void validate() const {
    if (participants < 1) throw InputDomainError("environment.participants must be >= 1");
    if (horizon < 2 || horizon % 2 != 0) throw InputDomainError("environment.horizon must be a positive even number");
  }

  /// Whether base advantage intercepts are reshaped (class-0 minimum,
  /// classes 2 and 3 averaged) before the multiplier applies.
  bool transformed() const { return effect != Effect::kMinimal || differential != Differential::kNone; }
};

inline std::string effect_name(Effect e) {
  switch (e) {
    case Effect::kMinimal: return "minimal";
    case Effect::kLow: return "low";
    case Effect::kHigh: return "high";
  }
  return "?";
}

inline std::string differential_name(Differential d) {
  switch (d) {
    case Differential::kNone: return "none";
    case Differential::kLowAmHighPm: return "low_am_high_pm";
    case Differential::kHighAmLowPm: return "high_am_low_pm";
  }
  return "?";
}

inline std::optional<Effect> parse_effect(std::string_view s) {
  if (s == "minimal") return Effect::kMinimal;
  if (s == "low") return Effect::kLow;
  if (s == "high") return Effect::kHigh;
  return std::nullopt;
}

inline std::optional<Differential> parse_differential(std::string_view s) {
  if (s == "none") return Differential::kNone;
  if (s == "low_am_high_pm") return Differential::kLowAmHighPm;
  if (s == "high_am_low_pm") return Differential::kHighAmLowPm;
  return std::nullopt;
}

inline std::string environment_name(const EnvironmentConfig& cfg) {
  std::string n = cfg.differential == Differential::kNone ? effect_name(cfg.effect) : differential_name(cfg.differential);
  if (cfg.decay) n += "_decay";
  return n;
}

/// The nine environment variants.
inline std::vector<EnvironmentConfig> standard_environments(int participants = 120, std::uint64_t seed = 0) {
  std::vector<EnvironmentConfig> out;
  auto add = [&](Effect e, Differential d, bool decay) {
    EnvironmentConfig c;
    c.effect = e;
    c.differential = d;
    c.decay = decay;
    c.participants = participants;
    c.seed = seed;
    out.push_back(c);
  };
  add(Effect::kMinimal, Differential::kNone, false);
  add(Effect::kLow, Differential::kNone, false);
  add(Effect::kHigh, Differential::kNone, false);
  add(Effect::kLow, Differential::kLowAmHighPm, false);
  add(Effect::kHigh, Differential::kHighAmLowPm, false);
  add(Effect::kLow, Differential::kNone, true);
  add(Effect::kHigh, Differential::kNone, true);
  add(Effect::kLow, Differential::kLowAmHighPm, true);
  add(Effect::kHigh, Differential::kHighAmLowPm, true);
  return out;
}

constexpr bool is_evening(int t) { return t % 2 == 0; }
constexpr int day_of(int t) { return (t + 1) / 2; }

/// Multiplier on the advantage intercepts at decision index t (1-based).
inline double effective_multiplier(const EnvironmentConfig& cfg, int t) {
  double m = 1.0;
  switch (cfg.differential) {
    case Differential::kNone:
      m = cfg.effect == Effect::kLow ? kLowMultiplier : cfg.effect == Effect::kHigh ? kHighMultiplier : 1.0;
      break;
    case Differential::kLowAmHighPm:
      m = is_evening(t) ? kHighMultiplier : kLowMultiplier;
      break;
    case Differential::kHighAmLowPm:
      m = is_evening(t) ? kLowMultiplier : kHighMultiplier;
      break;
  }
  if (cfg.decay) {
    const double days = cfg.days();
    m *= (days - day_of(t)) / days;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Participant models and traces

struct ParticipantModel {
  ModelCoeffs coeffs = ModelCoeffs::Zero();
  int base_index = -1;
};

struct TraceRow {
  int t = 1;
  int day = 1;
  int time_of_day = 0;  // 0 morning, 1 evening
  double day_norm = 0.0;
  double cannabis = 0.0;  // grams since the previous decision point
  double cannabis_norm = 0.0;
  double app_usage = 0.0;  // seconds
  double app_norm = 0.0;
  int survey = 0;
  int weekend = 0;
};

using SyntheticTrace = std::vector<TraceRow>;

struct Population {
  std::vector<ParticipantModel> models;
  std::vector<SyntheticTrace> traces;
};

/// Moves the smallest advantage intercept to class 0 and sets classes 2 and
/// 3 to their average.
inline ModelCoeffs transform_advantage_intercepts(ModelCoeffs c) {
  auto col = c.col(kColAction);
  int arg = 0;
  for (int k = 1; k < kRewardClasses; ++k)
    if (col(k) < col(arg)) arg = k;
  std::swap(col(0), col(arg));
  const double avg = 0.5 * (col(2) + col(3));
  col(2) = avg;
  col(3) = avg;
  return c;
}

inline SyntheticTrace generate_trace(const BaseParticipant& base, RngKey key, int horizon) {
  KeyedStream rng(key);
  SyntheticTrace trace;
  trace.reserve(horizon);
  const int days = horizon / 2;
  for (int day = 1; day <= days; ++day) {
    const int dow = (day - 1) % 7;  // day 1 is a Monday
    const bool used = rng.bernoulli(base.cannabis_use_prob);
    const double daily = used ? base.cannabis_dow_mean[dow] : 0.0;
    for (int tod = 0; tod < 2; ++tod) {
      TraceRow r;
      r.t = 2 * day - 1 + tod;
      r.day = day;
      r.time_of_day = tod;
      r.day_norm = normalize_day(day);
      r.cannabis = daily * (tod == 0 ? kMorningCannabisShare : kEveningCannabisShare) * kCannabisScale;
      r.cannabis_norm = normalize_cannabis(r.cannabis);
      r.app_usage = base.app_usage[rng.below(base.app_usage.size())];
      r.app_norm = normalize_app(r.app_usage);
      r.survey = rng.bernoulli(base.survey_prob) ? 1 : 0;
      r.weekend = dow >= 5 ? 1 : 0;
      trace.push_back(r);
    }
  }
  return trace;
}

/// Draws cfg.participants models with replacement from the base population
/// and generates one trace per participant. Deterministic in cfg.seed.
inline Population generate_population(const EnvironmentConfig& cfg, const BasePopulation& base) {
  cfg.validate();
  if (base.participants.empty()) throw InputDomainError("empty base population");
  const RngKey root = RngKey(cfg.seed);
  KeyedStream pick(root.with(Stream::kPopulation));
  Population pop;
  pop.models.reserve(cfg.participants);
  pop.traces.reserve(cfg.participants);
  for (int i = 0; i < cfg.participants; ++i) {
    const auto idx = static_cast<int>(pick.below(base.participants.size()));
    ParticipantModel m;
    m.base_index = idx;
    m.coeffs = cfg.transformed() ? transform_advantage_intercepts(base.participants[idx].coeffs)
                                 : base.participants[idx].coeffs;
    pop.models.push_back(m);
    pop.traces.push_back(
        generate_trace(base.participants[idx], root.with(Stream::kTrace).with(static_cast<std::uint64_t>(i)), cfg.horizon));
  }
  return pop;
}

/// Model in effect at decision index t: advantage intercepts scaled by the
/// environment's multiplier (differential by time of day, linear decay).
inline ParticipantModel apply_environment(const ParticipantModel& model, const EnvironmentConfig& cfg, int t) {
  if (t < 1 || t > cfg.horizon) throw InputDomainError("decision index outside [1, horizon]");
  ParticipantModel out = model;
  out.coeffs.col(kColAction) *= effective_multiplier(cfg, t);
  return out;
}

inline Eigen::Matrix<double, kModelColumns, 1> model_features(const TraceRow& row, int action) {
  Eigen::Matrix<double, kModelColumns, 1> x;
  const double a = action;
  x << 1.0, row.day_norm, row.cannabis_norm, row.app_norm, row.survey, row.weekend, a, a * row.day_norm,
      a * row.cannabis_norm, a * row.app_norm, a * row.survey, a * row.weekend;
  return x;
}

inline std::array<double, kRewardClasses> class_probabilities(const ParticipantModel& model, const TraceRow& row,
                                                              int action) {
  const Eigen::Matrix<double, kRewardClasses, 1> logits = model.coeffs * model_features(row, action);
  const double mx = logits.maxCoeff();
  std::array<double, kRewardClasses> p{};
  double z = 0.0;
  for (int c = 0; c < kRewardClasses; ++c) {
    p[c] = std::exp(logits(c) - mx);
    z += p[c];
  }
  for (auto& v : p) v /= z;
  return p;
}

/// Reward class by inverse CDF on the key's uniform, so a fixed key couples
/// draws across actions and algorithm variants.
inline int generate_reward(const ParticipantModel& model, const TraceRow& row, int action, RngKey key) {
  if (action != 0 && action != 1) throw InputDomainError("action must be 0 or 1");
  const auto p = class_probabilities(model, row, action);
  const double u = key.uniform();
  double cum = 0.0;
  for (int c = 0; c < kRewardClasses - 1; ++c) {
    cum += p[c];
    if (u < cum) return c;
  }
  return kRewardClasses - 1;
}

struct NextObservation {
  int survey = 0;
  int app_usage_indicator = 0;
  int activity = 0;
};

inline NextObservation derive_next_observation(int reward) {
  if (reward < 0 || reward > 3) throw InputDomainError("reward outside {0,1,2,3}");
  return {reward >= 2 ? 1 : 0, reward >= 1 ? 1 : 0, reward == 3 ? 1 : 0};
}

// ---------------------------------------------------------------------------
// Standardized effect size

struct EffectSizeResult {
  double mean = 0.0;   // mean over datasets of (average advantage / reward sd)
  int datasets = 0;    // datasets used
  int skipped = 0;     // zero reward variance
};

/// Effect size of an advantage-intercept multiplier: K datasets, each with
/// every base participant once and actions at probability 0.5; a
/// least-squares fit of the fully interacted reward model gives fitted
/// advantages f(S)^T beta, averaged over observed rows and divided by the
/// sample sd of the rewards.
inline EffectSizeResult standardized_effect_size(double multiplier, const BasePopulation& base, int K,
                                                 std::uint64_t seed, bool transform = true, int horizon = 60) {
  if (K < 1) throw InputDomainError("K must be >= 1");
  EffectSizeResult res;
  const RngKey root = RngKey(seed).with(Stream::kEffectSize);
  const int n_base = static_cast<int>(base.participants.size());
  const int rows = n_base * horizon;
  Mat X(rows, 16);
  Vec y(rows);
  Mat F(rows, 8);
  double total = 0.0;
  for (int k = 0; k < K; ++k) {
    const RngKey ds = root.with(static_cast<std::uint64_t>(k));
    int r = 0;
    for (int j = 0; j < n_base; ++j) {
      const auto& bp = base.participants[j];
      ParticipantModel model;
      model.base_index = j;
      model.coeffs = transform ? transform_advantage_intercepts(bp.coeffs) : bp.coeffs;
      model.coeffs.col(kColAction) *= multiplier;
      const RngKey pk = ds.with(static_cast<std::uint64_t>(j));
      const SyntheticTrace trace = generate_trace(bp, pk.with(Stream::kTrace), horizon);
      std::vector<int> rewards;
      std::vector<double> cannabis;
      for (int t = 1; t <= horizon; ++t) {
        const TraceRow& row = trace[t - 1];
        State s{compute_s1(rewards), row.time_of_day, compute_s3(cannabis)};
        const int a = pk.with(Stream::kAction).with(static_cast<std::uint64_t>(t)).uniform() < 0.5 ? 1 : 0;
        const int reward = generate_reward(model, row, a, pk.with(Stream::kReward).with(static_cast<std::uint64_t>(t)));
        const Vec g = baseline_features(s, FeatureVariant::kFull);
        X.row(r).head(8) = g.transpose();
        X.row(r).tail(8) = static_cast<double>(a) * g.transpose();
        F.row(r) = g.transpose();
        y(r) = reward;
        ++r;
        rewards.push_back(reward);
        cannabis.push_back(row.cannabis);
      }
    }
    const double mean_r = y.mean();
    const double var_r = (y.array() - mean_r).square().sum() / (rows - 1);
    if (!(var_r > 0.0)) {
      ++res.skipped;
      continue;
    }
    const Vec coef = X.completeOrthogonalDecomposition().solve(y);
    const double avg_adv = (F * coef.tail(8)).mean();
    total += avg_adv / std::sqrt(var_r);
    ++res.datasets;
  }
  res.mean = res.datasets > 0 ? total / res.datasets : 0.0;
  return res;
}

}  // namespace mrt
