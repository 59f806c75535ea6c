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

// Synthetic base population for the simulation testbed.
//
// Each base participant carries a 4-class multinomial-logistic reward model
// and the parameters needed to generate its covariate trace. Coefficients
// are drawn once from the Gaussians documented in base_population_spec()
// and committed as a versioned text fixture (data/base_population_v1.txt),
// so every simulation reads the same population.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mrt/error.hpp"
#include "mrt/rng.hpp"

namespace mrt {

/// Columns of the participant-model design: baseline covariates, then the
/// action term and action interactions.
enum ModelColumn : int {
  kColIntercept = 0,
  kColDay,
  kColCannabis,
  kColApp,
  kColSurvey,
  kColWeekend,
  kColAction,  // advantage intercept
  kColActionDay,
  kColActionCannabis,
  kColActionApp,
  kColActionSurvey,
  kColActionWeekend,
  kModelColumns,
};

inline constexpr int kRewardClasses = 4;
inline constexpr int kBasePopulationSize = 42;

using ModelCoeffs = Eigen::Matrix<double, kRewardClasses, kModelColumns>;

inline constexpr std::array<const char*, kModelColumns> kModelColumnNames = {
    "intercept",  "day_norm",        "cannabis_norm",        "app_norm",
    "survey",     "weekend",         "action",               "action_x_day_norm",
    "action_x_cannabis_norm", "action_x_app_norm", "action_x_survey", "action_x_weekend"};

struct BaseParticipant {
  ModelCoeffs coeffs = ModelCoeffs::Zero();
  double survey_prob = 0.7;
  double cannabis_use_prob = 0.6;
  std::array<double, 7> cannabis_dow_mean{};  // daily grams, Monday first
  std::vector<double> app_usage;               // empirical evening values, seconds
};

struct BasePopulation {
  std::vector<BaseParticipant> participants;
};

/// Gaussian (mean, sd) used for one coefficient of one class.
struct CoeffPrior {
  double mean = 0.0;
  double sd = 0.0;
};

/// The documented generating distribution of the fixture. Class 0 is the
/// reference class for baseline columns (fixed at zero); the advantage
/// intercept is drawn for every class. Action interactions are zero.
struct BasePopulationSpec {
  std::array<std::array<CoeffPrior, kModelColumns>, kRewardClasses> coeff{};
  CoeffPrior survey_prob{0.70, 0.15};
  CoeffPrior cannabis_use_prob{0.65, 0.20};
  CoeffPrior cannabis_level{1.0, 0.4};     // participant mean daily grams
  double cannabis_dow_sd = 0.3;            // day-of-week spread around it
  double app_mean_low = 100.0;             // participant app mean ~ U(low, high)
  double app_mean_high = 500.0;
  double app_sd = 120.0;
  int app_values = 30;
};

inline BasePopulationSpec base_population_spec() {
  BasePopulationSpec s;
  // {intercept, day, cannabis, app, survey, weekend}, classes 1..3
  const std::array<std::array<CoeffPrior, 6>, 3> baseline = {{
      {{{-0.6, 0.5}, {-0.2, 0.3}, {-0.1, 0.3}, {0.8, 0.4}, {0.5, 0.4}, {-0.1, 0.2}}},
      {{{-0.4, 0.6}, {-0.2, 0.3}, {-0.1, 0.3}, {1.0, 0.4}, {2.5, 0.5}, {-0.1, 0.2}}},
      {{{-0.4, 0.6}, {-0.2, 0.3}, {-0.1, 0.3}, {1.2, 0.4}, {2.7, 0.5}, {-0.1, 0.2}}},
  }};
  for (int c = 1; c < kRewardClasses; ++c)
    for (int k = 0; k < 6; ++k) s.coeff[c][k] = baseline[c - 1][k];
  // Advantage intercepts rise with the class on average but vary widely
  // between participants, so some respond negatively. A multiplier of 1
  // after the class-0/class-2,3 reshaping gives an effect size near 0.17.
  const std::array<double, kRewardClasses> action_mean = {0.0, 0.8, 1.2, 1.4};
  for (int c = 0; c < kRewardClasses; ++c) s.coeff[c][kColAction] = {action_mean[c], 0.6};
  return s;
}

inline constexpr std::uint64_t kFixtureSeed = 20240229;

inline BasePopulation generate_base_population(std::uint64_t seed = kFixtureSeed,
                                               const BasePopulationSpec& spec = base_population_spec()) {
  BasePopulation pop;
  const RngKey root = RngKey(seed).with(Stream::kFixture);
  auto clamp = [](double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); };
  for (int i = 0; i < kBasePopulationSize; ++i) {
    KeyedStream rng(root.with(static_cast<std::uint64_t>(i)));
    BaseParticipant p;
    for (int c = 0; c < kRewardClasses; ++c)
      for (int k = 0; k < kModelColumns; ++k) {
        const auto& g = spec.coeff[c][k];
        p.coeffs(c, k) = g.sd > 0 ? rng.normal(g.mean, g.sd) : g.mean;
      }
    p.survey_prob = clamp(rng.normal(spec.survey_prob.mean, spec.survey_prob.sd), 0.2, 0.98);
    p.cannabis_use_prob = clamp(rng.normal(spec.cannabis_use_prob.mean, spec.cannabis_use_prob.sd), 0.05, 1.0);
    const double level = clamp(rng.normal(spec.cannabis_level.mean, spec.cannabis_level.sd), 0.1, 2.5);
    for (auto& v : p.cannabis_dow_mean) v = clamp(rng.normal(level, spec.cannabis_dow_sd), 0.0, 2.5);
    const double app_mean = spec.app_mean_low + (spec.app_mean_high - spec.app_mean_low) * rng.uniform();
    p.app_usage.resize(spec.app_values);
    for (auto& v : p.app_usage) v = clamp(rng.normal(app_mean, spec.app_sd), 0.0, 700.0);
    pop.participants.push_back(std::move(p));
  }
  return pop;
}

// ---------------------------------------------------------------------------
// Fixture text format

inline constexpr const char* kFixtureMagic = "mrt-base-population";
inline constexpr int kFixtureFormatVersion = 1;

inline std::string serialize_base_population(const BasePopulation& pop) {
  std::string out;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    out += buf;
  };
  out += std::string(kFixtureMagic) + " v" + std::to_string(kFixtureFormatVersion) + "\n";
  out += "participants " + std::to_string(pop.participants.size()) + "\n";
  out += "columns";
  for (const char* c : kModelColumnNames) out += std::string(" ") + c;
  out += "\n";
  for (std::size_t i = 0; i < pop.participants.size(); ++i) {
    const auto& p = pop.participants[i];
    out += "participant " + std::to_string(i) + "\n";
    for (int c = 0; c < kRewardClasses; ++c) {
      out += "class" + std::to_string(c);
      for (int k = 0; k < kModelColumns; ++k) num(p.coeffs(c, k));
      out += "\n";
    }
    out += "survey_prob";
    num(p.survey_prob);
    out += "\ncannabis_use_prob";
    num(p.cannabis_use_prob);
    out += "\ncannabis_dow_mean";
    for (double v : p.cannabis_dow_mean) num(v);
    out += "\napp_usage " + std::to_string(p.app_usage.size());
    for (double v : p.app_usage) num(v);
    out += "\nend\n";
  }
  return out;
}

inline BasePopulation parse_base_population(const std::string& text) {
  std::istringstream in(text);
  std::string tok;
  auto expect = [&](const std::string& want) {
    if (!(in >> tok) || tok != want) {
      throw InputDomainError("fixture: expected '" + want + "', found '" + tok + "'");
    }
  };
  auto real = [&]() {
    double v;
    if (!(in >> v)) throw InputDomainError("fixture: expected number");
    return v;
  };
  auto integer = [&]() {
    long long v;
    if (!(in >> v)) throw InputDomainError("fixture: expected integer");
    return v;
  };
  expect(kFixtureMagic);
  expect("v" + std::to_string(kFixtureFormatVersion));
  expect("participants");
  const long long n = integer();
  if (n <= 0) throw InputDomainError("fixture: empty population");
  expect("columns");
  for (const char* c : kModelColumnNames) expect(c);
  BasePopulation pop;
  for (long long i = 0; i < n; ++i) {
    expect("participant");
    if (integer() != i) throw InputDomainError("fixture: participants out of order");
    BaseParticipant p;
    for (int c = 0; c < kRewardClasses; ++c) {
      expect("class" + std::to_string(c));
      for (int k = 0; k < kModelColumns; ++k) p.coeffs(c, k) = real();
    }
    expect("survey_prob");
    p.survey_prob = real();
    expect("cannabis_use_prob");
    p.cannabis_use_prob = real();
    expect("cannabis_dow_mean");
    for (auto& v : p.cannabis_dow_mean) v = real();
    expect("app_usage");
    const long long k = integer();
    if (k <= 0) throw InputDomainError("fixture: participant needs at least one app usage value");
    p.app_usage.resize(static_cast<std::size_t>(k));
    for (auto& v : p.app_usage) v = real();
    expect("end");
    pop.participants.push_back(std::move(p));
  }
  return pop;
}

inline BasePopulation load_base_population(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open fixture '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_base_population(ss.str());
}

#ifdef MRT_DATA_DIR
inline std::string default_fixture_path() { return std::string(MRT_DATA_DIR) + "/base_population_v1.txt"; }
#endif

}  // namespace mrt
