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

// Declarative run configuration (JSON, schema_version 1). Unknown keys are
// rejected; errors name the offending field.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrt/empirical_bayes.hpp"
#include "mrt/sim.hpp"

namespace mrt {

inline constexpr int kConfigSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TrialLogFormat { kCsv, kJsonl };

struct RunConfig {
  std::vector<EnvironmentConfig> environments;
  std::vector<AlgorithmConfig> algorithms;
  int k_trials = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  TrialLogFormat format = TrialLogFormat::kCsv;
  EmpiricalBayesOptions optimizer;
  std::string fixture;  // empty: the bundled fixture
  nlohmann::json source;  // parsed document, for hashing
};

namespace detail {

using nlohmann::json;

inline void line_column(const std::string& text, std::size_t byte, std::size_t& line, std::size_t& col) {
  line = 1;
  col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
}

class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_.empty() ? "document" : path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
    throw ConfigError("field '" + field + "': " + msg);
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void allow(std::initializer_list<const char*> keys) const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) fail(name(it.key()), "unknown key");
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& at(const char* key) const { return obj_.at(key); }

  std::string str(const char* key, std::string def) const {
    if (!has(key)) return def;
    if (!at(key).is_string()) fail(name(key), "expected a string");
    return at(key).get<std::string>();
  }
  bool boolean(const char* key, bool def) const {
    if (!has(key)) return def;
    if (!at(key).is_boolean()) fail(name(key), "expected true or false");
    return at(key).get<bool>();
  }
  long long integer(const char* key, long long def, long long lo, long long hi) const {
    if (!has(key)) return def;
    const json& v = at(key);
    if (!v.is_number_integer()) fail(name(key), "expected an integer");
    const long long x = v.get<long long>();
    if (x < lo || x > hi) fail(name(key), "value " + std::to_string(x) + " out of range");
    return x;
  }
  std::uint64_t uinteger(const char* key, std::uint64_t def) const {
    if (!has(key)) return def;
    const json& v = at(key);
    if (!v.is_number_unsigned()) fail(name(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  double number(const char* key, double def) const {
    if (!has(key)) return def;
    if (!at(key).is_number()) fail(name(key), "expected a number");
    return at(key).get<double>();
  }

 private:
  const json& obj_;
  std::string path_;
};

inline EnvironmentConfig parse_environment(const json& j, const std::string& path) {
  Fields f(j, path);
  f.allow({"effect", "differential", "decay", "participants", "horizon"});
  EnvironmentConfig e;
  const std::string effect = f.str("effect", "minimal");
  const auto pe = parse_effect(effect);
  if (!pe) Fields::fail(f.name("effect"), "unknown value '" + effect + "' (expected minimal, low or high)");
  e.effect = *pe;
  const std::string diff = f.str("differential", "none");
  const auto pd = parse_differential(diff);
  if (!pd) {
    Fields::fail(f.name("differential"),
                 "unknown value '" + diff + "' (expected none, low_am_high_pm or high_am_low_pm)");
  }
  e.differential = *pd;
  e.decay = f.boolean("decay", false);
  e.participants = static_cast<int>(f.integer("participants", 120, 1, 100000));
  e.horizon = static_cast<int>(f.integer("horizon", 60, 2, 100000));
  if (e.horizon % 2 != 0) Fields::fail(f.name("horizon"), "must be even (two decision points per day)");
  return e;
}

inline AlgorithmConfig parse_algorithm(const json& j, const std::string& path, const SmoothConfig& smooth) {
  Fields f(j, path);
  f.allow({"model", "variant", "B", "posterior_cadence", "hyper_cadence", "reward_window", "cannabis_window",
           "fixed_pi"});
  AlgorithmConfig a;
  a.smooth = smooth;
  const std::string model = f.str("model", "mixed");
  const auto pm = parse_reward_model(model);
  if (!pm) Fields::fail(f.name("model"), "unknown value '" + model + "' (expected pooled or mixed)");
  a.model = *pm;
  a.variant = variant_from_index(static_cast<int>(f.integer("variant", 0, 0, 2)));
  a.smooth.big_b = f.number("B", smooth.big_b);
  if (!(a.smooth.big_b > 0.0)) Fields::fail(f.name("B"), "must be positive");
  for (const char* key : {"posterior_cadence", "hyper_cadence"}) {
    const std::string c = f.str(key, key[0] == 'p' ? "daily" : "weekly");
    const auto pc = parse_cadence(c);
    if (!pc) Fields::fail(f.name(key), "unknown value '" + c + "' (expected daily or weekly)");
    (key[0] == 'p' ? a.posterior_cadence : a.hyper_cadence) = *pc;
  }
  a.reward_window = static_cast<int>(f.integer("reward_window", kDefaultRewardWindow, 1, 1000));
  a.cannabis_window = static_cast<int>(f.integer("cannabis_window", kDefaultCannabisWindow, 1, 1000));
  if (f.has("fixed_pi")) {
    const double p = f.number("fixed_pi", 0.5);
    if (!(p >= 0.0 && p <= 1.0)) Fields::fail(f.name("fixed_pi"), "must lie in [0, 1]");
    a.fixed_pi = p;
  }
  return a;
}

}  // namespace detail

/// Parses a configuration document. Syntax errors report line and column;
/// semantic errors name the field.
inline RunConfig parse_run_config(const std::string& text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line, col;
    detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0, line, col);
    throw ConfigError("syntax error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                      e.what());
  }
  detail::Fields f(doc, "");
  f.allow({"schema_version", "environment", "environments", "algorithms", "k_trials", "seed", "output_dir", "format",
           "smooth", "optimizer", "fixture"});
  if (!f.has("schema_version")) detail::Fields::fail("schema_version", "missing");
  if (f.integer("schema_version", 0, 0, 1000000) != kConfigSchemaVersion) {
    detail::Fields::fail("schema_version", "unsupported (expected " + std::to_string(kConfigSchemaVersion) + ")");
  }

  RunConfig cfg;
  cfg.source = doc;

  if (f.has("environment") == f.has("environments")) {
    detail::Fields::fail("environment", "exactly one of 'environment' or 'environments' is required");
  }
  if (f.has("environment")) {
    cfg.environments.push_back(detail::parse_environment(f.at("environment"), "environment"));
  } else {
    const json& envs = f.at("environments");
    if (envs.is_string()) {
      if (envs.get<std::string>() != "all") detail::Fields::fail("environments", "expected an array or \"all\"");
      cfg.environments = standard_environments();
    } else if (envs.is_object()) {
      // {"all": {participants, horizon}}: the nine variants at a given size.
      detail::Fields all(envs, "environments");
      all.allow({"all"});
      if (!all.has("all")) detail::Fields::fail("environments", "expected an array, \"all\" or {\"all\": {...}}");
      detail::Fields sz(all.at("all"), "environments.all");
      sz.allow({"participants", "horizon"});
      cfg.environments = standard_environments(static_cast<int>(sz.integer("participants", 120, 1, 100000)));
      const int h = static_cast<int>(sz.integer("horizon", 60, 2, 100000));
      if (h % 2 != 0) detail::Fields::fail("environments.all.horizon", "must be even");
      for (auto& e : cfg.environments) e.horizon = h;
    } else if (envs.is_array() && !envs.empty()) {
      for (std::size_t i = 0; i < envs.size(); ++i) {
        cfg.environments.push_back(detail::parse_environment(envs[i], "environments[" + std::to_string(i) + "]"));
      }
    } else {
      detail::Fields::fail("environments", "expected a non-empty array, \"all\" or {\"all\": {...}}");
    }
  }

  SmoothConfig smooth;
  if (f.has("smooth")) {
    detail::Fields s(f.at("smooth"), "smooth");
    s.allow({"l_min", "l_max", "c", "B", "sigma_res"});
    smooth.l_min = s.number("l_min", smooth.l_min);
    smooth.l_max = s.number("l_max", smooth.l_max);
    smooth.c = s.number("c", smooth.c);
    smooth.big_b = s.number("B", smooth.big_b);
    smooth.sigma_res = s.number("sigma_res", smooth.sigma_res);
    try {
      smooth.validate();
    } catch (const InputDomainError& e) {
      detail::Fields::fail("smooth", e.what());
    }
  }

  if (!f.has("algorithms")) detail::Fields::fail("algorithms", "missing");
  const json& algs = f.at("algorithms");
  if (algs.is_string()) {
    if (algs.get<std::string>() != "table24") detail::Fields::fail("algorithms", "expected an array or \"table24\"");
    cfg.algorithms = table_algorithms();
    for (auto& a : cfg.algorithms) {
      const double b = a.smooth.big_b;
      a.smooth = smooth;
      a.smooth.big_b = b;
    }
  } else if (algs.is_array() && !algs.empty()) {
    for (std::size_t i = 0; i < algs.size(); ++i) {
      cfg.algorithms.push_back(detail::parse_algorithm(algs[i], "algorithms[" + std::to_string(i) + "]", smooth));
    }
  } else {
    detail::Fields::fail("algorithms", "expected a non-empty array or \"table24\"");
  }

  cfg.k_trials = static_cast<int>(f.integer("k_trials", 1, 1, 1000000));
  cfg.seed = f.uinteger("seed", 0);
  cfg.output_dir = f.str("output_dir", "out");
  if (cfg.output_dir.empty()) detail::Fields::fail("output_dir", "must not be empty");
  const std::string fmt = f.str("format", "csv");
  if (fmt == "csv") {
    cfg.format = TrialLogFormat::kCsv;
  } else if (fmt == "jsonl") {
    cfg.format = TrialLogFormat::kJsonl;
  } else {
    detail::Fields::fail("format", "unknown value '" + fmt + "' (expected csv or jsonl)");
  }
  if (f.has("optimizer")) {
    detail::Fields o(f.at("optimizer"), "optimizer");
    o.allow({"max_evaluations", "tolerance"});
    cfg.optimizer.max_evaluations = static_cast<int>(o.integer("max_evaluations", 500, 1, 10000000));
    cfg.optimizer.tolerance = o.number("tolerance", 1e-6);
    if (!(cfg.optimizer.tolerance > 0.0)) detail::Fields::fail("optimizer.tolerance", "must be positive");
  }
  cfg.fixture = f.str("fixture", "");
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

/// 64-bit FNV-1a, used for manifest hashes.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char b[17];
  std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(v));
  return b;
}

/// Hash of the canonical (sorted-key, compact) form of the document.
inline std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a64(cfg.source.dump())); }

}  // namespace mrt
