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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>

#include "mrt/mrt.hpp"
#include "mrt/service.hpp"
#include "oracles.hpp"

namespace {

using namespace mrt;
using oracle::max_abs;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char b[128];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

std::string fmt(const char* f, double a, double b) {
  char s[160];
  std::snprintf(s, sizeof s, f, a, b);
  return s;
}

const BasePopulation& fixture() {
  static const BasePopulation b = load_base_population(default_fixture_path());
  return b;
}

int worker_count() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// -- 1 ---------------------------------------------------------------------
Verdict allocation_constants() {
  const SmoothConfig cfg;
  const double r0 = rho(0.0, cfg);
  const double b = cfg.b();
  const bool ok = std::abs(r0 - 0.3) <= 1e-9 && std::abs(b - 21.053) < 5e-4;
  return {ok, fmt("rho(0)=%.12f", r0) + fmt(" b=%.6f", b)};
}

// -- 2 ---------------------------------------------------------------------
Verdict posterior_oracle() {
  double mixed_err = 0.0, pooled_err = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    const int m = 1 + seed % 3, d = 1 + (seed / 3) % 4, t = (seed / 12) % 5;
    const auto in = oracle::random_instance(1000 + seed, m, d, t);
    const auto want = oracle::condition_joint(in);
    const auto got = mixed_posterior_from_stats(oracle::stats_of(in), oracle::prior_of(in), oracle::hyper_of(in));
    mixed_err = std::max({mixed_err, max_abs(got.mean() - want.mean), max_abs(got.dense_covariance() - want.cov)});
    const auto conj = oracle::conjugate_update(in);
    const auto pooled = pooled_posterior_from_stats(oracle::pooled_stats_of(in), oracle::prior_of(in), in.sigma2);
    pooled_err = std::max({pooled_err, max_abs(pooled.participant_mean(0) - conj.mean),
                           max_abs(pooled.block(0, 0) - conj.cov)});
    ++n;
  }
  return {mixed_err <= 1e-8 && pooled_err <= 1e-10,
          std::to_string(n) + " instances" + fmt(", mixed max err %.2e", mixed_err) +
              fmt(", pooled max err %.2e", pooled_err)};
}

// -- 3 ---------------------------------------------------------------------
Verdict pooling_limit() {
  double err = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int m = 1 + seed % 3, d = 1 + seed % 4;
    auto in = oracle::random_instance(2000 + seed, m, d, 4);
    in.sigma_u = 1e-6 * Mat::Identity(d, d);
    const auto mixed = mixed_posterior_from_stats(oracle::stats_of(in), oracle::prior_of(in), oracle::hyper_of(in));
    const auto pooled = pooled_posterior_from_stats(oracle::pooled_stats_of(in), oracle::prior_of(in), in.sigma2);
    for (int i = 0; i < m; ++i) {
      const auto g = participant_marginal(mixed, i);
      err = std::max({err, max_abs(g.mean - pooled.participant_mean(0)), max_abs(g.cov - pooled.block(0, 0))});
    }
  }
  return {err <= 1e-3, fmt("20 instances, max err %.2e", err)};
}

// -- 4 ---------------------------------------------------------------------
Verdict marginal_likelihood_oracle() {
  double err = 0.0;
  int pairs = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const int m = 1 + seed % 3, d = 1 + (seed / 3) % 4;
    const int t = 1 + static_cast<int>(seed % (12 / m));
    auto a = oracle::random_instance(3000 + seed, m, d, t);
    auto b = oracle::random_instance(4000 + seed, m, d, 0);
    b.rows = a.rows;
    b.owner = a.owner;
    b.reward = a.reward;
    b.prior_mean = a.prior_mean;
    b.prior_cov = a.prior_cov;
    const double la = marginal_loglik_from_stats(oracle::stats_of(a), oracle::prior_of(a), oracle::hyper_of(a));
    const double lb = marginal_loglik_from_stats(oracle::stats_of(b), oracle::prior_of(b), oracle::hyper_of(b));
    const double dl = lb - la;
    const double dlog = oracle::marginal_log_density(b) - oracle::marginal_log_density(a);
    // l carries a factor of 2 relative to the log-density.
    err = std::max(err, std::abs(dl - 2.0 * dlog));
    ++pairs;
  }
  return {err <= 1e-6, std::to_string(pairs) + " pairs (m*t <= 12)" + fmt(", max |dl - 2 dlogpdf| %.2e", err)};
}

// -- 5 ---------------------------------------------------------------------
Verdict hyper_recovery() {
  constexpr int m = 20, t = 60, d = 4;
  constexpr double sigma2 = 0.85;
  KeyedStream rng(RngKey(20240305).with(Stream::kTest));
  std::vector<ParticipantStats> stats(m, ParticipantStats{Mat::Zero(d, d), Vec::Zero(d), 0.0, 0});
  Vec theta(d);
  for (int j = 0; j < d; ++j) theta(j) = rng.normal();
  for (int i = 0; i < m; ++i) {
    Vec u(d);
    for (int j = 0; j < d; ++j) u(j) = 0.1 * rng.normal();
    for (int k = 0; k < t; ++k) {
      Vec phi(d);
      phi(0) = 1.0;
      for (int j = 1; j < d; ++j) phi(j) = rng.normal();
      const double r = phi.dot(theta + u) + std::sqrt(sigma2) * rng.normal();
      stats[i].A += phi * phi.transpose();
      stats[i].B += r * phi;
      stats[i].rr += r * r;
      ++stats[i].n;
    }
  }
  const PriorSpec prior{Vec::Zero(d), Mat::Identity(d, d)};
  EmpiricalBayesOptions opt;
  opt.max_evaluations = 5000;
  opt.tolerance = 1e-10;
  const HyperUpdate u = optimize_hyperparams_from_stats(stats, prior, initial_hyperparams(d), opt);
  bool pd = u.hyper.valid() && min_eigenvalue(u.hyper.sigma_u()) > 0.0;
  try {
    check_stacked_prior(prior, u.hyper, m);
  } catch (const HyperparameterRejected&) {
    pd = false;
  }
  const double rel = std::abs(u.hyper.sigma_eps2 - sigma2) / sigma2;
  return {u.accepted && pd && rel <= 0.2,
          fmt("sigma^2=%.4f (rel err %.3f)", u.hyper.sigma_eps2, rel) + ", accepted=" + (u.accepted ? "yes" : "no") +
              ", PD=" + (pd ? "yes" : "no") + fmt(", max Sigma_u diag %.4f", u.hyper.sigma_u().diagonal().maxCoeff())};
}

// -- 6 ---------------------------------------------------------------------
Verdict quadrature_vs_monte_carlo() {
  const SmoothConfig cfg;
  KeyedStream rng(RngKey(6).with(Stream::kTest));
  double err = 0.0;
  for (double mean : {-0.2, -0.05, 0.0, 0.08, 0.3})
    for (double var : {1e-4, 1e-3, 0.005, 0.02, 0.1}) {
      Vec mu(1), f(1);
      mu << mean;
      f << 1.0;
      const double p = action_probability(mu, Mat::Constant(1, 1, var), f, cfg);
      constexpr int kDraws = 1'000'000;
      const double sd = std::sqrt(var);
      double acc = 0.0;
      for (int k = 0; k < kDraws; ++k) acc += rho(rng.normal(mean, sd), cfg);
      err = std::max(err, std::abs(p - acc / kDraws));
    }
  return {err <= 1e-3, fmt("5x5 grid, 1e6 draws each, max err %.2e", err)};
}

// -- 7, 8, 10 share one desk-scale grid -------------------------------------
struct DeskGrid {
  std::vector<GridRow> rows;
  double seconds = 0.0;
};

const DeskGrid& desk_grid() {
  static const DeskGrid g = [] {
    DeskGrid out;
    EnvironmentConfig env;
    env.effect = Effect::kHigh;
    env.participants = 30;
    std::vector<AlgorithmConfig> algs;
    for (auto m : {RewardModel::kPooled, RewardModel::kMixed})
      for (auto v : {FeatureVariant::kFull, FeatureVariant::kOneWay, FeatureVariant::kInterceptAdvantage})
        for (double b : {10.0, 20.0})
          for (auto pc : {Cadence::kDaily, Cadence::kWeekly}) {
            AlgorithmConfig a;
            a.model = m;
            a.variant = v;
            a.smooth.big_b = b;
            a.posterior_cadence = pc;
            a.hyper_cadence = Cadence::kWeekly;
            algs.push_back(a);
          }
    GridOptions opt;
    opt.jobs = worker_count();
    const auto t0 = std::chrono::steady_clock::now();
    out.rows = run_grid({env}, algs, 50, 2024, fixture(), opt);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }();
  return g;
}

double group_mean(const std::function<bool(const AlgorithmConfig&)>& in_group) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : desk_grid().rows)
    if (in_group(r.alg)) {
      s += r.avg.mean;
      ++n;
    }
  return s / n;
}

Verdict clipping() {
  long long count = 0, out = 0;
  double lo = 1.0, hi = 0.0;
  int aborted = 0;
  for (const auto& r : desk_grid().rows) {
    count += r.pi_count;
    out += r.pi_out_of_range;
    lo = std::min(lo, r.pi_min);
    hi = std::max(hi, r.pi_max);
    aborted += r.aborted;
  }
  return {out == 0 && count > 0 && aborted == 0,
          std::to_string(count) + " probabilities" + fmt(", range [%.4f, %.4f]", lo, hi) + ", " +
              std::to_string(out) + " outside, " + std::to_string(aborted) + " aborted trials"};
}

Verdict orderings() {
  const double b20 = group_mean([](const AlgorithmConfig& a) { return a.smooth.big_b == 20.0; });
  const double b10 = group_mean([](const AlgorithmConfig& a) { return a.smooth.big_b == 10.0; });
  const double mixed = group_mean([](const AlgorithmConfig& a) { return a.model == RewardModel::kMixed; });
  const double pooled = group_mean([](const AlgorithmConfig& a) { return a.model == RewardModel::kPooled; });
  const double daily = group_mean([](const AlgorithmConfig& a) { return a.posterior_cadence == Cadence::kDaily; });
  const double weekly = group_mean([](const AlgorithmConfig& a) { return a.posterior_cadence == Cadence::kWeekly; });
  const bool ok = b20 >= b10 && mixed >= pooled && daily >= weekly;
  return {ok, fmt("(a) B20-B10 %+.4f", b20 - b10) + fmt(" (b) mixed-pooled %+.4f", mixed - pooled) +
                  fmt(" (c) daily/weekly - weekly/weekly %+.4f", daily - weekly) +
                  fmt("; K=50 m=30 high effect, %.0f s", desk_grid().seconds)};
}

// -- 9 ---------------------------------------------------------------------
Verdict effect_size() {
  const auto& base = fixture();
  const double e0 = standardized_effect_size(0.0, base, 100, 9).mean;
  const double e05 = standardized_effect_size(0.5, base, 100, 9).mean;
  const double e1 = standardized_effect_size(1.0, base, 100, 9).mean;
  const double e2 = standardized_effect_size(2.0, base, 100, 9).mean;
  const bool ok = e05 <= e1 && e1 <= e2 && std::abs(e0) < 0.02;
  return {ok, fmt("effect(0)=%.4f", e0) + fmt(" effect(0.5)=%.4f", e05) + fmt(" effect(1)=%.4f", e1) +
                  fmt(" effect(2)=%.4f", e2)};
}

// -- 10 --------------------------------------------------------------------
Verdict table_schema() {
  const std::string expected_header =
      "Reward model Variant,Baseline and Advantage Variant,Smooth allocation function variant (value of B),"
      "Posterior Update Cadence,Hyper Update Cadence,Mean Avg total reward per user,Std Avg total reward per user,"
      "Mean of Avg Median,Std of Avg Median,[Lower 25] Mean Avg total reward per user,"
      "[Lower 25] Std Avg total reward per user,[Lower 25] Mean of Avg Median,[Lower 25] Std of Avg Median";
  const std::string csv = table_csv(desk_grid().rows);
  const bool header_ok = csv.substr(0, csv.find('\n')) == expected_header;
  bool columns_ok = true;
  std::size_t pos = csv.find('\n') + 1;
  while (pos < csv.size()) {
    const std::size_t end = csv.find('\n', pos);
    const std::string line = csv.substr(pos, end - pos);
    columns_ok = columns_ok && std::count(line.begin(), line.end(), ',') == 12;
    pos = end + 1;
  }
  const double mixed = group_mean([](const AlgorithmConfig& a) { return a.model == RewardModel::kMixed; });
  const double fixed = group_mean([](const AlgorithmConfig& a) { return a.model == RewardModel::kPooled; });
  const double b20 = group_mean([](const AlgorithmConfig& a) { return a.smooth.big_b == 20.0; });
  const double b10 = group_mean([](const AlgorithmConfig& a) { return a.smooth.big_b == 10.0; });
  const bool signs = mixed - fixed > 0.0 && b20 - b10 > 0.0;
  return {header_ok && columns_ok && signs, std::string("header ") + (header_ok ? "exact" : "MISMATCH") +
                                                ", 13 columns per row " + (columns_ok ? "yes" : "no") +
                                                fmt(", sign(mixed-fixed)=%+.0f", mixed > fixed ? 1.0 : -1.0) +
                                                fmt(" sign(B20-B10)=%+.0f", b20 > b10 ? 1.0 : -1.0)};
}

// -- 11 --------------------------------------------------------------------
Verdict determinism_and_replay() {
  std::vector<EnvironmentConfig> envs = standard_environments(8, 0);
  envs.resize(3);
  std::vector<AlgorithmConfig> algs = table_algorithms();
  std::vector<AlgorithmConfig> some = {algs[1], algs[10], algs[15], algs[23]};
  GridOptions one, many;
  many.jobs = std::max(2, worker_count());
  std::string a, b, c;
  a = table_csv(run_grid(envs, some, 4, 11, fixture(), one));
  b = table_csv(run_grid(envs, some, 4, 11, fixture(), one));
  c = table_csv(run_grid(envs, some, 4, 11, fixture(), many));
  const bool csv_ok = a == b && a == c;

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("mrt_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  ServiceConfig cfg;
  cfg.snapshot_dir = dir.string();
  cfg.seed = 5;
  cfg.sync = false;
  std::string before;
  {
    DecisionService svc(cfg);
    for (int t = 1; t <= 14; ++t) {
      for (int i = 0; i < 4; ++i) {
        const std::string pid = "p" + std::to_string(i);
        const auto r = svc.decide({{"participant_id", pid},
                                   {"decision_index", t},
                                   {"idempotency_key", pid + ":" + std::to_string(t)},
                                   {"reward_history", std::vector<int>{(t + i) % 4}},
                                   {"cannabis_history", std::vector<double>{0.1 * (i % 2)}}});
        svc.record_reward({{"decision_id", r.body["decision_id"]}, {"reward", (3 * t + i) % 4}});
      }
      if (t % 2 == 0) svc.update_posterior();
      if (t % 7 == 0) svc.update_hyper();
    }
    before = svc.snapshot_text();
  }
  std::string after;
  {
    DecisionService svc(cfg);
    after = svc.snapshot_text();
  }
  fs::remove_all(dir);
  const bool replay_ok = !before.empty() && before == after;
  return {csv_ok && replay_ok, std::string("grid CSV identical across runs and worker counts: ") +
                                   (csv_ok ? "yes" : "no") + ", snapshot identical after restart: " +
                                   (replay_ok ? "yes" : "no")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    Verdict (*run)();
  };
  const Criterion criteria[] = {
      {1, "allocation constants", allocation_constants},
      {2, "posterior oracle equivalence", posterior_oracle},
      {3, "pooling limit", pooling_limit},
      {4, "marginal-likelihood oracle", marginal_likelihood_oracle},
      {5, "hyperparameter recovery", hyper_recovery},
      {6, "quadrature vs Monte Carlo", quadrature_vs_monte_carlo},
      {7, "probability clipping", clipping},
      {8, "qualitative orderings", orderings},
      {9, "effect-size monotonicity", effect_size},
      {10, "result-table schema and delta signs", table_schema},
      {11, "determinism and replay", determinism_and_replay},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %-38s %s  %s [%.1f s]\n", c.id, c.name, v.pass ? "PASS" : "FAIL", v.detail.c_str(), s);
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
