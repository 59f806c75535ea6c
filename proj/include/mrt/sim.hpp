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

// Simulated trials: the per-decision-point loop (state, probability,
// action, reward), cadence-scheduled updates, metrics and grid tables.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mrt/allocation.hpp"
#include "mrt/empirical_bayes.hpp"
#include "mrt/features.hpp"
#include "mrt/posterior.hpp"
#include "mrt/prior.hpp"
#include "mrt/testbed.hpp"

namespace mrt {

enum class RewardModel { kPooled, kMixed };
enum class Cadence { kDaily, kWeekly };

inline std::string reward_model_name(RewardModel m) { return m == RewardModel::kPooled ? "fixed" : "mixed"; }
inline std::string cadence_name(Cadence c) { return c == Cadence::kDaily ? "daily" : "weekly"; }

inline std::optional<RewardModel> parse_reward_model(std::string_view s) {
  if (s == "pooled" || s == "fixed") return RewardModel::kPooled;
  if (s == "mixed") return RewardModel::kMixed;
  return std::nullopt;
}

inline std::optional<Cadence> parse_cadence(std::string_view s) {
  if (s == "daily") return Cadence::kDaily;
  if (s == "weekly") return Cadence::kWeekly;
  return std::nullopt;
}

constexpr bool cadence_due(Cadence c, int day) { return c == Cadence::kDaily || day % 7 == 0; }

struct AlgorithmConfig {
  RewardModel model = RewardModel::kMixed;
  FeatureVariant variant = FeatureVariant::kFull;
  SmoothConfig smooth;
  Cadence posterior_cadence = Cadence::kDaily;
  Cadence hyper_cadence = Cadence::kWeekly;
  int reward_window = kDefaultRewardWindow;
  int cannabis_window = kDefaultCannabisWindow;
  // Replaces the learned allocation with a constant probability (a plain
  // micro-randomized policy); updates still run.
  std::optional<double> fixed_pi;

  void validate() const {
    smooth.validate();
    if (reward_window < 1) throw InputDomainError("reward_window must be >= 1");
    if (cannabis_window < 1) throw InputDomainError("cannabis_window must be >= 1");
    if (fixed_pi && !(*fixed_pi >= 0.0 && *fixed_pi <= 1.0)) throw InputDomainError("fixed_pi outside [0,1]");
  }

  std::string label() const {
    char b[32];
    std::snprintf(b, sizeof b, "%g", smooth.big_b);
    return reward_model_name(model) + "/" + std::string(variant_name(variant)) + "/" + b + "/" +
           cadence_name(posterior_cadence) + "/" + cadence_name(hyper_cadence);
  }
};

/// The 24 cells of the result tables: {fixed, mixed} x {0,1,2} x {B10, B20}
/// x posterior daily x hyper {daily, weekly}, in table row order.
inline std::vector<AlgorithmConfig> table_algorithms() {
  std::vector<AlgorithmConfig> out;
  for (RewardModel m : {RewardModel::kPooled, RewardModel::kMixed})
    for (FeatureVariant v : {FeatureVariant::kFull, FeatureVariant::kOneWay, FeatureVariant::kInterceptAdvantage})
      for (double b : {10.0, 20.0})
        for (Cadence h : {Cadence::kDaily, Cadence::kWeekly}) {
          AlgorithmConfig a;
          a.model = m;
          a.variant = v;
          a.smooth.big_b = b;
          a.posterior_cadence = Cadence::kDaily;
          a.hyper_cadence = h;
          out.push_back(a);
        }
  return out;
}

inline std::string format_number(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.10g", v);
  return b;
}

// ---------------------------------------------------------------------------
// Metrics

struct TrialMetrics {
  double avg_total_reward = 0.0;
  double median_total_reward = 0.0;
  double lower25_avg = 0.0;
  double lower25_median = 0.0;
};

namespace detail {
inline double median_sorted(const std::vector<double>& v) {
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}
}  // namespace detail

/// Lower-25 set: every total at or below the ceil(n/4)-th smallest total.
inline TrialMetrics compute_metrics(std::vector<double> totals) {
  if (totals.empty()) throw InputDomainError("compute_metrics needs at least one total");
  std::sort(totals.begin(), totals.end());
  TrialMetrics m;
  m.avg_total_reward = detail::mean_of(totals);
  m.median_total_reward = detail::median_sorted(totals);
  const std::size_t k = (totals.size() + 3) / 4;
  const double cutoff = totals[k - 1];
  std::vector<double> low;
  for (double x : totals)
    if (x <= cutoff) low.push_back(x);
  m.lower25_avg = detail::mean_of(low);
  m.lower25_median = detail::median_sorted(low);
  return m;
}

// ---------------------------------------------------------------------------
// Single trial

struct UpdateEvent {
  int day = 0;
  bool hyper = false;   // false: posterior update
  bool accepted = true; // hyper updates only
  std::string reason;
  Hyperparams hyper_after;
};

struct TrialOutcome {
  bool aborted = false;
  std::string diagnostic;
  TrialMetrics metrics;
  std::vector<double> totals;
  std::vector<TrialRecord> records;  // filled when keep_records is set
  std::vector<UpdateEvent> updates;
  int posterior_updates = 0;
  int hyper_updates = 0;
  double pi_min = 1.0;
  double pi_max = 0.0;
  long long pi_count = 0;
  long long pi_out_of_range = 0;
};

struct TrialOptions {
  bool keep_records = false;
  EmpiricalBayesOptions optimizer;
};

inline ParticipantId participant_name(int i) { return "p" + std::to_string(i); }

/// Per-snapshot allocation cache: the probability depends only on the
/// participant's beta marginal and the 8 possible states.
class AllocationCache {
 public:
  AllocationCache(const JointPosterior& post, RewardModel model, FeatureVariant v, const SmoothConfig& smooth,
                  int m)
      : variant_(v), smooth_(smooth) {
    const int blocks = model == RewardModel::kPooled ? 1 : m;
    marginals_.reserve(blocks);
    for (int i = 0; i < blocks; ++i) marginals_.push_back(advantage_marginal(participant_marginal(post, i), v));
    cache_.assign(static_cast<std::size_t>(blocks) * 8, -1.0);
    shared_ = model == RewardModel::kPooled;
  }

  double pi(int participant, const State& s) {
    const int b = shared_ ? 0 : participant;
    const int code = s.s1 * 4 + s.s2 * 2 + s.s3;
    double& slot = cache_[static_cast<std::size_t>(b) * 8 + code];
    if (slot < 0.0) {
      const auto& g = marginals_[b];
      slot = action_probability(g.mean, g.cov, advantage_features(s, variant_), smooth_);
    }
    return slot;
  }

 private:
  FeatureVariant variant_;
  SmoothConfig smooth_;
  bool shared_ = false;
  std::vector<GaussianMarginal> marginals_;
  std::vector<double> cache_;
};

/// Runs one simulated trial on a pre-generated population. Reward and
/// action draws are keyed on (seed, participant, decision index), so every
/// algorithm run with the same seed faces the same environment randomness.
inline TrialOutcome run_trial(const EnvironmentConfig& env, const Population& pop, const AlgorithmConfig& alg,
                              std::uint64_t seed, const TrialOptions& opt = {}) {
  env.validate();
  alg.validate();
  const int m = static_cast<int>(pop.models.size());
  if (m < 1 || static_cast<int>(pop.traces.size()) != m) throw InputDomainError("population is empty or inconsistent");
  for (const auto& tr : pop.traces)
    if (static_cast<int>(tr.size()) < env.horizon) throw InputDomainError("trace shorter than horizon");

  TrialOutcome out;
  const PriorSpec prior = default_prior(alg.variant);
  const int d = prior.dim();
  std::vector<ParticipantId> ids(m);
  for (int i = 0; i < m; ++i) ids[i] = participant_name(i);

  Hyperparams hyper = initial_hyperparams(d);
  double pooled_sigma2 = kInitialNoiseVariance;

  auto compute_posterior = [&](const std::vector<ParticipantStats>& stats, const ParticipantStats& pooled) {
    return alg.model == RewardModel::kPooled ? pooled_posterior_from_stats(pooled, prior, pooled_sigma2)
                                             : mixed_posterior_from_stats(stats, prior, hyper);
  };

  // Sufficient statistics grow incrementally; records are kept only on
  // request.
  std::vector<ParticipantStats> stats(m, ParticipantStats{Mat::Zero(d, d), Vec::Zero(d), 0.0, 0});
  ParticipantStats pooled{Mat::Zero(d, d), Vec::Zero(d), 0.0, 0};

  std::vector<std::vector<int>> rewards(m);
  std::vector<double> totals(m, 0.0);
  const RngKey root(seed);

  try {
    JointPosterior post = compute_posterior(stats, pooled);  // warm start: the prior
    AllocationCache cache(post, alg.model, alg.variant, alg.smooth, m);
    for (int day = 1; day <= env.days(); ++day) {
      for (int tod = 0; tod < 2; ++tod) {
        const int t = 2 * day - 1 + tod;
        for (int i = 0; i < m; ++i) {
          const SyntheticTrace& trace = pop.traces[i];
          State s;
          s.s1 = compute_s1(rewards[i], alg.reward_window);
          s.s2 = tod;
          std::vector<double> cb;
          for (int k = std::max(1, t - alg.cannabis_window); k < t; ++k) cb.push_back(trace[k - 1].cannabis);
          s.s3 = compute_s3(cb, alg.cannabis_window);

          const double pi = alg.fixed_pi ? *alg.fixed_pi : cache.pi(i, s);
          out.pi_min = std::min(out.pi_min, pi);
          out.pi_max = std::max(out.pi_max, pi);
          ++out.pi_count;
          if (!(pi >= 0.2 && pi <= 0.8)) ++out.pi_out_of_range;

          const auto pk = static_cast<std::uint64_t>(i);
          const auto tk = static_cast<std::uint64_t>(t);
          const int a = sample_action(pi, root.with(Stream::kAction).with({pk, tk}));
          const ParticipantModel model = apply_environment(pop.models[i], env, t);
          const int r = generate_reward(model, trace[t - 1], a, root.with(Stream::kReward).with({pk, tk}));

          const DesignRow row = design_row(s, a, pi, alg.variant);
          auto& st = stats[i];
          st.A.selfadjointView<Eigen::Lower>().rankUpdate(row.phi);
          st.B += static_cast<double>(r) * row.phi;
          st.rr += static_cast<double>(r) * r;
          ++st.n;
          pooled.A.selfadjointView<Eigen::Lower>().rankUpdate(row.phi);
          pooled.B += static_cast<double>(r) * row.phi;
          pooled.rr += static_cast<double>(r) * r;
          ++pooled.n;

          rewards[i].push_back(r);
          totals[i] += r;
          if (opt.keep_records) out.records.push_back({ids[i], t, s, pi, a, r});
        }
      }

      const bool hyper_due = cadence_due(alg.hyper_cadence, day);
      const bool post_due = cadence_due(alg.posterior_cadence, day);
      if (!hyper_due && !post_due) continue;

      std::vector<ParticipantStats> full;
      ParticipantStats pooled_full;
      if (alg.model == RewardModel::kMixed) {
        full = stats;
        for (auto& s : full) s.A = s.A.selfadjointView<Eigen::Lower>();
      } else {
        pooled_full = pooled;
        pooled_full.A = pooled_full.A.selfadjointView<Eigen::Lower>();
      }

      if (hyper_due) {
        UpdateEvent ev;
        ev.day = day;
        ev.hyper = true;
        if (alg.model == RewardModel::kMixed) {
          const HyperUpdate u = optimize_hyperparams_from_stats(full, prior, hyper, opt.optimizer);
          if (u.accepted) hyper = u.hyper;
          ev.accepted = u.accepted;
          ev.reason = u.reason;
        } else {
          const NoiseUpdate u = pooled_noise_update_from_stats(pooled_full, prior, pooled_sigma2, opt.optimizer);
          if (u.accepted) pooled_sigma2 = u.sigma_eps2;
          ev.accepted = u.accepted;
          ev.reason = u.reason;
          hyper.sigma_eps2 = pooled_sigma2;
        }
        ev.hyper_after = hyper;
        out.updates.push_back(std::move(ev));
        ++out.hyper_updates;
      }
      if (post_due) {
        post = compute_posterior(full, pooled_full);
        cache = AllocationCache(post, alg.model, alg.variant, alg.smooth, m);
        UpdateEvent ev;
        ev.day = day;
        ev.hyper_after = hyper;
        out.updates.push_back(std::move(ev));
        ++out.posterior_updates;
      }
    }
  } catch (const NumericalFailure& e) {
    out.aborted = true;
    out.diagnostic = std::string(e.what()) + " (diagnostic " + format_number(e.diagnostic()) + ")";
    return out;
  } catch (const HyperparameterRejected& e) {
    out.aborted = true;
    out.diagnostic = e.what();
    return out;
  }
  out.totals = totals;
  out.metrics = compute_metrics(totals);
  return out;
}

/// Convenience overload generating the population from env (env.seed is
/// replaced by `seed`).
inline TrialOutcome run_trial(EnvironmentConfig env, const BasePopulation& base, const AlgorithmConfig& alg,
                              std::uint64_t seed, const TrialOptions& opt = {}) {
  env.seed = seed;
  return run_trial(env, generate_population(env, base), alg, seed, opt);
}

/// Seed of trial k under a master seed.
inline std::uint64_t trial_seed(std::uint64_t master, int k) {
  return RngKey(master).with(static_cast<std::uint64_t>(k)).bits();
}

// ---------------------------------------------------------------------------
// Grid

struct MetricStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over trials
};

struct GridRow {
  EnvironmentConfig env;
  AlgorithmConfig alg;
  MetricStats avg, median, lower25_avg, lower25_median;
  int trials = 0;   // completed
  int aborted = 0;
  std::vector<std::string> diagnostics;
  double pi_min = 1.0;
  double pi_max = 0.0;
  long long pi_count = 0;
  long long pi_out_of_range = 0;
  std::vector<TrialMetrics> per_trial;
};

inline MetricStats summarize(const std::vector<double>& v) {
  MetricStats s;
  if (v.empty()) return {std::nan(""), std::nan("")};
  s.mean = detail::mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

struct GridOptions {
  int jobs = 1;
  TrialOptions trial;
  // Called once per finished trial, serialized but in completion order;
  // `job` is the trial's position in (environment, k, algorithm) order.
  std::function<void(std::size_t job, const GridRow&, int k, const TrialOutcome&)> on_trial;
};

/// Runs K trials per (environment, algorithm) cell. Trial k of every cell
/// in an environment shares its population and seed.
inline std::vector<GridRow> run_grid(const std::vector<EnvironmentConfig>& envs,
                                     const std::vector<AlgorithmConfig>& algs, int K, std::uint64_t master_seed,
                                     const BasePopulation& base, const GridOptions& opt = {}) {
  if (K < 1) throw InputDomainError("k_trials must be >= 1");
  for (const auto& e : envs) e.validate();
  for (const auto& a : algs) a.validate();

  std::vector<GridRow> rows;
  for (const auto& e : envs)
    for (const auto& a : algs) {
      GridRow r;
      r.env = e;
      r.alg = a;
      rows.push_back(std::move(r));
    }
  const std::size_t n_alg = algs.size();
  struct Job {
    std::size_t env, alg;
    int k;
  };
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < envs.size(); ++e)
    for (int k = 0; k < K; ++k)
      for (std::size_t a = 0; a < n_alg; ++a) jobs.push_back({e, a, k});

  std::vector<std::vector<TrialOutcome>> outcomes(rows.size(), std::vector<TrialOutcome>(K));
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  // Populations are cached per (env, k) while in use.
  std::map<std::pair<std::size_t, int>, std::shared_ptr<const Population>> pops;
  auto population = [&](std::size_t e, int k) {
    std::lock_guard<std::mutex> lock(mu);
    auto it = pops.find({e, k});
    if (it != pops.end()) return it->second;
    EnvironmentConfig cfg = envs[e];
    cfg.seed = trial_seed(master_seed, k);
    auto p = std::make_shared<const Population>(generate_population(cfg, base));
    pops[{e, k}] = p;
    // Earlier populations are no longer needed once later ones exist.
    for (auto jt = pops.begin(); jt != pops.end();) {
      if (jt->first.first == e && jt->first.second + 2 * std::max(1, opt.jobs) < k) jt = pops.erase(jt);
      else ++jt;
    }
    return p;
  };

  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job job = jobs[j];
      try {
        const auto pop = population(job.env, job.k);
        EnvironmentConfig cfg = envs[job.env];
        cfg.seed = trial_seed(master_seed, job.k);
        TrialOutcome o = run_trial(cfg, *pop, algs[job.alg], cfg.seed, opt.trial);
        const std::size_t row = job.env * n_alg + job.alg;
        std::lock_guard<std::mutex> lock(mu);
        if (opt.on_trial) opt.on_trial(j, rows[row], job.k, o);
        o.records.clear();
        o.records.shrink_to_fit();
        outcomes[row][job.k] = std::move(o);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(jobs.size());
        return;
      }
    }
  };
  const int n_threads = std::max(1, opt.jobs);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> avg, med, la, lm;
    for (int k = 0; k < K; ++k) {
      const auto& o = outcomes[r][k];
      rows[r].pi_min = std::min(rows[r].pi_min, o.pi_min);
      rows[r].pi_max = std::max(rows[r].pi_max, o.pi_max);
      rows[r].pi_count += o.pi_count;
      rows[r].pi_out_of_range += o.pi_out_of_range;
      if (o.aborted) {
        ++rows[r].aborted;
        rows[r].diagnostics.push_back("trial " + std::to_string(k) + ": " + o.diagnostic);
        continue;
      }
      ++rows[r].trials;
      rows[r].per_trial.push_back(o.metrics);
      avg.push_back(o.metrics.avg_total_reward);
      med.push_back(o.metrics.median_total_reward);
      la.push_back(o.metrics.lower25_avg);
      lm.push_back(o.metrics.lower25_median);
    }
    rows[r].avg = summarize(avg);
    rows[r].median = summarize(med);
    rows[r].lower25_avg = summarize(la);
    rows[r].lower25_median = summarize(lm);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Table output

inline constexpr const char* kTableHeader =
    "Reward model Variant,Baseline and Advantage Variant,Smooth allocation function variant (value of B),"
    "Posterior Update Cadence,Hyper Update Cadence,Mean Avg total reward per user,Std Avg total reward per user,"
    "Mean of Avg Median,Std of Avg Median,[Lower 25] Mean Avg total reward per user,"
    "[Lower 25] Std Avg total reward per user,[Lower 25] Mean of Avg Median,[Lower 25] Std of Avg Median";

inline std::string table_row(const GridRow& r) {
  std::string s = reward_model_name(r.alg.model) + "," + std::string(variant_name(r.alg.variant)) + "," +
                  format_number(r.alg.smooth.big_b) + "," + cadence_name(r.alg.posterior_cadence) + "," +
                  cadence_name(r.alg.hyper_cadence);
  for (const MetricStats* m : {&r.avg, &r.median, &r.lower25_avg, &r.lower25_median}) {
    s += "," + format_number(m->mean);
    s += "," + format_number(m->std);
  }
  return s;
}

/// CSV for the rows of one environment, header first.
inline std::string table_csv(const std::vector<GridRow>& rows) {
  std::string out = std::string(kTableHeader) + "\n";
  for (const auto& r : rows) out += table_row(r) + "\n";
  return out;
}

}  // namespace mrt
