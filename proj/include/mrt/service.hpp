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

// Decision service: issues actions from the current posterior snapshot,
// ingests rewards, and recomputes snapshots on explicit update triggers.
// Every state change is appended to log.jsonl before it is acknowledged;
// restarting replays the log and reproduces each snapshot file exactly.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mrt/allocation.hpp"
#include "mrt/config.hpp"
#include "mrt/empirical_bayes.hpp"
#include "mrt/features.hpp"
#include "mrt/posterior.hpp"
#include "mrt/prior.hpp"
#include "mrt/sim.hpp"

namespace mrt {

struct ServiceConfig {
  std::string snapshot_dir;
  RewardModel model = RewardModel::kMixed;
  FeatureVariant variant = FeatureVariant::kFull;
  SmoothConfig smooth;
  int reward_window = kDefaultRewardWindow;
  int cannabis_window = kDefaultCannabisWindow;
  std::uint64_t seed = 0;  // action draws
  EmpiricalBayesOptions optimizer;
  bool sync = true;        // fsync the log on every append
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;  // null for 204
};

class ReplayMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DecisionService {
 public:
  explicit DecisionService(ServiceConfig cfg) : cfg_(std::move(cfg)), prior_(default_prior(cfg_.variant)) {
    cfg_.smooth.validate();
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.snapshot_dir);
    hyper_ = initial_hyperparams(prior_.dim());
    replay();
    log_ = std::fopen(log_path().c_str(), "ab");
    if (!log_) throw std::runtime_error("cannot open " + log_path() + " for appending");
  }

  ~DecisionService() {
    if (log_) std::fclose(log_);
  }

  DecisionService(const DecisionService&) = delete;
  DecisionService& operator=(const DecisionService&) = delete;

  const ServiceConfig& config() const { return cfg_; }
  std::string log_path() const { return cfg_.snapshot_dir + "/log.jsonl"; }
  std::string snapshot_path(long long version) const {
    return cfg_.snapshot_dir + "/snapshot-" + std::to_string(version) + ".txt";
  }

  long long version() const {
    std::shared_lock lock(snap_mu_);
    return current_->snapshot.version;
  }

  /// Serialized form of the current snapshot.
  std::string snapshot_text() const {
    std::shared_lock lock(snap_mu_);
    return current_->text;
  }

  std::size_t log_entries() const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(seq_);
  }

  // -------------------------------------------------------------------------
  // Endpoints

  ServiceResponse decide(const nlohmann::json& req) {
    using nlohmann::json;
    if (!req.is_object()) return error(422, "body must be a JSON object");
    std::string pid, key;
    long long t = 0;
    int tod = 0;
    std::vector<int> rewards;
    std::vector<double> cannabis;
    try {
      pid = req.at("participant_id").get<std::string>();
      t = req.at("decision_index").get<long long>();
      key = req.at("idempotency_key").get<std::string>();
      tod = req.value("time_of_day", static_cast<int>((t + 1) % 2 == 0 ? 0 : 1));
      if (req.contains("reward_history")) rewards = req.at("reward_history").get<std::vector<int>>();
      if (req.contains("cannabis_history")) cannabis = req.at("cannabis_history").get<std::vector<double>>();
    } catch (const json::exception& e) {
      return error(422, std::string("invalid decision request: ") + e.what());
    }
    if (pid.empty()) return error(422, "participant_id must not be empty");
    if (key.empty()) return error(422, "idempotency_key must not be empty");
    if (t < 1) return error(422, "decision_index must be >= 1");
    if (tod != 0 && tod != 1) return error(422, "time_of_day must be 0 or 1");
    State s;
    try {
      s.s1 = compute_s1(rewards, cfg_.reward_window);
      s.s2 = tod;
      s.s3 = compute_s3(cannabis, cfg_.cannabis_window);
    } catch (const InputDomainError& e) {
      return error(422, e.what());
    }
    const std::string fingerprint = hex64(fnv1a64(canonical_request(pid, t, tod, rewards, cannabis)));

    std::shared_ptr<const Current> snap;
    {
      std::shared_lock lock(snap_mu_);
      snap = current_;
    }

    std::lock_guard lock(mu_);
    if (auto it = by_key_.find(key); it != by_key_.end()) {
      const Decision& d = decisions_.at(it->second);
      if (d.fingerprint != fingerprint) return error(409, "idempotency key reused with a different payload");
      return {200, decision_body(d)};
    }
    if (auto it = by_slot_.find(slot_key(pid, t)); it != by_slot_.end()) {
      return error(409, "a decision for this participant and decision index already exists");
    }

    const auto pidx = participant_index(pid);
    const GaussianMarginal adv = snap->advantage_for(pidx);
    double pi;
    try {
      pi = action_probability(adv.mean, adv.cov, advantage_features(s, cfg_.variant), cfg_.smooth);
    } catch (const NumericalFailure& e) {
      return error(500, e.what());
    }
    const RngKey k = RngKey(cfg_.seed).with(Stream::kService).with({fnv1a64(pid), static_cast<std::uint64_t>(t)});

    Decision d;
    d.id = "d" + std::to_string(seq_);
    d.participant = pid;
    d.t = t;
    d.state = s;
    d.pi = pi;
    d.action = sample_action(pi, k);
    d.version = snap->snapshot.version;
    d.key = key;
    d.fingerprint = fingerprint;

    json entry = {{"type", "decision"},       {"seq", seq_},          {"decision_id", d.id},
                  {"participant", pid},       {"t", t},               {"state", {s.s1, s.s2, s.s3}},
                  {"pi", pi},                 {"action", d.action},   {"version", d.version},
                  {"idempotency_key", key},   {"fingerprint", fingerprint}};
    append(entry);  // persisted before the response
    apply_decision(std::move(d), seq_ - 1);
    return {200, decision_body(decisions_.at(by_key_.at(key)))};
  }

  ServiceResponse record_reward(const nlohmann::json& req) {
    using nlohmann::json;
    if (!req.is_object()) return error(422, "body must be a JSON object");
    std::string id;
    long long r = 0;
    try {
      id = req.at("decision_id").get<std::string>();
      if (!req.at("reward").is_number_integer()) return error(422, "reward must be an integer in {0,1,2,3}");
      r = req.at("reward").get<long long>();
    } catch (const json::exception& e) {
      return error(422, std::string("invalid reward request: ") + e.what());
    }
    std::lock_guard lock(mu_);
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return error(404, "unknown decision_id '" + id + "'");
    if (r < 0 || r > 3) return error(422, "reward must be an integer in {0,1,2,3}");
    Decision& d = decisions_[it->second];
    if (d.reward) {
      if (*d.reward == r) return {204, nullptr};
      return error(409, "a different reward was already recorded for this decision");
    }
    json entry = {{"type", "reward"}, {"seq", seq_}, {"decision_id", id}, {"reward", r}};
    append(entry);
    apply_reward(it->second, static_cast<int>(r), seq_ - 1);
    return {204, nullptr};
  }

  ServiceResponse update_posterior() { return update(false); }
  ServiceResponse update_hyper() { return update(true); }

 private:
  struct Decision {
    std::string id;
    ParticipantId participant;
    long long t = 0;
    State state;
    double pi = 0.0;
    int action = 0;
    long long version = 0;
    std::string key;
    std::string fingerprint;
    std::optional<int> reward;
    long long decision_seq = 0;
    long long reward_seq = -1;
  };

  struct Current {
    PosteriorSnapshot snapshot;
    std::string text;
    RewardModel model;
    FeatureVariant variant;

    GaussianMarginal advantage_for(std::optional<int> participant) const {
      const JointPosterior& j = snapshot.posterior;
      GaussianMarginal full;
      if (model == RewardModel::kPooled) {
        full = participant_marginal(j, 0);
      } else if (participant && *participant < j.participants()) {
        full = participant_marginal(j, *participant);
      } else {
        full = j.population_predictive();
      }
      return advantage_marginal(full, variant);
    }
  };

  static std::string slot_key(const std::string& pid, long long t) { return pid + '\x1f' + std::to_string(t); }

  static std::string canonical_request(const std::string& pid, long long t, int tod, const std::vector<int>& r,
                                       const std::vector<double>& c) {
    nlohmann::json j = {{"p", pid}, {"t", t}, {"tod", tod}, {"r", r}, {"c", c}};
    return j.dump();
  }

  static ServiceResponse error(int status, const std::string& msg) { return {status, {{"error", msg}}}; }

  nlohmann::json decision_body(const Decision& d) const {
    return {{"decision_id", d.id},
            {"action", d.action},
            {"pi", d.pi},
            {"posterior_version", d.version},
            {"state", {d.state.s1, d.state.s2, d.state.s3}}};
  }

  std::optional<int> participant_index(const std::string& pid) const {
    auto it = participant_pos_.find(pid);
    if (it == participant_pos_.end()) return std::nullopt;
    return it->second;
  }

  void append(const nlohmann::json& entry) {
    const std::string line = entry.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0) {
      throw std::runtime_error("failed to append to " + log_path());
    }
    if (cfg_.sync) sync_file(log_);
    ++seq_;
  }

  static void sync_file(std::FILE* f);

  void apply_decision(Decision d, long long seq) {
    d.decision_seq = seq;
    if (!participant_pos_.count(d.participant)) {
      participant_pos_[d.participant] = static_cast<int>(participants_.size());
      participants_.push_back({d.participant, seq});
    }
    const std::size_t idx = decisions_.size();
    by_key_[d.key] = idx;
    by_id_[d.id] = idx;
    by_slot_[slot_key(d.participant, d.t)] = idx;
    decisions_.push_back(std::move(d));
  }

  void apply_reward(std::size_t idx, int r, long long seq) {
    decisions_[idx].reward = r;
    decisions_[idx].reward_seq = seq;
  }

  /// History and participant list as of log position `through`.
  void cut(long long through, std::vector<TrialRecord>& history, std::vector<ParticipantId>& ids) const {
    for (const auto& [pid, first] : participants_)
      if (first < through) ids.push_back(pid);
    for (const auto& d : decisions_) {
      if (d.reward && d.reward_seq < through) {
        history.push_back({d.participant, static_cast<int>(d.t), d.state, d.pi, d.action, *d.reward});
      }
    }
  }

  struct UpdateResult {
    std::shared_ptr<const Current> next;
    Hyperparams hyper;
    bool accepted = true;
    std::string reason;
  };

  UpdateResult compute_update(bool hyper_update, long long through, long long version, const Hyperparams& hyper) const {
    std::vector<TrialRecord> history;
    std::vector<ParticipantId> ids;
    cut(through, history, ids);
    UpdateResult out;
    out.hyper = hyper;
    if (hyper_update) {
      if (cfg_.model == RewardModel::kMixed) {
        const HyperUpdate u = optimize_hyperparams({history, prior_, cfg_.variant, ids}, hyper, cfg_.optimizer);
        out.accepted = u.accepted;
        out.reason = u.reason;
        if (u.accepted) out.hyper = u.hyper;
      } else {
        const NoiseUpdate u = pooled_noise_update(history, prior_, cfg_.variant, hyper.sigma_eps2, cfg_.optimizer);
        out.accepted = u.accepted;
        out.reason = u.reason;
        if (u.accepted) out.hyper.sigma_eps2 = u.sigma_eps2;
      }
    }
    auto cur = std::make_shared<Current>();
    cur->model = cfg_.model;
    cur->variant = cfg_.variant;
    cur->snapshot.posterior = cfg_.model == RewardModel::kPooled
                                  ? pooled_posterior(history, prior_, out.hyper.sigma_eps2, cfg_.variant)
                                  : mixed_posterior(history, prior_, out.hyper, ids, cfg_.variant);
    cur->snapshot.hyper = out.hyper;
    cur->snapshot.record_count = static_cast<long long>(history.size());
    cur->snapshot.version = version;
    cur->text = serialize_snapshot(cur->snapshot);
    out.next = std::move(cur);
    return out;
  }

  void write_snapshot_file(const Current& c) const {
    const std::string path = snapshot_path(c.snapshot.version);
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << c.text;
      if (!out) throw std::runtime_error("failed to write " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  void install(std::shared_ptr<const Current> next) {
    std::unique_lock lock(snap_mu_);
    current_ = std::move(next);
  }

  ServiceResponse update(bool hyper_update) {
    bool expected = false;
    if (!updating_.compare_exchange_strong(expected, true)) return error(503, "an update is already in progress");
    struct Release {
      std::atomic<bool>& flag;
      ~Release() { flag.store(false); }
    } release{updating_};

    long long through, version;
    Hyperparams hyper;
    {
      std::lock_guard lock(mu_);
      through = seq_;
      version = next_version_;
      hyper = hyper_;
    }
    UpdateResult r;
    try {
      r = compute_update(hyper_update, through, version, hyper);
    } catch (const HyperparameterRejected& e) {
      return {200, {{"accepted", false}, {"reason", e.what()}, {"posterior_version", this->version()}}};
    } catch (const NumericalFailure& e) {
      return error(500, std::string(e.what()));
    }
    write_snapshot_file(*r.next);
    {
      std::lock_guard lock(mu_);
      nlohmann::json entry = {{"type", "update"},    {"seq", seq_},       {"kind", hyper_update ? "hyper" : "posterior"},
                              {"through", through},  {"version", version}, {"accepted", r.accepted},
                              {"reason", r.reason}};
      append(entry);
      hyper_ = r.hyper;
      next_version_ = version + 1;
    }
    install(r.next);
    nlohmann::json body = {{"posterior_version", version}, {"accepted", r.accepted}};
    if (hyper_update) body["reason"] = r.reason;
    body["sigma_eps2"] = r.hyper.sigma_eps2;
    return {200, body};
  }

  /// Rebuilds in-memory state from log.jsonl. Each update entry is
  /// recomputed and, if its snapshot file exists, compared byte-for-byte.
  void replay() {
    using nlohmann::json;
    auto initial = compute_update(false, 0, 0, hyper_).next;
    const std::string p0 = snapshot_path(0);
    if (std::filesystem::exists(p0)) {
      check_snapshot(*initial);
    } else {
      write_snapshot_file(*initial);
    }
    install(initial);
    next_version_ = 1;

    std::ifstream in(log_path(), std::ios::binary);
    if (!in) return;
    std::string line;
    std::streamoff good_end = 0;
    bool truncated = false;
    while (std::getline(in, line)) {
      if (in.eof()) {
        truncated = true;  // no trailing newline: an interrupted append
        break;
      }
      json e;
      try {
        e = json::parse(line);
      } catch (const json::parse_error&) {
        throw ReplayMismatch("corrupt log entry at seq " + std::to_string(seq_));
      }
      if (e.at("seq").get<long long>() != seq_) throw ReplayMismatch("log sequence gap at " + std::to_string(seq_));
      const std::string type = e.at("type").get<std::string>();
      if (type == "decision") {
        Decision d;
        d.id = e.at("decision_id").get<std::string>();
        d.participant = e.at("participant").get<std::string>();
        d.t = e.at("t").get<long long>();
        const auto st = e.at("state").get<std::vector<int>>();
        d.state = {st.at(0), st.at(1), st.at(2)};
        d.pi = e.at("pi").get<double>();
        d.action = e.at("action").get<int>();
        d.version = e.at("version").get<long long>();
        d.key = e.at("idempotency_key").get<std::string>();
        d.fingerprint = e.at("fingerprint").get<std::string>();
        ++seq_;
        apply_decision(std::move(d), seq_ - 1);
      } else if (type == "reward") {
        const auto it = by_id_.find(e.at("decision_id").get<std::string>());
        if (it == by_id_.end()) throw ReplayMismatch("reward for unknown decision in log");
        ++seq_;
        apply_reward(it->second, e.at("reward").get<int>(), seq_ - 1);
      } else if (type == "update") {
        const bool hyper_update = e.at("kind").get<std::string>() == "hyper";
        const long long version = e.at("version").get<long long>();
        if (version != next_version_) throw ReplayMismatch("snapshot version gap in log");
        UpdateResult r = compute_update(hyper_update, e.at("through").get<long long>(), version, hyper_);
        if (r.accepted != e.at("accepted").get<bool>()) throw ReplayMismatch("replayed hyper update disagrees");
        if (std::filesystem::exists(snapshot_path(version))) {
          check_snapshot(*r.next);
        } else {
          write_snapshot_file(*r.next);
        }
        hyper_ = r.hyper;
        next_version_ = version + 1;
        install(r.next);
        ++seq_;
      } else {
        throw ReplayMismatch("unknown log entry type '" + type + "'");
      }
      good_end = in.tellg();
    }
    if (truncated) {
      in.close();
      std::filesystem::resize_file(log_path(), static_cast<std::uintmax_t>(good_end));
    }
  }

  void check_snapshot(const Current& c) const {
    std::ifstream f(snapshot_path(c.snapshot.version), std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    if (ss.str() != c.text) {
      throw ReplayMismatch("replayed snapshot " + std::to_string(c.snapshot.version) + " differs from " +
                           snapshot_path(c.snapshot.version));
    }
  }

  ServiceConfig cfg_;
  PriorSpec prior_;

  mutable std::mutex mu_;  // log, decisions, hyper
  std::FILE* log_ = nullptr;
  long long seq_ = 0;
  long long next_version_ = 1;
  Hyperparams hyper_;
  std::vector<Decision> decisions_;
  std::vector<std::pair<ParticipantId, long long>> participants_;  // (id, first decision seq)
  std::unordered_map<ParticipantId, int> participant_pos_;
  std::unordered_map<std::string, std::size_t> by_key_, by_id_, by_slot_;

  mutable std::shared_mutex snap_mu_;
  std::shared_ptr<const Current> current_;

  std::atomic<bool> updating_{false};
};

}  // namespace mrt

#include <unistd.h>

inline void mrt::DecisionService::sync_file(std::FILE* f) { ::fsync(::fileno(f)); }
