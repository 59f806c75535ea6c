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

// Joint Gaussian posterior over the stacked per-participant parameters.
//
// The mixed model is theta_i = theta_pop + u_i with theta_pop ~ N(mu_0,
// Sigma_0) and u_i ~ N(0, Sigma_u), so the stacked prior covariance has
// Sigma_0 + Sigma_u on the diagonal blocks and Sigma_0 off the diagonal.
// Rather than inverting that (m d) x (m d) matrix, the posterior is kept in
// the equivalent factored form
//
//   theta_pop | H            ~ N(m_pop, Sigma_pop)
//   theta_i | theta_pop, H   ~ N(T_i theta_pop + y S_i B_i, S_i)
//
// with S_i = (Sigma_u^-1 + y A_i)^-1, T_i = I - y S_i A_i, y = 1/sigma^2,
// which gives
//
//   E[theta_i]            = T_i m_pop + y S_i B_i
//   Cov(theta_i, theta_j) = delta_ij S_i + T_i Sigma_pop T_j^T.
//
// Every quantity is formed from per-participant sufficient statistics
// A_i = sum phi phi^T and B_i = sum phi R, so a full update costs O(m d^3).
// S_i is evaluated as L (I + y L^T A_i L)^-1 L^T, which needs no inverse of
// Sigma_u and stays well conditioned as Sigma_u shrinks toward zero.

#include <charconv>
#include <cstdio>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/features.hpp"
#include "mrt/linalg.hpp"
#include "mrt/prior.hpp"

namespace mrt {

using ParticipantId = std::string;

/// One (participant, decision point) tuple of the history.
struct TrialRecord {
  ParticipantId participant;
  int t = 1;
  State state;
  double pi = 0.5;
  int action = 0;
  int reward = 0;
};

/// Per-participant sufficient statistics of the design rows.
struct ParticipantStats {
  Mat A;            // sum phi phi^T
  Vec B;            // sum phi R
  double rr = 0.0;  // sum R^2
  int n = 0;
};

inline std::vector<ParticipantStats> accumulate_stats(const std::vector<TrialRecord>& history,
                                                      const std::vector<ParticipantId>& participants,
                                                      FeatureVariant variant) {
  const int d = design_dim(variant);
  std::unordered_map<ParticipantId, std::size_t> index;
  index.reserve(participants.size());
  for (std::size_t i = 0; i < participants.size(); ++i) {
    if (!index.emplace(participants[i], i).second) {
      throw InputDomainError("duplicate participant id '" + participants[i] + "'");
    }
  }
  std::vector<ParticipantStats> stats(participants.size());
  for (auto& s : stats) {
    s.A = Mat::Zero(d, d);
    s.B = Vec::Zero(d);
  }
  for (const auto& rec : history) {
    auto it = index.find(rec.participant);
    if (it == index.end()) {
      throw InputDomainError("history references unregistered participant '" + rec.participant + "'");
    }
    if (rec.reward < 0 || rec.reward > 3) throw InputDomainError("reward outside {0,1,2,3}");
    const DesignRow row = design_row(rec.state, rec.action, rec.pi, variant);
    auto& s = stats[it->second];
    s.A.selfadjointView<Eigen::Lower>().rankUpdate(row.phi);
    s.B += static_cast<double>(rec.reward) * row.phi;
    s.rr += static_cast<double>(rec.reward) * rec.reward;
    ++s.n;
  }
  for (auto& s : stats) s.A = s.A.selfadjointView<Eigen::Lower>();
  return stats;
}

/// Pooled statistics over every record, regardless of participant.
inline ParticipantStats accumulate_pooled_stats(const std::vector<TrialRecord>& history,
                                                FeatureVariant variant) {
  const int d = design_dim(variant);
  ParticipantStats s{Mat::Zero(d, d), Vec::Zero(d), 0.0, 0};
  for (const auto& rec : history) {
    if (rec.reward < 0 || rec.reward > 3) throw InputDomainError("reward outside {0,1,2,3}");
    const DesignRow row = design_row(rec.state, rec.action, rec.pi, variant);
    s.A.selfadjointView<Eigen::Lower>().rankUpdate(row.phi);
    s.B += static_cast<double>(rec.reward) * row.phi;
    s.rr += static_cast<double>(rec.reward) * rec.reward;
    ++s.n;
  }
  s.A = s.A.selfadjointView<Eigen::Lower>();
  return s;
}

struct GaussianMarginal {
  Vec mean;
  Mat cov;
};

class JointPosterior {
 public:
  JointPosterior() = default;

  int participants() const { return static_cast<int>(own_cov_.size()); }
  int dim() const { return static_cast<int>(pop_mean_.size()); }

  const Vec& mean() const { return mean_; }
  const Vec& population_mean() const { return pop_mean_; }
  const Mat& population_cov() const { return pop_cov_; }
  const Mat& random_effect_cov() const { return sigma_u_; }
  const Mat& own_cov(int i) const { return own_cov_.at(i); }
  const Mat& transfer(int i) const { return transfer_.at(i); }

  Vec participant_mean(int i) const { return mean_.segment(i * dim(), dim()); }

  /// Covariance block Cov(theta_i, theta_j).
  Mat block(int i, int j) const {
    check_index(i);
    check_index(j);
    Mat b = transfer_[i] * pop_cov_ * transfer_[j].transpose();
    if (i == j) {
      b += own_cov_[i];
      symmetrize(b);
    }
    return b;
  }

  Mat dense_covariance() const {
    const int m = participants();
    const int d = dim();
    Mat full(m * d, m * d);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j <= i; ++j) {
        Mat b = block(i, j);
        full.block(i * d, j * d, d, d) = b;
        full.block(j * d, i * d, d, d) = b.transpose();
      }
    }
    return full;
  }

  /// Predictive distribution for a participant with no data yet:
  /// theta_pop posterior plus a fresh random effect.
  GaussianMarginal population_predictive() const {
    Mat cov = pop_cov_ + sigma_u_;
    symmetrize(cov);
    return {pop_mean_, cov};
  }

  // Raw factored state, used by serialization and the posterior builders.
  struct Parts {
    Vec mean;
    Vec pop_mean;
    Mat pop_cov;
    Mat sigma_u;
    std::vector<Mat> own_cov;
    std::vector<Mat> transfer;
  };

  static JointPosterior from_parts(Parts p) {
    JointPosterior j;
    j.mean_ = std::move(p.mean);
    j.pop_mean_ = std::move(p.pop_mean);
    j.pop_cov_ = std::move(p.pop_cov);
    j.sigma_u_ = std::move(p.sigma_u);
    j.own_cov_ = std::move(p.own_cov);
    j.transfer_ = std::move(p.transfer);
    const auto d = j.pop_mean_.size();
    if (j.own_cov_.size() != j.transfer_.size() ||
        static_cast<std::size_t>(j.mean_.size()) != j.own_cov_.size() * d) {
      throw InputDomainError("inconsistent posterior parts");
    }
    return j;
  }

  Parts parts() const { return {mean_, pop_mean_, pop_cov_, sigma_u_, own_cov_, transfer_}; }

 private:
  void check_index(int i) const {
    if (i < 0 || i >= participants()) {
      throw std::out_of_range("participant index " + std::to_string(i) + " out of range [0, " +
                              std::to_string(participants()) + ")");
    }
  }

  Vec mean_;
  Vec pop_mean_;
  Mat pop_cov_;
  Mat sigma_u_;
  std::vector<Mat> own_cov_;
  std::vector<Mat> transfer_;
};

inline GaussianMarginal participant_marginal(const JointPosterior& joint, int participant_index) {
  Mat cov = joint.block(participant_index, participant_index);
  return {joint.participant_mean(participant_index), std::move(cov)};
}

/// Slices the centered-advantage (beta) block out of a per-participant
/// marginal.
inline GaussianMarginal advantage_marginal(const GaussianMarginal& marginal, FeatureVariant variant) {
  const int d = design_dim(variant);
  if (marginal.mean.size() != d || marginal.cov.rows() != d || marginal.cov.cols() != d) {
    throw InputDomainError("marginal dimension " + std::to_string(marginal.mean.size()) +
                           " does not match variant dimension " + std::to_string(d));
  }
  const int off = advantage_offset(variant);
  const int df = advantage_dim(variant);
  return {marginal.mean.segment(off, df), marginal.cov.block(off, off, df, df)};
}

namespace detail {

/// Posterior of theta_pop given the information it receives from each
/// participant, plus the per-participant conditional factors.
inline JointPosterior assemble_mixed(const std::vector<ParticipantStats>& stats, const PriorSpec& prior,
                                     const Hyperparams& hyper) {
  const int d = prior.dim();
  const double y = 1.0 / hyper.sigma_eps2;
  const Mat& L = hyper.sigma_u_chol;
  const Mat eye = Mat::Identity(d, d);

  const SpdFactor prior_factor(prior.cov, "prior covariance");
  Mat precision = prior_factor.inverse();
  Vec shift = prior_factor.solve(prior.mean);

  const std::size_t m = stats.size();
  std::vector<Mat> own(m), transfer(m);
  std::vector<Vec> own_shift(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& s = stats[i];
    Mat inner = eye + y * (L.transpose() * s.A * L);
    symmetrize(inner);
    const SpdFactor inner_factor(inner, "random-effect information");
    Mat S = L * inner_factor.solve(L.transpose());
    symmetrize(S);
    Mat T = eye - y * S * s.A;
    Mat K = y * s.A * T;
    symmetrize(K);
    precision += K;
    shift += y * T.transpose() * s.B;
    own_shift[i] = y * S * s.B;
    own[i] = std::move(S);
    transfer[i] = std::move(T);
  }
  symmetrize(precision);
  const SpdFactor post_factor(precision, "posterior precision");
  JointPosterior::Parts p;
  p.pop_cov = post_factor.inverse();
  p.pop_mean = post_factor.solve(shift);
  p.sigma_u = hyper.sigma_u();
  p.mean.resize(static_cast<Eigen::Index>(m) * d);
  for (std::size_t i = 0; i < m; ++i) {
    p.mean.segment(static_cast<Eigen::Index>(i) * d, d) = transfer[i] * p.pop_mean + own_shift[i];
  }
  p.own_cov = std::move(own);
  p.transfer = std::move(transfer);
  return JointPosterior::from_parts(std::move(p));
}

}  // namespace detail

/// Verifies that the stacked prior covariance (Sigma_0 + Sigma_u on the
/// diagonal, Sigma_0 elsewhere) is positive definite. Its spectrum is that
/// of Sigma_u (multiplicity m-1) together with that of Sigma_u + m Sigma_0.
inline void check_stacked_prior(const PriorSpec& prior, const Hyperparams& hyper, int m) {
  if (!hyper.valid()) throw HyperparameterRejected("hyperparameters violate sigma^2 > 0 or diag(L) > 0");
  const Mat su = hyper.sigma_u();
  if (m >= 2) {
    const double ev = min_eigenvalue(su);
    if (!(ev > 0.0)) {
      throw HyperparameterRejected("stacked prior covariance not PD (Sigma_u eigenvalue " +
                                   std::to_string(ev) + ")");
    }
  }
  if (m >= 1) {
    const double ev = min_eigenvalue(su + static_cast<double>(m) * prior.cov);
    if (!(ev > 0.0)) {
      throw HyperparameterRejected("stacked prior covariance not PD (eigenvalue " + std::to_string(ev) + ")");
    }
  }
}

inline JointPosterior mixed_posterior_from_stats(const std::vector<ParticipantStats>& stats,
                                                 const PriorSpec& prior, const Hyperparams& hyper) {
  if (hyper.dim() != prior.dim()) throw InputDomainError("Sigma_u dimension does not match prior");
  check_stacked_prior(prior, hyper, static_cast<int>(stats.size()));
  return detail::assemble_mixed(stats, prior, hyper);
}

/// Mixed-effects posterior over every listed participant (one block each,
/// in list order). Participants without records get the prior-predictive
/// block.
inline JointPosterior mixed_posterior(const std::vector<TrialRecord>& history, const PriorSpec& prior,
                                      const Hyperparams& hyper, const std::vector<ParticipantId>& participants,
                                      FeatureVariant variant) {
  if (prior.dim() != design_dim(variant)) throw InputDomainError("prior dimension does not match variant");
  return mixed_posterior_from_stats(accumulate_stats(history, participants, variant), prior, hyper);
}

inline JointPosterior pooled_posterior_from_stats(const ParticipantStats& s, const PriorSpec& prior,
                                                  double sigma_eps2) {
  if (!(sigma_eps2 > 0.0)) throw InputDomainError("noise variance must be positive");
  const int d = prior.dim();
  const double y = 1.0 / sigma_eps2;
  const SpdFactor prior_factor(prior.cov, "prior covariance");
  Mat precision = prior_factor.inverse() + y * s.A;
  symmetrize(precision);
  const Vec rhs = prior_factor.solve(prior.mean) + y * s.B;
  const SpdFactor post_factor(precision, "posterior precision");
  JointPosterior::Parts p;
  p.pop_cov = post_factor.inverse();
  p.pop_mean = post_factor.solve(rhs);
  p.sigma_u = Mat::Zero(d, d);
  p.mean = p.pop_mean;
  p.own_cov = {Mat::Zero(d, d)};
  p.transfer = {Mat::Identity(d, d)};
  return JointPosterior::from_parts(std::move(p));
}

/// Single Bayesian linear regression over all records (one logical block).
inline JointPosterior pooled_posterior(const std::vector<TrialRecord>& history, const PriorSpec& prior,
                                       double sigma_eps2, FeatureVariant variant) {
  if (prior.dim() != design_dim(variant)) throw InputDomainError("prior dimension does not match variant");
  return pooled_posterior_from_stats(accumulate_pooled_stats(history, variant), prior, sigma_eps2);
}

// ---------------------------------------------------------------------------
// Snapshot serialization

/// A posterior snapshot as persisted by the decision service.
struct PosteriorSnapshot {
  JointPosterior posterior;
  Hyperparams hyper;
  long long record_count = 0;
  long long version = 0;
};

namespace detail {

inline void put_hex(std::string& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  out += buf;
}

inline void put_vec(std::string& out, const char* tag, const Vec& v) {
  out += tag;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out += ' ';
    put_hex(out, v(i));
  }
  out += '\n';
}

inline void put_mat(std::string& out, const char* tag, const Mat& m) {
  out += tag;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out += ' ';
      put_hex(out, m(i, j));
    }
  out += '\n';
}

class SnapshotReader {
 public:
  explicit SnapshotReader(std::string_view text) : in_(std::string(text)) {}

  void expect(const std::string& tag) {
    std::string got;
    if (!(in_ >> got) || got != tag) {
      throw InputDomainError("snapshot: expected '" + tag + "', found '" + got + "'");
    }
  }
  long long integer() {
    long long v;
    if (!(in_ >> v)) throw InputDomainError("snapshot: expected integer");
    return v;
  }
  double real() {
    std::string tok;
    if (!(in_ >> tok)) throw InputDomainError("snapshot: truncated");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) throw InputDomainError("snapshot: bad number '" + tok + "'");
    return v;
  }
  Vec vec(const std::string& tag, int n) {
    expect(tag);
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = real();
    return v;
  }
  Mat mat(const std::string& tag, int r, int c) {
    expect(tag);
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = real();
    return m;
  }

 private:
  std::istringstream in_;
};

}  // namespace detail

inline constexpr const char* kSnapshotMagic = "mrt-posterior";
inline constexpr int kSnapshotFormatVersion = 1;

/// Text encoding with hexadecimal floats; parse(serialize(s)) reproduces s
/// exactly.
inline std::string serialize_snapshot(const PosteriorSnapshot& s) {
  const auto p = s.posterior.parts();
  const int m = s.posterior.participants();
  const int d = s.posterior.dim();
  std::string out;
  out += std::string(kSnapshotMagic) + " v" + std::to_string(kSnapshotFormatVersion) + "\n";
  out += "version " + std::to_string(s.version) + "\n";
  out += "records " + std::to_string(s.record_count) + "\n";
  out += "m " + std::to_string(m) + "\nd " + std::to_string(d) + "\n";
  out += "sigma_eps2 ";
  detail::put_hex(out, s.hyper.sigma_eps2);
  out += "\nhyper_dim " + std::to_string(s.hyper.dim()) + "\n";
  detail::put_mat(out, "sigma_u_chol", s.hyper.sigma_u_chol);
  detail::put_vec(out, "pop_mean", p.pop_mean);
  detail::put_mat(out, "pop_cov", p.pop_cov);
  detail::put_mat(out, "sigma_u", p.sigma_u);
  for (int i = 0; i < m; ++i) {
    out += "participant " + std::to_string(i) + "\n";
    detail::put_vec(out, "mean", p.mean.segment(static_cast<Eigen::Index>(i) * d, d));
    detail::put_mat(out, "own_cov", p.own_cov[i]);
    detail::put_mat(out, "transfer", p.transfer[i]);
  }
  out += "end\n";
  return out;
}

inline PosteriorSnapshot parse_snapshot(std::string_view text) {
  detail::SnapshotReader r(text);
  r.expect(kSnapshotMagic);
  r.expect("v" + std::to_string(kSnapshotFormatVersion));
  PosteriorSnapshot s;
  r.expect("version");
  s.version = r.integer();
  r.expect("records");
  s.record_count = r.integer();
  r.expect("m");
  const int m = static_cast<int>(r.integer());
  r.expect("d");
  const int d = static_cast<int>(r.integer());
  if (m < 0 || d < 0) throw InputDomainError("snapshot: negative dimensions");
  r.expect("sigma_eps2");
  s.hyper.sigma_eps2 = r.real();
  r.expect("hyper_dim");
  const int hd = static_cast<int>(r.integer());
  s.hyper.sigma_u_chol = r.mat("sigma_u_chol", hd, hd);
  JointPosterior::Parts p;
  p.pop_mean = r.vec("pop_mean", d);
  p.pop_cov = r.mat("pop_cov", d, d);
  p.sigma_u = r.mat("sigma_u", d, d);
  p.mean.resize(static_cast<Eigen::Index>(m) * d);
  for (int i = 0; i < m; ++i) {
    r.expect("participant");
    if (r.integer() != i) throw InputDomainError("snapshot: participant blocks out of order");
    p.mean.segment(static_cast<Eigen::Index>(i) * d, d) = r.vec("mean", d);
    p.own_cov.push_back(r.mat("own_cov", d, d));
    p.transfer.push_back(r.mat("transfer", d, d));
  }
  r.expect("end");
  s.posterior = JointPosterior::from_parts(std::move(p));
  return s;
}

}  // namespace mrt
