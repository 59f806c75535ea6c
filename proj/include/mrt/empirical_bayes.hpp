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

// Empirical-Bayes update of (Sigma_u, sigma^2): maximize
//
//   l = log det X - log det(X + yA) + n log y - y sum R^2
//       - mu^T X mu + (X mu + yB)^T (X + yA)^-1 (X mu + yB)
//
// with X the inverse stacked prior covariance and y = 1/sigma^2. This
// equals -log det C - r^T C^-1 r for the reward covariance
// C = Phi Sigma_stacked Phi^T + sigma^2 I and residual r = R - Phi mu, i.e.
// twice the Gaussian marginal log-likelihood up to n log(2 pi). It is
// evaluated through the same per-participant factorization as the
// posterior, so one evaluation costs O(m d^3).

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/features.hpp"
#include "mrt/linalg.hpp"
#include "mrt/nelder_mead.hpp"
#include "mrt/posterior.hpp"
#include "mrt/prior.hpp"

namespace mrt {

struct MarginalLikelihoodInput {
  std::vector<TrialRecord> history;
  PriorSpec prior;
  FeatureVariant variant = FeatureVariant::kFull;
  std::vector<ParticipantId> participants;
};

namespace detail {

inline double strict_log_det(const Mat& m, const char* what) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
    throw HyperparameterRejected(std::string(what) + " is not positive definite");
  }
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// -log det C - r^T C^-1 r for random-effect factor L (may be zero, which
/// gives the pooled model when all records sit in a single group).
inline double structured_loglik(const std::vector<ParticipantStats>& stats, const PriorSpec& prior,
                                const Mat& L, double sigma_eps2) {
  const int d = prior.dim();
  const double y = 1.0 / sigma_eps2;
  const Mat eye = Mat::Identity(d, d);
  const Vec& mu = prior.mean;

  Eigen::LLT<Mat> prior_llt(prior.cov);
  if (prior_llt.info() != Eigen::Success) throw HyperparameterRejected("prior covariance is not PD");
  Mat precision = prior_llt.solve(eye);
  double log_det_c = 2.0 * prior_llt.matrixLLT().diagonal().array().log().sum();
  Vec g = Vec::Zero(d);
  double quad = 0.0;
  long long n = 0;

  for (const auto& s : stats) {
    n += s.n;
    const Vec b = s.B - s.A * mu;
    const double rr = s.rr - 2.0 * mu.dot(s.B) + mu.dot(s.A * mu);
    Mat inner = eye + y * (L.transpose() * s.A * L);
    symmetrize(inner);
    Eigen::LLT<Mat> inner_llt(inner);
    if (inner_llt.info() != Eigen::Success) throw HyperparameterRejected("random-effect block not PD");
    log_det_c += 2.0 * inner_llt.matrixLLT().diagonal().array().log().sum();
    Mat S = L * inner_llt.solve(L.transpose());
    symmetrize(S);
    quad += y * rr - y * y * b.dot(S * b);
    const Mat T = eye - y * S * s.A;
    Mat K = y * s.A * T;
    symmetrize(K);
    precision += K;
    g += y * T.transpose() * b;
  }
  symmetrize(precision);
  Eigen::LLT<Mat> post_llt(precision);
  if (post_llt.info() != Eigen::Success || !(post_llt.matrixLLT().diagonal().minCoeff() > 0.0)) {
    throw HyperparameterRejected("X + yA is not positive definite");
  }
  log_det_c += 2.0 * post_llt.matrixLLT().diagonal().array().log().sum();
  quad -= g.dot(post_llt.solve(g));
  log_det_c += static_cast<double>(n) * std::log(sigma_eps2);
  return -log_det_c - quad;
}

}  // namespace detail

inline double marginal_loglik_from_stats(const std::vector<ParticipantStats>& stats, const PriorSpec& prior,
                                         const Hyperparams& hyper) {
  check_stacked_prior(prior, hyper, static_cast<int>(stats.size()));
  return detail::structured_loglik(stats, prior, hyper.sigma_u_chol, hyper.sigma_eps2);
}

/// l(Sigma_u, sigma^2; H) for the mixed-effects model.
inline double marginal_loglik(const MarginalLikelihoodInput& input, const Hyperparams& hyper) {
  return marginal_loglik_from_stats(accumulate_stats(input.history, input.participants, input.variant),
                                    input.prior, hyper);
}

/// Noise-variance objective of the pooled model (same expression with the
/// random effects removed; differs from the pooled-only form by a
/// sigma-independent constant).
inline double pooled_loglik_from_stats(const ParticipantStats& stats, const PriorSpec& prior,
                                       double sigma_eps2) {
  if (!(sigma_eps2 > 0.0)) throw HyperparameterRejected("sigma^2 must be positive");
  const int d = prior.dim();
  return detail::structured_loglik({stats}, prior, Mat::Zero(d, d), sigma_eps2);
}

inline double pooled_loglik(const std::vector<TrialRecord>& history, const PriorSpec& prior,
                            FeatureVariant variant, double sigma_eps2) {
  return pooled_loglik_from_stats(accumulate_pooled_stats(history, variant), prior, sigma_eps2);
}

// ---------------------------------------------------------------------------
// Optimization

struct EmpiricalBayesOptions {
  int max_evaluations = 500;
  double tolerance = 1e-6;
  double min_sigma_eps2 = 1e-3;
  double max_sigma_eps2 = 1e3;
  double min_random_effect_sd = 1e-4;
  double max_random_effect_sd = 10.0;
  double log_step = 0.5;
  double offdiag_step = 0.05;
};

struct HyperUpdate {
  Hyperparams hyper;
  bool accepted = false;  // false: init returned unchanged
  std::string reason;
  double loglik_init = -std::numeric_limits<double>::infinity();
  double loglik = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

/// Unconstrained coordinates: [log sigma^2, vech(L) row-major with log
/// diagonal].
inline Vec pack_hyperparams(const Hyperparams& h) {
  const int d = h.dim();
  Vec x(1 + d * (d + 1) / 2);
  int k = 0;
  x(k++) = std::log(h.sigma_eps2);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) x(k++) = i == j ? std::log(h.sigma_u_chol(i, i)) : h.sigma_u_chol(i, j);
  return x;
}

inline Hyperparams unpack_hyperparams(const Vec& x, int d) {
  Hyperparams h;
  h.sigma_u_chol = Mat::Zero(d, d);
  int k = 0;
  h.sigma_eps2 = std::exp(x(k++));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) h.sigma_u_chol(i, j) = i == j ? std::exp(x(k++)) : x(k++);
  return h;
}

namespace detail {
inline bool finite_eval(const std::function<double()>& f, double& out) {
  try {
    out = f();
    return std::isfinite(out);
  } catch (const HyperparameterRejected&) {
    return false;
  } catch (const NumericalFailure&) {
    return false;
  }
}
}  // namespace detail

inline HyperUpdate optimize_hyperparams_from_stats(const std::vector<ParticipantStats>& stats,
                                                   const PriorSpec& prior, const Hyperparams& init,
                                                   const EmpiricalBayesOptions& opt = {}) {
  HyperUpdate out;
  out.hyper = init;
  long long n = 0;
  for (const auto& s : stats) n += s.n;
  if (n == 0) {
    out.reason = "no records";
    return out;
  }
  const int d = prior.dim();
  if (init.dim() != d) throw InputDomainError("init Sigma_u dimension does not match prior");
  if (!detail::finite_eval([&] { return marginal_loglik_from_stats(stats, prior, init); }, out.loglik_init)) {
    out.reason = "initial hyperparameters rejected";
    return out;
  }
  out.loglik = out.loglik_init;

  const Vec x0 = pack_hyperparams(init);
  const int p = static_cast<int>(x0.size());
  NelderMeadOptions nm;
  nm.max_evaluations = opt.max_evaluations;
  nm.tolerance = opt.tolerance;
  nm.initial_step = Vec::Constant(p, opt.offdiag_step);
  nm.lower = Vec::Constant(p, -10.0);
  nm.upper = Vec::Constant(p, 10.0);
  nm.initial_step(0) = opt.log_step;
  nm.lower(0) = std::log(opt.min_sigma_eps2);
  nm.upper(0) = std::log(opt.max_sigma_eps2);
  for (int i = 0, k = 1; i < d; ++i)
    for (int j = 0; j <= i; ++j, ++k)
      if (i == j) {
        nm.initial_step(k) = opt.log_step;
        nm.lower(k) = std::log(opt.min_random_effect_sd);
        nm.upper(k) = std::log(opt.max_random_effect_sd);
      }
  // Keep x0 feasible so it stays a simplex vertex.
  const Vec start = x0.cwiseMax(nm.lower).cwiseMin(nm.upper);

  auto objective = [&](const Vec& x) {
    double l;
    const Hyperparams h = unpack_hyperparams(x, d);
    if (!detail::finite_eval([&] { return marginal_loglik_from_stats(stats, prior, h); }, l)) {
      return std::numeric_limits<double>::infinity();
    }
    return -l;
  };
  const NelderMeadResult r = nelder_mead(objective, start, nm);
  out.evaluations = r.evaluations;

  const Hyperparams best = unpack_hyperparams(r.x, d);
  double l_best;
  const bool ok = detail::finite_eval(
      [&] {
        check_stacked_prior(prior, best, static_cast<int>(stats.size()));
        return marginal_loglik_from_stats(stats, prior, best);
      },
      l_best);
  if (!ok) {
    out.reason = "optimum failed positive-definiteness checks";
    return out;
  }
  if (l_best < out.loglik_init - 1e-9) {
    out.reason = "optimizer did not improve on the initial value";
    return out;
  }
  out.hyper = best;
  out.loglik = l_best;
  out.accepted = true;
  out.reason = r.converged ? "converged" : "evaluation budget exhausted";
  return out;
}

/// Maximizes the marginal likelihood over Sigma_u (via its Cholesky factor)
/// and sigma^2. On any failure returns `init` with accepted = false.
inline HyperUpdate optimize_hyperparams(const MarginalLikelihoodInput& input, const Hyperparams& init,
                                        const EmpiricalBayesOptions& opt = {}) {
  return optimize_hyperparams_from_stats(accumulate_stats(input.history, input.participants, input.variant),
                                         input.prior, init, opt);
}

struct NoiseUpdate {
  double sigma_eps2 = kInitialNoiseVariance;
  bool accepted = false;
  std::string reason;
  double loglik_init = -std::numeric_limits<double>::infinity();
  double loglik = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

inline NoiseUpdate pooled_noise_update_from_stats(const ParticipantStats& stats, const PriorSpec& prior,
                                                  double init_sigma2, const EmpiricalBayesOptions& opt = {}) {
  NoiseUpdate out;
  out.sigma_eps2 = init_sigma2;
  if (stats.n == 0) {
    out.reason = "no records";
    return out;
  }
  if (!detail::finite_eval([&] { return pooled_loglik_from_stats(stats, prior, init_sigma2); }, out.loglik_init)) {
    out.reason = "initial noise variance rejected";
    return out;
  }
  out.loglik = out.loglik_init;
  NelderMeadOptions nm;
  nm.max_evaluations = opt.max_evaluations;
  nm.tolerance = opt.tolerance;
  nm.initial_step = Vec::Constant(1, opt.log_step);
  nm.lower = Vec::Constant(1, std::log(opt.min_sigma_eps2));
  nm.upper = Vec::Constant(1, std::log(opt.max_sigma_eps2));
  const Vec start = Vec::Constant(1, std::log(init_sigma2)).cwiseMax(nm.lower).cwiseMin(nm.upper);
  auto objective = [&](const Vec& x) {
    double l;
    if (!detail::finite_eval([&] { return pooled_loglik_from_stats(stats, prior, std::exp(x(0))); }, l)) {
      return std::numeric_limits<double>::infinity();
    }
    return -l;
  };
  const NelderMeadResult r = nelder_mead(objective, start, nm);
  out.evaluations = r.evaluations;
  const double s2 = std::exp(r.x(0));
  double l_best;
  if (!detail::finite_eval([&] { return pooled_loglik_from_stats(stats, prior, s2); }, l_best) ||
      l_best < out.loglik_init - 1e-9) {
    out.reason = "optimizer did not improve on the initial value";
    return out;
  }
  out.sigma_eps2 = s2;
  out.loglik = l_best;
  out.accepted = true;
  out.reason = r.converged ? "converged" : "evaluation budget exhausted";
  return out;
}

/// Noise-variance update for the pooled model.
inline NoiseUpdate pooled_noise_update(const std::vector<TrialRecord>& history, const PriorSpec& prior,
                                       FeatureVariant variant, double init_sigma2,
                                       const EmpiricalBayesOptions& opt = {}) {
  return pooled_noise_update_from_stats(accumulate_pooled_stats(history, variant), prior, init_sigma2, opt);
}

}  // namespace mrt
