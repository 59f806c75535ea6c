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

#include <algorithm>
#include <numeric>

#include "mrt/posterior.hpp"
#include "oracles.hpp"

namespace mrt {
namespace {

using oracle::max_abs;

PriorSpec toy_prior(int d, double var = 1.0) { return {Vec::Zero(d), var * Mat::Identity(d, d)}; }

ParticipantStats toy_stats(const std::vector<double>& rewards) {
  ParticipantStats s{Mat::Zero(1, 1), Vec::Zero(1), 0.0, 0};
  for (double r : rewards) {
    s.A(0, 0) += 1.0;
    s.B(0) += r;
    s.rr += r * r;
    ++s.n;
  }
  return s;
}

std::vector<TrialRecord> random_history(std::uint64_t seed, const std::vector<ParticipantId>& ids, int t) {
  KeyedStream rng(RngKey(seed).with(Stream::kTest));
  std::vector<TrialRecord> h;
  for (int k = 1; k <= t; ++k)
    for (const auto& id : ids) {
      TrialRecord r;
      r.participant = id;
      r.t = k;
      r.state = {static_cast<int>(rng.below(2)), (k + 1) % 2, static_cast<int>(rng.below(2))};
      r.pi = 0.2 + 0.6 * rng.uniform();
      r.action = rng.bernoulli(r.pi) ? 1 : 0;
      r.reward = static_cast<int>(rng.below(4));
      h.push_back(r);
    }
  return h;
}

TEST(PooledPosterior, EmptyHistoryIsPrior) {
  const PriorSpec prior = default_prior(FeatureVariant::kOneWay);
  const JointPosterior p = pooled_posterior({}, prior, 0.85, FeatureVariant::kOneWay);
  EXPECT_EQ(p.participants(), 1);
  EXPECT_LT(max_abs(p.participant_mean(0) - prior.mean), 1e-14);
  EXPECT_LT(max_abs(p.block(0, 0) - prior.cov), 1e-14);
}

TEST(PooledPosterior, OneDimensionalConjugateByHand) {
  const JointPosterior p = pooled_posterior_from_stats(toy_stats({2.0}), toy_prior(1), 1.0);
  EXPECT_NEAR(p.participant_mean(0)(0), 1.0, 1e-14);
  EXPECT_NEAR(p.block(0, 0)(0, 0), 0.5, 1e-14);
}

TEST(PooledPosterior, ShrinksTowardSampleMean) {
  KeyedStream rng(RngKey(5).with(Stream::kTest));
  std::vector<double> r;
  for (int i = 0; i < 100; ++i) r.push_back(rng.normal(1.7, 1.0));
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / r.size();
  const JointPosterior p = pooled_posterior_from_stats(toy_stats(r), toy_prior(1), 1.0);
  // Exact conjugate shrinkage: n/(n+1) * mean.
  EXPECT_NEAR(p.participant_mean(0)(0), mean * 100.0 / 101.0, 1e-12);
  EXPECT_LT(std::abs(p.participant_mean(0)(0) - mean), 3.0 / std::sqrt(100.0));
}

TEST(PooledPosterior, MatchesConjugateOracleOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto in = oracle::random_instance(seed, 2, 1 + seed % 4, 1 + seed % 5);
    const auto want = oracle::conjugate_update(in);
    const JointPosterior got = pooled_posterior_from_stats(oracle::pooled_stats_of(in), oracle::prior_of(in), in.sigma2);
    EXPECT_LT(max_abs(got.participant_mean(0) - want.mean), 1e-10) << "seed " << seed;
    EXPECT_LT(max_abs(got.block(0, 0) - want.cov), 1e-10) << "seed " << seed;
  }
}

TEST(MixedPosterior, MatchesBruteForceConditioning) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const int m = 1 + seed % 3, d = 1 + (seed / 3) % 4, t = seed % 5;
    auto in = oracle::random_instance(seed, m, d, t);
    const auto want = oracle::condition_joint(in);
    const JointPosterior got = mixed_posterior_from_stats(oracle::stats_of(in), oracle::prior_of(in), oracle::hyper_of(in));
    EXPECT_LT(max_abs(got.mean() - want.mean), 1e-8) << "seed " << seed;
    EXPECT_LT(max_abs(got.dense_covariance() - want.cov), 1e-8) << "seed " << seed;
  }
}

TEST(MixedPosterior, RecordApiMatchesOracle) {
  const auto v = FeatureVariant::kInterceptAdvantage;
  const std::vector<ParticipantId> ids = {"a", "b", "c"};
  const auto history = random_history(3, ids, 4);
  const PriorSpec prior = default_prior(v);
  Hyperparams h = initial_hyperparams(prior.dim());
  h.sigma_u_chol *= 2.0;
  oracle::Instance in;
  in.m = 3;
  in.d = prior.dim();
  in.prior_mean = prior.mean;
  in.prior_cov = prior.cov;
  in.sigma_u = h.sigma_u();
  in.sigma2 = h.sigma_eps2;
  for (const auto& r : history) {
    in.rows.push_back(design_row(r.state, r.action, r.pi, v).phi);
    in.owner.push_back(static_cast<int>(std::find(ids.begin(), ids.end(), r.participant) - ids.begin()));
    in.reward.push_back(r.reward);
  }
  const auto want = oracle::condition_joint(in);
  const JointPosterior got = mixed_posterior(history, prior, h, ids, v);
  EXPECT_LT(max_abs(got.mean() - want.mean), 1e-8);
  EXPECT_LT(max_abs(got.dense_covariance() - want.cov), 1e-8);
}

TEST(MixedPosterior, NoDataMarginalsArePriorPredictive) {
  const PriorSpec prior = default_prior(FeatureVariant::kOneWay);
  const Hyperparams h = initial_hyperparams(prior.dim());
  const JointPosterior p = mixed_posterior({}, prior, h, {"x", "y"}, FeatureVariant::kOneWay);
  for (int i = 0; i < 2; ++i) {
    const auto g = participant_marginal(p, i);
    EXPECT_LT(max_abs(g.mean - prior.mean), 1e-12);
    EXPECT_LT(max_abs(g.cov - (prior.cov + h.sigma_u())), 1e-12);
  }
  EXPECT_LT(max_abs(p.block(0, 1) - prior.cov), 1e-12);
  const auto pred = p.population_predictive();
  EXPECT_LT(max_abs(pred.cov - (prior.cov + h.sigma_u())), 1e-12);
}

TEST(MixedPosterior, PoolingLimit) {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    auto in = oracle::random_instance(seed, 3, 3, 4);
    in.sigma_u = 1e-6 * Mat::Identity(3, 3);
    const JointPosterior mixed = mixed_posterior_from_stats(oracle::stats_of(in), oracle::prior_of(in), oracle::hyper_of(in));
    const JointPosterior pooled =
        pooled_posterior_from_stats(oracle::pooled_stats_of(in), oracle::prior_of(in), in.sigma2);
    for (int i = 0; i < 3; ++i) {
      EXPECT_LT(max_abs(mixed.participant_mean(i) - pooled.participant_mean(0)), 1e-3);
      EXPECT_LT(max_abs(mixed.block(i, i) - pooled.block(0, 0)), 1e-3);
    }
  }
}

TEST(MixedPosterior, SymmetricAndPositiveDefinite) {
  for (std::uint64_t seed = 200; seed < 220; ++seed) {
    auto in = oracle::random_instance(seed, 3, 4, 3);
    const Mat c = mixed_posterior_from_stats(oracle::stats_of(in), oracle::prior_of(in), oracle::hyper_of(in))
                      .dense_covariance();
    EXPECT_LT(max_abs(c - c.transpose()), 1e-12);
    EXPECT_GT(min_eigenvalue(c), 0.0);
  }
}

TEST(MixedPosterior, PermutationEquivariant) {
  auto in = oracle::random_instance(7, 3, 2, 4);
  const auto base = mixed_posterior_from_stats(oracle::stats_of(in), oracle::prior_of(in), oracle::hyper_of(in));
  auto stats = oracle::stats_of(in);
  std::swap(stats[0], stats[2]);
  const auto perm = mixed_posterior_from_stats(stats, oracle::prior_of(in), oracle::hyper_of(in));
  EXPECT_LT(max_abs(perm.participant_mean(0) - base.participant_mean(2)), 1e-12);
  EXPECT_LT(max_abs(perm.participant_mean(2) - base.participant_mean(0)), 1e-12);
  EXPECT_LT(max_abs(perm.block(0, 2) - base.block(2, 0)), 1e-12);
  EXPECT_LT(max_abs(perm.block(1, 1) - base.block(1, 1)), 1e-12);
}

TEST(MixedPosterior, MoreDataNeverIncreasesVariance) {
  for (std::uint64_t seed = 300; seed < 320; ++seed) {
    auto full = oracle::random_instance(seed, 2, 3, 5);
    auto part = full;
    part.rows.resize(full.rows.size() - 3);
    part.owner.resize(part.rows.size());
    part.reward.resize(part.rows.size());
    const Mat c_full = mixed_posterior_from_stats(oracle::stats_of(full), oracle::prior_of(full), oracle::hyper_of(full))
                           .dense_covariance();
    const Mat c_part = mixed_posterior_from_stats(oracle::stats_of(part), oracle::prior_of(part), oracle::hyper_of(part))
                           .dense_covariance();
    for (int k = 0; k < c_full.rows(); ++k) EXPECT_LE(c_full(k, k), c_part(k, k) + 1e-12);
  }
}

TEST(MixedPosterior, BlockIgnoresRowOrderWithinOtherParticipants) {
  const std::vector<ParticipantId> ids = {"a", "b", "c"};
  auto history = random_history(11, ids, 4);
  const auto v = FeatureVariant::kOneWay;
  const PriorSpec prior = default_prior(v);
  const Hyperparams h = initial_hyperparams(prior.dim());
  const auto before = participant_marginal(mixed_posterior(history, prior, h, ids, v), 0);
  std::vector<TrialRecord> b_rows, rest;
  for (const auto& r : history) (r.participant == "b" ? b_rows : rest).push_back(r);
  std::reverse(b_rows.begin(), b_rows.end());
  rest.insert(rest.end(), b_rows.begin(), b_rows.end());
  const auto after = participant_marginal(mixed_posterior(rest, prior, h, ids, v), 0);
  EXPECT_LT(max_abs(after.mean - before.mean), 1e-12);
  EXPECT_LT(max_abs(after.cov - before.cov), 1e-12);
}

TEST(MixedPosterior, ReplayIsBitForBit) {
  const std::vector<ParticipantId> ids = {"a", "b"};
  const auto history = random_history(13, ids, 6);
  const auto v = FeatureVariant::kFull;
  const PriorSpec prior = default_prior(v);
  const Hyperparams h = initial_hyperparams(prior.dim());
  const PosteriorSnapshot s1{mixed_posterior(history, prior, h, ids, v), h, 12, 3};
  const PosteriorSnapshot s2{mixed_posterior(history, prior, h, ids, v), h, 12, 3};
  EXPECT_EQ(serialize_snapshot(s1), serialize_snapshot(s2));
}

TEST(MixedPosterior, RejectsSingularRandomEffects) {
  const PriorSpec prior = toy_prior(2);
  Hyperparams h = initial_hyperparams(2);
  h.sigma_u_chol(1, 1) = 0.0;
  EXPECT_THROW(mixed_posterior_from_stats({toy_stats({}), toy_stats({})}, prior, h), HyperparameterRejected);
  h.sigma_eps2 = -1.0;
  EXPECT_THROW(check_stacked_prior(prior, h, 1), HyperparameterRejected);
}

TEST(MixedPosterior, UnregisteredParticipantIsAnError) {
  const auto history = random_history(1, {"a", "zz"}, 1);
  EXPECT_THROW(accumulate_stats(history, {"a"}, FeatureVariant::kFull), InputDomainError);
  EXPECT_THROW(accumulate_stats({}, {"a", "a"}, FeatureVariant::kFull), InputDomainError);
}

TEST(ParticipantMarginal, SingleBlockIsIdentityExtraction) {
  auto in = oracle::random_instance(21, 1, 3, 3);
  const auto p = pooled_posterior_from_stats(oracle::pooled_stats_of(in), oracle::prior_of(in), in.sigma2);
  const auto g = participant_marginal(p, 0);
  EXPECT_EQ(g.mean, p.mean());
  EXPECT_EQ(g.cov, p.dense_covariance());
  EXPECT_THROW(participant_marginal(p, 1), std::out_of_range);
  EXPECT_THROW(participant_marginal(p, -1), std::out_of_range);
}

TEST(AdvantageMarginal, IndexArithmetic) {
  const int d2 = design_dim(FeatureVariant::kInterceptAdvantage);
  GaussianMarginal g{Vec::LinSpaced(d2, 0, d2 - 1), Mat::Zero(d2, d2)};
  for (int i = 0; i < d2; ++i) g.cov(i, i) = 10 + i;
  const auto a2 = advantage_marginal(g, FeatureVariant::kInterceptAdvantage);
  ASSERT_EQ(a2.mean.size(), 1);
  EXPECT_EQ(a2.mean(0), 4.0);
  EXPECT_EQ(a2.cov(0, 0), 14.0);

  const int d0 = design_dim(FeatureVariant::kFull);
  GaussianMarginal g0{Vec::LinSpaced(d0, 0, d0 - 1), Mat::Identity(d0, d0)};
  const auto a0 = advantage_marginal(g0, FeatureVariant::kFull);
  EXPECT_EQ(a0.mean, Vec::LinSpaced(8, 8, 15));

  // Re-embedding the slice leaves the marginal unchanged.
  GaussianMarginal back = g0;
  back.mean.segment(8, 8) = a0.mean;
  back.cov.block(8, 8, 8, 8) = a0.cov;
  EXPECT_EQ(back.mean, g0.mean);
  EXPECT_EQ(back.cov, g0.cov);

  EXPECT_THROW(advantage_marginal(g, FeatureVariant::kFull), InputDomainError);
}

TEST(Snapshot, RoundTripsExactly) {
  const std::vector<ParticipantId> ids = {"a", "b", "c"};
  const auto history = random_history(17, ids, 5);
  const auto v = FeatureVariant::kOneWay;
  const PriorSpec prior = default_prior(v);
  Hyperparams h = initial_hyperparams(prior.dim());
  h.sigma_u_chol(3, 1) = 0.0123456789;
  const PosteriorSnapshot s{mixed_posterior(history, prior, h, ids, v), h, 15, 9};
  const std::string text = serialize_snapshot(s);
  const PosteriorSnapshot back = parse_snapshot(text);
  EXPECT_EQ(serialize_snapshot(back), text);
  EXPECT_EQ(back.version, 9);
  EXPECT_EQ(back.record_count, 15);
  EXPECT_EQ(back.posterior.mean(), s.posterior.mean());
  EXPECT_EQ(back.posterior.dense_covariance(), s.posterior.dense_covariance());
  EXPECT_EQ(back.hyper.sigma_u_chol, h.sigma_u_chol);
  EXPECT_THROW(parse_snapshot("mrt-posterior v2\n"), InputDomainError);
  EXPECT_THROW(parse_snapshot(text.substr(0, text.size() / 2)), InputDomainError);
}

}  // namespace
}  // namespace mrt
