#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "volcast/ensemble.hpp"

using namespace volcast;

TEST(EnsemblePredict, HandComputedMixture) {
  const auto e = ensemble_predict({{1.0, 0.5}, {3.0, 1.5}});
  EXPECT_DOUBLE_EQ(e.mean, 2.0);
  // mean variance 1, spread of means 1
  EXPECT_DOUBLE_EQ(e.predictive_variance, 2.0);
  EXPECT_DOUBLE_EQ(e.disagreement(), 1.0);
}

TEST(EnsemblePredict, SingleMemberCollapsesExactly) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 1000; ++i) {
    const MemberForecast m{u(rng), std::fabs(u(rng))};
    const auto e = ensemble_predict({m});
    EXPECT_EQ(e.mean, m.mean);
    EXPECT_EQ(e.predictive_variance, m.variance);
  }
}

TEST(EnsemblePredict, MatchesRawSecondMomentForm) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 500; ++i) {
    std::vector<MemberForecast> ms(2 + i % 9);
    long double mean = 0, second = 0;
    for (auto& m : ms) {
      m = {4 * u(rng) - 2, u(rng)};
      mean += m.mean;
      second += static_cast<long double>(m.mean) * m.mean + m.variance;
    }
    mean /= ms.size();
    second /= ms.size();
    EXPECT_NEAR(ensemble_predict(ms).predictive_variance, static_cast<double>(second - mean * mean), 1e-12);
  }
}

TEST(EnsemblePredict, MonteCarloMixtureVariance) {
  std::mt19937_64 rng(3);
  const std::vector<MemberForecast> ms{{-1.0, 0.2}, {0.5, 0.7}, {2.0, 0.1}, {0.0, 1.3}, {0.3, 0.4}};
  const auto e = ensemble_predict(ms);
  std::uniform_int_distribution<std::size_t> pick(0, ms.size() - 1);
  std::normal_distribution<double> z(0, 1);
  const int n = 2'000'000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const auto& m = ms[pick(rng)];
    const double y = m.mean + std::sqrt(m.variance) * z(rng);
    s += y;
    s2 += y * y;
  }
  const double var = s2 / n - (s / n) * (s / n);
  EXPECT_NEAR(var / e.predictive_variance, 1.0, 0.01);
  EXPECT_NEAR(s / n, e.mean, 0.01);
}

TEST(EnsemblePredict, RejectsBadInput) {
  EXPECT_THROW(ensemble_predict({}), ContractError);
  EXPECT_THROW(ensemble_predict({{0.0, -1.0}}), DomainError);
  EXPECT_THROW(ensemble_predict({{std::nan(""), 1.0}}), DomainError);
}

TEST(EnsembleDecompose, SpreadCountsAsEpistemic) {
  const UncertaintyReport a{1.0, 0.3, 0.2, 0.5, {}, {}}, b{3.0, 0.5, 0.5, 1.0, {}, {}};
  const auto r = ensemble_decompose({a, b});
  EXPECT_DOUBLE_EQ(r.prediction, 2.0);
  EXPECT_DOUBLE_EQ(r.aleatoric, 0.4);
  EXPECT_DOUBLE_EQ(r.epistemic, 0.35 + 1.0);
  EXPECT_DOUBLE_EQ(r.predictive, 0.75 + 1.0);
  EXPECT_NEAR(r.aleatoric + r.epistemic, r.predictive, 1e-15);
}

TEST(EnsembleNll, SingleAndDuplicatedMembersEqualMemberNll) {
  const DistributionParams p = SMDParams{0.1, 0.4, 3.0, 1.5};
  EXPECT_NEAR(ensemble_nll(0.7, {p}), nll(0.7, p), 1e-14);
  EXPECT_NEAR(ensemble_nll(0.7, {p, p, p}), nll(0.7, p), 1e-14);
}

TEST(EnsembleNll, HandComputedGaussianMixture) {
  const DistributionParams a = GaussianParams{0.0, 1.0}, b = GaussianParams{2.0, 4.0};
  const double pa = std::exp(-0.5) / std::sqrt(2 * M_PI), pb = std::exp(-1.0 / 8.0) / std::sqrt(8 * M_PI);
  EXPECT_NEAR(ensemble_nll(1.0, {a, b}), -std::log(0.5 * (pa + pb)), 1e-14);
}

TEST(EnsembleNll, StableFarInTheTails) {
  const DistributionParams a = GaussianParams{0.0, 1e-4}, b = GaussianParams{0.1, 1e-4};
  const double v = ensemble_nll(10.0, {a, b});
  EXPECT_TRUE(std::isfinite(v));
  // Dominated by member b: (9.9)^2 / 2e-4 plus normalisers.
  EXPECT_NEAR(v, nll(10.0, b) + std::log(2.0), 1e-6 * v);
}

TEST(EnsembleNll, MomentMatchedIsGaussianWithEnsembleMoments) {
  const auto e = ensemble_predict({{1.0, 0.5}, {3.0, 1.5}});
  EXPECT_DOUBLE_EQ(moment_matched_nll(2.5, e), gaussian_nll(2.5, {2.0, 2.0}));
}
