// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ncvsd/gmm.hpp"
#include "ncvsd/verify.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace ncvsd {
namespace {

GaussianMixture standard_normal_prior(Eigen::Index d) {
  return GaussianMixture({1.0}, {Vec::Zero(d)}, {Mat::Identity(d, d)});
}

GaussianMixture mirrored_modes() { return GaussianMixture({0.5, 0.5}, {Vec{{-2.0}}, Vec{{2.0}}}, {Mat{{0.1}}, Mat{{0.1}}}); }

Vec vec1(double v) { return Vec{{v}}; }

/// Brute-force 1D posterior moments on a fine grid.
struct GridMoments {
  double mass_right = 0.0;
  double mean = 0.0;
};

GridMoments grid_posterior_1d(const GaussianMixture& prior, double y, double sigma) {
  double z = 0.0, m = 0.0, right = 0.0;
  const double h = 1e-4;
  for (double x = -12.0; x <= 12.0; x += h) {
    const double lik = std::exp(-0.5 * (y - x) * (y - x) / (sigma * sigma));
    const double w = std::exp(prior.log_density(vec1(x))) * lik;
    z += w;
    m += w * x;
    if (x > 0.0) right += w;
  }
  return {right / z, m / z};
}

TEST(MarginalAtNoise, SingleStandardNormalDoublesVariance) {
  const auto out = marginal_at_noise(standard_normal_prior(2), NoiseLevel(1.0));
  EXPECT_TRUE(out.covariances()[0].isApprox(2.0 * Mat::Identity(2, 2)));
}

TEST(MarginalAtNoise, AddsVarianceKeepsWeights) {
  const auto gmm = GaussianMixture({0.3, 0.7}, {vec1(-1.0), vec1(1.0)}, {Mat{{0.2}}, Mat{{0.5}}});
  const auto out = marginal_at_noise(gmm, NoiseLevel(0.5));
  EXPECT_DOUBLE_EQ(out.covariances()[0](0, 0), 0.45);
  EXPECT_DOUBLE_EQ(out.covariances()[1](0, 0), 0.75);
  EXPECT_EQ(out.weights(), gmm.weights());
}

TEST(MarginalAtNoise, TinyNoiseLeavesCovariances) {
  const auto gmm = ring_mixture();
  const auto out = marginal_at_noise(gmm, NoiseLevel(1e-9));
  for (std::size_t k = 0; k < gmm.components(); ++k)
    EXPECT_TRUE(out.covariances()[k].isApprox(gmm.covariances()[k], 1e-12));
}

TEST(DenoisingPosterior, GaussianConjugacy) {
  const auto post = denoising_posterior(standard_normal_prior(1), {vec1(2.0), NoiseLevel(1.0)});
  ASSERT_EQ(post.components(), 1u);
  EXPECT_NEAR(post.means()[0][0], 1.0, 1e-14);
  EXPECT_NEAR(post.covariances()[0](0, 0), 0.5, 1e-14);
}

TEST(DenoisingPosterior, HugeNoiseReturnsPrior) {
  const auto gmm = GaussianMixture({0.2, 0.8}, {vec1(-1.0), vec1(3.0)}, {Mat{{0.3}}, Mat{{0.6}}});
  const auto post = denoising_posterior(gmm, {vec1(0.7), NoiseLevel(1e6)});
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(post.weights()[k], gmm.weights()[k], 1e-9);
    EXPECT_NEAR(post.means()[k][0], gmm.means()[k][0], 1e-9);
    EXPECT_NEAR(post.covariances()[k](0, 0), gmm.covariances()[k](0, 0), 1e-9);
  }
}

TEST(DenoisingPosterior, TwoModesMatchGridQuadrature) {
  const auto gmm = mirrored_modes();
  const auto post = denoising_posterior(gmm, {vec1(1.5), NoiseLevel(0.5)});
  const GridMoments ref = grid_posterior_1d(gmm, 1.5, 0.5);
  EXPECT_NEAR(post.weights()[1], ref.mass_right, 1e-6);
  EXPECT_NEAR(posterior_mean(gmm, {vec1(1.5), NoiseLevel(0.5)})[0], ref.mean, 1e-6);
}

TEST(PosteriorMean, ConjugateAndSmallNoiseLimits) {
  EXPECT_NEAR(posterior_mean(standard_normal_prior(1), {vec1(2.0), NoiseLevel(1.0)})[0], 1.0, 1e-14);
  const Vec y{{0.4, -0.2}};
  EXPECT_TRUE(posterior_mean(ring_mixture(), {y, NoiseLevel(1e-6)}).isApprox(y, 1e-6));
}

TEST(PosteriorMean, BatchedOracleAgreesWithKernel) {
  const auto gmm = ring_mixture();
  const PosteriorMeanOracle oracle(gmm);
  Rng rng(3);
  const Mat y = normal_matrix(2, 20, rng);
  Vec sigma(20);
  for (Eigen::Index j = 0; j < 20; ++j) sigma[j] = std::exp(3.0 * uniform01(rng) - 2.0);
  const Mat m = oracle.mean(y, sigma);
  for (Eigen::Index j = 0; j < 20; ++j)
    EXPECT_TRUE(m.col(j).isApprox(posterior_mean(gmm, {y.col(j), NoiseLevel(sigma[j])}), 1e-10));
}

TEST(Score, SingleGaussianClosedForm) {
  const Vec mu{{0.5, -1.0}};
  const Mat cov{{1.0, 0.3}, {0.3, 0.5}};
  const GaussianMixture g({1.0}, {mu}, {cov});
  const Vec x{{0.1, 0.2}};
  const double t = 0.7;
  const Vec expected = -(cov + t * t * Mat::Identity(2, 2)).ldlt().solve(x - mu);
  EXPECT_TRUE(score(g, x, NoiseLevel(t)).isApprox(expected, 1e-12));
}

TEST(Score, ZeroAtSymmetricPoint) {
  EXPECT_NEAR(score(mirrored_modes(), vec1(0.0), NoiseLevel(0.3))[0], 0.0, 1e-14);
}

TEST(Score, MatchesFiniteDifferences2D) {
  Rng rng(11);
  const auto gmm = random_mixture(2, rng);
  const Vec x{{0.3, -0.7}};
  const NoiseLevel t(0.8);
  const auto marginal = marginal_at_noise(gmm, t);
  const Vec s = score(gmm, x, t);
  for (Eigen::Index d = 0; d < 2; ++d) {
    const double fd = central_difference([&](const Vec& v) { return marginal.log_density(v); }, x, d, 1e-4);
    EXPECT_NEAR(s[d], fd, 1e-7);
  }
}

TEST(EffectiveCondition, EqualLevels) {
  const Vec y{{1.0, -2.0}}, xt{{3.0, 0.5}};
  const auto eff = effective_condition({y, NoiseLevel(1.0)}, xt, NoiseLevel(1.0));
  EXPECT_NEAR(eff.sigma.value(), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_TRUE(eff.y.isApprox((y + xt) / 2.0, 1e-15));
}

TEST(EffectiveCondition, SigmaTwoTimeOne) {
  const Vec y{{1.0}}, xt{{-1.0}};
  const auto eff = effective_condition({y, NoiseLevel(2.0)}, xt, NoiseLevel(1.0));
  EXPECT_NEAR(eff.sigma.value(), 0.894427190999916, 1e-12);
  EXPECT_NEAR(eff.y[0], 0.2 * 1.0 + 0.8 * -1.0, 1e-14);
}

TEST(EffectiveCondition, UninformativeObservation) {
  const Vec y{{5.0}}, xt{{-1.0}};
  const auto eff = effective_condition({y, NoiseLevel(1e8)}, xt, NoiseLevel(0.3));
  EXPECT_NEAR(eff.sigma.value(), 0.3, 1e-12);
  EXPECT_NEAR(eff.y[0], -1.0, 1e-12);
}

TEST(ConditionalScore, GaussianPriorClosedForm) {
  const auto prior = standard_normal_prior(1);
  EXPECT_NEAR(conditional_score(prior, vec1(0.0), NoiseLevel(1.0), {vec1(0.0), NoiseLevel(1.0)})[0], 0.0, 1e-15);
  // x0 | y ~ N(y / (1 + s^2), s^2 / (1 + s^2)), so x_t | y ~ N(m, v + t^2).
  for (double s : {0.3, 1.0, 2.5})
    for (double t : {0.1, 0.7, 4.0}) {
      const double y = 0.8, xt = -0.4;
      const double m = y / (1.0 + s * s), v = s * s / (1.0 + s * s);
      EXPECT_NEAR(conditional_score(prior, vec1(xt), NoiseLevel(t), {vec1(y), NoiseLevel(s)})[0],
                  -(xt - m) / (v + t * t), 1e-10);
    }
}

TEST(ConditionalScore, TwoModesMatchFiniteDifferences) {
  const auto gmm = two_mode_1d();
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const double s = log_uniform(0.1, 10.0, rng), t = log_uniform(0.1, 10.0, rng);
    const Vec y = vec1(3.0 * standard_normal(rng)), xt = vec1(3.0 * standard_normal(rng));
    const auto post = denoising_posterior(gmm, {y, NoiseLevel(s)});
    const auto joint = marginal_at_noise(post, NoiseLevel(t));
    const double fd = central_difference([&](const Vec& v) { return joint.log_density(v); }, xt, 0, 1e-3 * t);
    EXPECT_NEAR(conditional_score(gmm, xt, NoiseLevel(t), {y, NoiseLevel(s)})[0], fd, 1e-5 * (1.0 + std::abs(fd)));
  }
}

TEST(Sample, EmptyBatch) {
  Rng rng(0);
  EXPECT_EQ(sample(ring_mixture(), 0, rng).size(), 0);
}

TEST(Sample, StandardNormalMean) {
  Rng rng(1);
  const auto b = sample(standard_normal_prior(3), 100000, rng);
  const Vec mean = b.points.colwise().mean();
  for (Eigen::Index d = 0; d < 3; ++d) EXPECT_LT(std::abs(mean[d]), 3.0 / std::sqrt(1e5));
}

TEST(Sample, ModeWeightsWithinBinomialError) {
  const auto gmm = GaussianMixture({0.3, 0.7}, {vec1(-3.0), vec1(3.0)}, {Mat{{0.1}}, Mat{{0.1}}});
  Rng rng(2);
  const auto b = sample(gmm, 100000, rng);
  const double right = (b.points.array() > 0.0).cast<double>().mean();
  EXPECT_LT(std::abs(right - 0.7), 3.0 * std::sqrt(0.7 * 0.3 / 1e5));
}

TEST(LinearPosterior, IdentityOperatorIsDenoising) {
  const auto gmm = ring_mixture();
  const Vec y{{0.3, 0.9}};
  const auto a = linear_posterior(gmm, Mat::Identity(2, 2), y, NoiseLevel(0.4));
  const auto b = denoising_posterior(gmm, {y, NoiseLevel(0.4)});
  for (std::size_t k = 0; k < gmm.components(); ++k) {
    EXPECT_NEAR(a.weights()[k], b.weights()[k], 1e-12);
    EXPECT_TRUE(a.means()[k].isApprox(b.means()[k], 1e-12));
    EXPECT_TRUE(a.covariances()[k].isApprox(b.covariances()[k], 1e-12));
  }
}

TEST(LinearPosterior, ZeroOperatorIsPrior) {
  const auto gmm = ring_mixture();
  const auto post = linear_posterior(gmm, Mat::Zero(1, 2), Vec{{0.5}}, NoiseLevel(0.2));
  for (std::size_t k = 0; k < gmm.components(); ++k) {
    EXPECT_NEAR(post.weights()[k], gmm.weights()[k], 1e-12);
    EXPECT_TRUE(post.means()[k].isApprox(gmm.means()[k], 1e-12));
  }
}

TEST(LinearPosterior, RandomOperatorMatches2DQuadrature) {
  const auto gmm = GaussianMixture({0.4, 0.6}, {Vec{{-1.0, 0.5}}, Vec{{1.0, -0.5}}},
                                   {Mat{{0.3, 0.1}, {0.1, 0.2}}, Mat{{0.2, -0.05}, {-0.05, 0.4}}});
  const Mat A{{0.8, -0.3}, {0.4, 1.1}};
  const Vec y{{0.2, 0.1}};
  const double sy = 0.5;
  const auto post = linear_posterior(gmm, A, y, NoiseLevel(sy));
  Vec mean = Vec::Zero(2);
  double z = 0.0;
  const double h = 0.01;
  for (double a = -5.0; a <= 5.0; a += h)
    for (double b = -5.0; b <= 5.0; b += h) {
      const Vec x{{a, b}};
      const double w = std::exp(gmm.log_density(x) - 0.5 * (y - A * x).squaredNorm() / (sy * sy));
      z += w;
      mean += w * x;
    }
  mean /= z;
  EXPECT_TRUE(post.mean().isApprox(mean, 1e-6)) << post.mean().transpose() << " vs " << mean.transpose();
}

TEST(GaussianMixture, RejectsInvalidInput) {
  EXPECT_THROW(GaussianMixture({0.5, 0.4}, {vec1(0.0), vec1(1.0)}, {Mat{{1.0}}, Mat{{1.0}}}), std::invalid_argument);
  EXPECT_THROW(GaussianMixture({1.0}, {vec1(0.0)}, {Mat{{-1.0}}}), std::exception);
  EXPECT_THROW(GaussianMixture({1.0}, {Vec{{0.0, 1.0}}}, {Mat{{1.0}}}), std::invalid_argument);
  EXPECT_THROW(score(ring_mixture(), vec1(0.0), NoiseLevel(1.0)), std::invalid_argument);
  EXPECT_THROW(NoiseLevel(0.0), std::invalid_argument);
}

TEST(GaussianMixture, JsonRoundTrip) {
  Rng rng(8);
  const auto gmm = random_mixture(3, rng);
  const auto path = std::filesystem::temp_directory_path() / "ncvsd_gmm_roundtrip.json";
  save_mixture(gmm, path.string());
  const auto back = load_mixture(path.string());
  std::filesystem::remove(path);
  ASSERT_EQ(back.components(), gmm.components());
  for (std::size_t k = 0; k < gmm.components(); ++k) {
    EXPECT_EQ(back.weights()[k], gmm.weights()[k]);
    EXPECT_EQ(back.means()[k], gmm.means()[k]);
    EXPECT_EQ(back.covariances()[k], gmm.covariances()[k]);
  }
}

}  // namespace
}  // namespace ncvsd
