// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ncvsd/nn.hpp"
#include "ncvsd/verify.hpp"

#include <gtest/gtest.h>

namespace ncvsd {
namespace {

bool all_zero(const auto& net) {
  for (const auto& p : param_views(net))
    for (double v : p.data)
      if (v != 0.0) return false;
  return true;
}

TEST(MpSum, Endpoints) {
  const Vec a{{1.0, -2.0, 0.5}}, b{{3.0, 4.0, -1.0}};
  EXPECT_TRUE(mp_sum(a, b, 0.0).isApprox(a, 1e-15));
  EXPECT_TRUE(mp_sum(a, b, 1.0).isApprox(b, 1e-15));
  EXPECT_TRUE(mp_sum(a, b, 0.5).isApprox((a + b) / std::sqrt(2.0), 1e-15));
}

TEST(MpSum, PreservesUnitVarianceOfIndependentInputs) {
  Rng rng(4);
  const Mat a = normal_matrix(1, 200000, rng), b = normal_matrix(1, 200000, rng);
  for (double w : {0.1, 0.3, 0.5, 0.9}) {
    const Mat m = mp_sum(a, b, w);
    const double var = (m.array() - m.mean()).square().mean();
    EXPECT_NEAR(var, 1.0, 0.02) << "w = " << w;
  }
}

TEST(MpSum, LengthMismatchThrows) {
  const std::vector<double> a{1.0, 2.0}, b{1.0};
  EXPECT_THROW(mp_sum(std::span<const double>(a), std::span<const double>(b), 0.5), std::invalid_argument);
}

TEST(Preconditioning, SkipScaling) {
  const Preconditioning p{0.5};
  EXPECT_DOUBLE_EQ(p.c_skip(0.5), 0.5);
  EXPECT_LT(p.c_skip(1e6), 1e-12);
  EXPECT_NEAR(p.c_out(0.5), 0.5 * 0.5 / std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(p.loss_weight(0.5) * p.c_out(0.5) * p.c_out(0.5), 1.0, 1e-15);
}

TEST(MLPDenoiser, ZeroHeadGivesSkipConnection) {
  Rng rng(1);
  for (bool conditioned : {false, true}) {
    auto net = MLPDenoiser::init(2, 16, 2, conditioned, 0.5, rng);
    net.head.weight.setZero();
    const Mat x = normal_matrix(2, 5, rng);
    const Vec sigma = Vec::LinSpaced(5, 0.1, 3.0);
    const Conditioning cond{normal_matrix(2, 5, rng), Vec::Constant(5, 0.7)};
    const Mat out = net.forward(x, sigma, conditioned ? &cond : nullptr);
    for (Eigen::Index j = 0; j < 5; ++j)
      EXPECT_TRUE(out.col(j).isApprox(net.precond.c_skip(sigma[j]) * x.col(j), 1e-14));
  }
}

TEST(MLPDenoiser, BranchCopyLeavesOutputUnchanged) {
  Rng rng(2);
  const auto base = MLPDenoiser::init(2, 16, 3, false, 0.5, rng);
  const auto cond_net = MLPDenoiser::with_branch_from(base);
  const Mat x = normal_matrix(2, 4, rng);
  const Vec sigma = Vec::Constant(4, 0.8);
  const Conditioning cond{normal_matrix(2, 4, rng), Vec::Constant(4, 1.5)};
  EXPECT_TRUE(cond_net.forward(x, sigma, &cond).isApprox(base.forward(x, sigma), 1e-14));
}

TEST(MLPDenoiser, ProjectClampsMergeWeights) {
  Rng rng(3);
  auto net = MLPDenoiser::init(2, 8, 3, true, 0.5, rng);
  net.merge << -0.2, 0.4, 1.7;
  net.project();
  EXPECT_EQ(net.merge, (Vec{{0.0, 0.4, 1.0}}));
}

TEST(GeneratorInput, TableStochasticityStrength) {
  const Mat y{{0.3}};
  const Mat z{{1.0}};
  const auto in = generator_input(y, Vec{{1.0}}, z, 0.414);
  EXPECT_NEAR(in.sigma_hat[0], 1.414, 1e-15);
  EXPECT_NEAR(in.y_hat(0, 0) - 0.3, 0.99970, 5e-6);
  EXPECT_NEAR(in.y_hat(0, 0) - 0.3, std::sqrt(1.414 * 1.414 - 1.0), 1e-15);
}

TEST(GeneratorInput, ZeroNoiseKeepsObservation) {
  const Mat y{{0.3, -1.0}, {2.0, 0.1}};
  const auto in = generator_input(y, Vec{{0.5, 2.0}}, Mat::Zero(2, 2), 0.414);
  EXPECT_EQ(in.y_hat, y);
  EXPECT_NEAR(in.sigma_hat[1], 2.0 * 1.414, 1e-15);
  EXPECT_EQ(in.cond.y, y);
}

TEST(GeneratorInput, SqrtTwoMinusOneDoublesVariance) {
  const double gamma = std::sqrt(2.0) - 1.0;
  const double sigma = 0.37;
  const auto in = generator_input(Mat::Zero(1, 1), Vec{{sigma}}, Mat::Ones(1, 1), gamma);
  EXPECT_NEAR(in.sigma_hat[0], std::sqrt(2.0) * sigma, 1e-15);
  EXPECT_NEAR(in.y_hat(0, 0), sigma, 1e-15);
  EXPECT_THROW(generator_input(Mat::Zero(1, 1), Vec{{sigma}}, Mat::Ones(1, 1), 0.0), std::invalid_argument);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(5);
  const auto net = MLPDenoiser::init(2, 8, 2, true, 0.5, rng);
  MLPDenoiser::Cache cache;
  const Conditioning cond{normal_matrix(2, 3, rng), Vec::Constant(3, 1.0)};
  net.forward(normal_matrix(2, 3, rng), Vec::Constant(3, 0.5), &cond, &cache);
  auto grads = zeros_like(net);
  net.backward(cache, Mat::Zero(2, 3), grads);
  EXPECT_TRUE(all_zero(grads));

  const auto disc = Discriminator::init(2, 8, 2, 0.5, rng);
  Discriminator::Cache dc;
  disc.logits(normal_matrix(2, 3, rng), Vec::Constant(3, 0.5), normal_matrix(2, 3, rng), Vec::Constant(3, 1.0), &dc);
  auto dg = zeros_like(disc);
  disc.backward(dc, Mat::Zero(1, 3), dg);
  EXPECT_TRUE(all_zero(dg));
}

TEST(Backward, OutputLayerChainRule) {
  Rng rng(6);
  const auto net = UncertaintyNet::init(rng, 4);
  UncertaintyNet::Cache cache;
  const Vec t{{0.5, 2.0}};
  net.forward(t, &cache);
  auto grads = zeros_like(net);
  const Mat upstream{{0.3, -1.2}};
  net.backward(cache, upstream, grads);
  EXPECT_NEAR(grads.out.bias[0], -0.9, 1e-15);
  EXPECT_TRUE(grads.out.weight.isApprox(upstream * cache.act.transpose(), 1e-15));
}

TEST(Backward, FiniteDifferenceAgreement) {
  Rng rng(7);
  for (int i = 0; i < 3; ++i) {
    EXPECT_LE(fd_check_denoiser(rng, false).worst_excess, 0.0);
    EXPECT_LE(fd_check_denoiser(rng, true).worst_excess, 0.0);
    EXPECT_LE(fd_check_discriminator(rng).worst_excess, 0.0);
    EXPECT_LE(fd_check_weighting(rng).worst_excess, 0.0);
    EXPECT_LE(fd_check_generator_loss(rng).worst_excess, 0.0);
  }
}

TEST(Discriminator, ClampedLogitsBoundTheLoss) {
  Rng rng(8);
  auto disc = Discriminator::init(2, 8, 2, 0.5, rng);
  disc.head.bias[0] = 1e6;
  const Mat l = disc.logits(normal_matrix(2, 4, rng), Vec::Constant(4, 0.5), normal_matrix(2, 4, rng),
                            Vec::Constant(4, 1.0));
  for (Eigen::Index j = 0; j < 4; ++j) {
    EXPECT_LE(l(0, j), kLogitClamp);
    // A confident mistake on a real sample costs softplus(l) on the fake side.
    EXPECT_LE(softplus_neg(-l(0, j)), 30.0);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(9);
  auto net = UncertaintyNet::init(rng);
  const auto before = net;
  AdamState state;
  for (int i = 0; i < 3; ++i) adam_step(net, zeros_like(net), state, 0.1);
  EXPECT_EQ(net.hidden.weight, before.hidden.weight);
  EXPECT_EQ(net.out.bias, before.out.bias);
}

TEST(Adam, FirstStepIsSignNormalised) {
  std::vector<double> p{1.0, -2.0}, g{0.3, -5.0};
  AdamState state;
  adam_step({{"p", p, 2, 1}}, {{"g", g, 2, 1}}, state, 0.01);
  EXPECT_NEAR(p[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.01 * 5.0 / (5.0 + 1e-8), 1e-15);
}

TEST(Adam, ZeroBetasStaySignNormalised) {
  std::vector<double> p{0.0}, g{0.7};
  AdamState state;
  state.beta1 = state.beta2 = 0.0;
  for (int i = 0; i < 3; ++i) {
    g[0] = (i % 2 ? -1.0 : 1.0) * (0.7 + i);
    const double expected = p[0] - 0.05 * g[0] / (std::abs(g[0]) + 1e-8);
    adam_step({{"p", p, 1, 1}}, {{"g", g, 1, 1}}, state, 0.05);
    EXPECT_NEAR(p[0], expected, 1e-15);
  }
}

TEST(Adam, RejectsNonFiniteGradient) {
  std::vector<double> p{0.0}, g{std::nan("")};
  AdamState state;
  EXPECT_THROW(adam_step({{"p", p, 1, 1}}, {{"g", g, 1, 1}}, state, 0.05), NonFiniteError);
}

TEST(Ema, RateEndpointsAndGeometricSeries) {
  std::vector<double> shadow{0.0}, live{2.0};
  ema_update({{"s", shadow, 1, 1}}, {{"l", live, 1, 1}}, 1.0);
  EXPECT_EQ(shadow[0], 0.0);
  ema_update({{"s", shadow, 1, 1}}, {{"l", live, 1, 1}}, 0.0);
  EXPECT_EQ(shadow[0], 2.0);
  shadow[0] = 0.0;
  for (int i = 0; i < 1000; ++i) ema_update({{"s", shadow, 1, 1}}, {{"l", live, 1, 1}}, 0.999);
  EXPECT_NEAR(shadow[0], 2.0 * (1.0 - std::pow(0.999, 1000)), 1e-12);
  EXPECT_NEAR(shadow[0] / 2.0, 0.632, 1e-3);
}

TEST(UncertaintyNet, StartsAtZeroWeighting) {
  Rng rng(10);
  const auto net = UncertaintyNet::init(rng);
  const Mat w = net.forward(Vec{{0.01, 1.0, 50.0}});
  EXPECT_EQ(w.rows(), 1);
  EXPECT_TRUE(w.isZero(0.0));
}

TEST(Parameters, RequireFiniteNamesTheTensor) {
  Rng rng(11);
  auto net = MLPDenoiser::init(2, 4, 2, false, 0.5, rng);
  net.trunk.layers[1].bias[0] = std::numeric_limits<double>::infinity();
  try {
    require_finite(net, "generator");
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("trunk.1.bias"), std::string::npos);
  }
}

}  // namespace
}  // namespace ncvsd
