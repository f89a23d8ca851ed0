// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ncvsd/stats.hpp"

#include <gtest/gtest.h>

namespace ncvsd {
namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

SampleBatch gaussian_batch(Eigen::Index n, Eigen::Index dim, double shift, Rng& rng) {
  SampleBatch b;
  b.points = normal_matrix(n, dim, rng).array() + shift;
  return b;
}

TEST(SlicedWasserstein, IdenticalBatchesAreZero) {
  Rng rng(1);
  const auto a = gaussian_batch(500, 2, 0.0, rng);
  EXPECT_EQ(sliced_wasserstein(a, a, 64, rng).value, 0.0);
}

TEST(SlicedWasserstein, ShiftAlongTheDiagonal) {
  // A shift d along a unit projection direction v moves the projection by d.v;
  // averaged over the circle, E|cos| = 2 / pi.
  Rng rng(2);
  const auto a = gaussian_batch(20000, 2, 0.0, rng);
  SampleBatch b = a;
  b.points.col(0).array() += 1.0;
  EXPECT_NEAR(sliced_wasserstein(a, b, 4096, rng).value, 2.0 / M_PI, 0.02);
}

TEST(SlicedWasserstein, NullStaysSmall) {
  Rng rng(3);
  const auto a = gaussian_batch(4096, 2, 0.0, rng), b = gaussian_batch(4096, 2, 0.0, rng);
  EXPECT_LT(sliced_wasserstein(a, b, 128, rng).value, 0.03);
}

TEST(SlicedWasserstein, DimensionMismatchThrows) {
  Rng rng(4);
  EXPECT_THROW(sliced_wasserstein(gaussian_batch(5, 2, 0, rng), gaussian_batch(5, 3, 0, rng), 8, rng),
               std::invalid_argument);
}

TEST(KsTest, NullIsCalibrated) {
  Rng rng(5);
  int rejections = 0;
  for (int i = 0; i < 200; ++i)
    if (ks_test_1d(gaussian_batch(1000, 1, 0.0, rng), normal_cdf).p_value < 0.05) ++rejections;
  EXPECT_GE(rejections, 2);
  EXPECT_LE(rejections, 25);
}

TEST(KsTest, DetectsAShift) {
  Rng rng(6);
  EXPECT_LT(ks_test_1d(gaussian_batch(2000, 1, 0.2, rng), normal_cdf).p_value, 1e-4);
  EXPECT_LT(ks_test_1d(gaussian_batch(2000, 1, 0.2, rng), gaussian_batch(2000, 1, 0.0, rng)).p_value, 1e-3);
}

TEST(EnergyDistance, IdenticalBatchesAreZero) {
  Rng rng(7);
  const auto a = gaussian_batch(300, 2, 0.0, rng);
  EXPECT_EQ(energy_distance(a, a).value, 0.0);
}

TEST(EnergyDistance, SeparatesShiftedBatches) {
  Rng rng(8);
  const auto a = gaussian_batch(2000, 2, 0.0, rng);
  EXPECT_LT(energy_distance(a, gaussian_batch(2000, 2, 0.0, rng)).value, 0.01);
  EXPECT_GT(energy_distance(a, gaussian_batch(2000, 2, 0.5, rng)).value, 0.1);
}

TEST(WithThreshold, SetsTheVerdict) {
  DistanceReport r{"x", 0.3};
  EXPECT_TRUE(with_threshold(r, 0.5).passed);
  EXPECT_FALSE(with_threshold(r, 0.1).passed);
}

}  // namespace
}  // namespace ncvsd
