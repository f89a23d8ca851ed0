// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-sample distances and tests used by every Monte-Carlo check.

#pragma once

#include "ncvsd/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace ncvsd {

struct DistanceReport {
  std::string metric;
  double value = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  double std_error = 0.0;  // or p-value for KS-style tests, see `p_value`
  double p_value = 1.0;
  double threshold = 0.0;
  bool passed = true;
  std::string detail;
};

inline nlohmann::json to_json(const DistanceReport& r) {
  return {{"metric", r.metric},     {"value", r.value},         {"n_a", r.n_a},
          {"n_b", r.n_b},           {"std_error", r.std_error}, {"p_value", r.p_value},
          {"threshold", r.threshold}, {"passed", r.passed},      {"detail", r.detail}};
}

namespace detail {

/// Exact W1 between two empirical 1D distributions given sorted samples.
inline double wasserstein1_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
  }
  // Integrate |F_a^-1(u) - F_b^-1(u)| over the merged quantile breakpoints.
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next = std::min((i + 1) / na, (j + 1) / nb);
    total += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if ((i + 1) / na <= next) ++i;
    if ((j + 1) / nb <= next) ++j;
  }
  return total;
}

/// Kolmogorov survival function Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
inline double kolmogorov_q(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline double ks_p_value(double d, double n_eff) {
  const double sn = std::sqrt(n_eff);
  return kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
}

}  // namespace detail

/// Average 1D Wasserstein-1 over random unit projections.
inline DistanceReport sliced_wasserstein(const SampleBatch& a, const SampleBatch& b, int projections, Rng& rng) {
  if (a.dim() != b.dim()) throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
  DistanceReport r{"sliced_wasserstein", 0.0, static_cast<std::size_t>(a.size()), static_cast<std::size_t>(b.size())};
  if (a.size() == 0 || b.size() == 0 || projections <= 0) return r;
  std::vector<double> values;
  std::vector<double> pa(a.size()), pb(b.size());
  for (int p = 0; p < projections; ++p) {
    Vec dir(a.dim());
    for (Eigen::Index k = 0; k < dir.size(); ++k) dir[k] = standard_normal(rng);
    dir.normalize();
    const Vec proj_a = a.points * dir;
    const Vec proj_b = b.points * dir;
    std::copy(proj_a.begin(), proj_a.end(), pa.begin());
    std::copy(proj_b.begin(), proj_b.end(), pb.begin());
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    values.push_back(detail::wasserstein1_sorted(pa, pb));
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  r.value = mean;
  r.std_error = values.size() > 1 ? std::sqrt(var / (values.size() - 1) / values.size()) : 0.0;
  return r;
}

/// Two-sample Kolmogorov-Smirnov test on 1D batches (first column).
inline DistanceReport ks_test_1d(const SampleBatch& a, const SampleBatch& b) {
  std::vector<double> xa(a.points.col(0).begin(), a.points.col(0).end());
  std::vector<double> xb(b.points.col(0).begin(), b.points.col(0).end());
  std::sort(xa.begin(), xa.end());
  std::sort(xb.begin(), xb.end());
  DistanceReport r{"ks_two_sample", 0.0, xa.size(), xb.size()};
  if (xa.empty() || xb.empty()) return r;
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = static_cast<double>(xa.size()), nb = static_cast<double>(xb.size());
  while (i < xa.size() && j < xb.size()) {
    const double v = std::min(xa[i], xb[j]);
    while (i < xa.size() && xa[i] <= v) ++i;
    while (j < xb.size() && xb[j] <= v) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  r.value = d;
  r.p_value = detail::ks_p_value(d, na * nb / (na + nb));
  return r;
}

/// One-sample KS test of the first column against a continuous CDF.
inline DistanceReport ks_test_1d(const SampleBatch& a, const std::function<double(double)>& cdf) {
  std::vector<double> xa(a.points.col(0).begin(), a.points.col(0).end());
  std::sort(xa.begin(), xa.end());
  DistanceReport r{"ks_one_sample", 0.0, xa.size(), 0};
  if (xa.empty()) return r;
  const double n = static_cast<double>(xa.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xa.size(); ++i) {
    const double f = cdf(xa[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  r.value = d;
  r.p_value = detail::ks_p_value(d, n);
  return r;
}

/// Energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'| with within-sample terms as
/// U-statistics (so the null expectation is 0; small negative values are
/// clamped to 0).
inline DistanceReport energy_distance(const SampleBatch& a, const SampleBatch& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("energy_distance: dimension mismatch");
  DistanceReport r{"energy_distance", 0.0, static_cast<std::size_t>(a.size()), static_cast<std::size_t>(b.size())};
  const Eigen::Index na = a.size(), nb = b.size();
  if (na < 2 || nb < 2) return r;
  const Mat at = a.points.transpose();
  const Mat bt = b.points.transpose();
  std::vector<double> cross(na, 0.0), within_a(na, 0.0), within_b(nb, 0.0);
  parallel_for(static_cast<std::size_t>(na), [&](std::size_t i) {
    double s = 0.0, w = 0.0;
    for (Eigen::Index j = 0; j < nb; ++j) s += (at.col(i) - bt.col(j)).norm();
    for (Eigen::Index j = static_cast<Eigen::Index>(i) + 1; j < na; ++j) w += (at.col(i) - at.col(j)).norm();
    cross[i] = s;
    within_a[i] = w;
  });
  parallel_for(static_cast<std::size_t>(nb), [&](std::size_t i) {
    double w = 0.0;
    for (Eigen::Index j = static_cast<Eigen::Index>(i) + 1; j < nb; ++j) w += (bt.col(i) - bt.col(j)).norm();
    within_b[i] = w;
  });
  const double exy = std::accumulate(cross.begin(), cross.end(), 0.0) / (static_cast<double>(na) * nb);
  const double exx = 2.0 * std::accumulate(within_a.begin(), within_a.end(), 0.0) / (static_cast<double>(na) * (na - 1));
  const double eyy = 2.0 * std::accumulate(within_b.begin(), within_b.end(), 0.0) / (static_cast<double>(nb) * (nb - 1));
  r.value = std::max(0.0, 2.0 * exy - exx - eyy);
  return r;
}

inline DistanceReport with_threshold(DistanceReport r, double threshold) {
  r.threshold = threshold;
  r.passed = r.value < threshold;
  return r;
}

inline SampleBatch to_batch(const Mat& columns, std::string label = {}) {
  SampleBatch b;
  b.points = columns.transpose();
  b.label = std::move(label);
  return b;
}

}  // namespace ncvsd
