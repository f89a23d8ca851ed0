// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-step generative denoising over a DDIM-like latent chain whose
// marginals match q(x_i | y_sigma), EDM annealing schedules, and the
// denoiser adapters (exact oracle, learned generator) the chain drives.

#pragma once

#include "ncvsd/core.hpp"
#include "ncvsd/gmm.hpp"
#include "ncvsd/nn.hpp"

#include <concepts>
#include <limits>
#include <span>
#include <vector>

namespace ncvsd {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Schedules

struct AnnealingSchedule {
  int n = 0;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  double rho = 0.0;
  std::vector<double> levels;  // levels[0] = sigma_max > ... > levels[n-1] = sigma_min
};

/// sigma_i = (smax^(1/rho) + i/(n-1) (smin^(1/rho) - smax^(1/rho)))^rho.
inline AnnealingSchedule edm_schedule(int n, double sigma_min, double sigma_max, double rho) {
  if (n < 1) throw std::invalid_argument("schedule needs at least one level");
  if (!(sigma_min > 0.0) || !(sigma_max > 0.0) || !(rho > 0.0))
    throw std::invalid_argument("schedule parameters must be positive");
  if (n > 1 && !(sigma_min < sigma_max)) throw std::invalid_argument("schedule needs sigma_min < sigma_max");
  AnnealingSchedule s{n, sigma_min, sigma_max, rho, {}};
  const double hi = std::pow(sigma_max, 1.0 / rho);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  for (int i = 0; i < n; ++i) {
    if (i == 0) {
      s.levels.push_back(sigma_max);
    } else if (i == n - 1) {
      s.levels.push_back(sigma_min);
    } else {
      s.levels.push_back(std::pow(hi + static_cast<double>(i) / (n - 1) * (lo - hi), rho));
    }
  }
  return s;
}

inline std::vector<double> select_levels(const AnnealingSchedule& s, std::span<const int> indices) {
  std::vector<double> out;
  int prev = -1;
  for (int i : indices) {
    if (i <= prev) throw std::invalid_argument("step indices must be strictly increasing");
    if (i < 0 || i >= s.n) throw std::invalid_argument("step index outside the schedule");
    out.push_back(s.levels[static_cast<std::size_t>(i)]);
    prev = i;
  }
  return out;
}

struct SamplerConfig {
  double zeta = 1.0;
  std::vector<double> levels;  // retained levels, strictly decreasing
  double sigma_init = kInf;    // conditioning level in unconditional mode; inf = analytic limit
};

/// 1/2/4-step presets indexing the 40-level generation grid.
inline std::vector<int> few_step_indices(int steps) {
  switch (steps) {
    case 1: return {10};
    case 2: return {10, 22};
    case 4: return {0, 10, 20, 30};
    default: {
      if (steps < 1 || steps > 40) throw std::invalid_argument("steps must be in [1, 40]");
      std::vector<int> idx;
      for (int k = 0; k < steps; ++k) idx.push_back(static_cast<int>(k * 40 / steps));
      return idx;
    }
  }
}

inline SamplerConfig few_step_config(int steps, double zeta = 1.0) {
  const auto grid = edm_schedule(40, 0.002, 80.0, 7.0);
  const auto idx = few_step_indices(steps);
  return {zeta, select_levels(grid, idx), kInf};
}

inline void validate(const SamplerConfig& c) {
  if (!(c.zeta >= 0.0 && c.zeta <= 1.0)) throw std::invalid_argument("zeta must lie in [0, 1]");
  if (c.levels.empty()) throw std::invalid_argument("sampler needs at least one level");
  for (std::size_t i = 0; i < c.levels.size(); ++i) {
    if (!(c.levels[i] > 0.0)) throw std::invalid_argument("levels must be positive");
    if (i > 0 && !(c.levels[i] < c.levels[i - 1])) throw std::invalid_argument("levels must strictly decrease");
  }
}

// ---------------------------------------------------------------------------
// Denoisers: anything that draws x0 ~ mu(x0 | y_sigma) for a batch of
// observations sharing one sigma.

template <class D>
concept GenerativeDenoiser = requires(const D& d, const Mat& y, double sigma, Rng& rng) {
  { d.sample(y, sigma, rng) } -> std::convertible_to<Mat>;
};

/// Exact q(x0 | y_sigma) draws.
struct OracleDenoiser {
  const GaussianMixture* gmm;

  explicit OracleDenoiser(const GaussianMixture& g) : gmm(&g) {}

  Mat sample(const Mat& y, double sigma, Rng& rng) const {
    const DenoisingKernel kernel(*gmm, NoiseLevel(sigma));
    Mat out(y.rows(), y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) out.col(j) = kernel.sample(y.col(j), rng);
    return out;
  }
};

/// One-step generator G(y, sigma, z), z ~ N(0, I).
struct LearnedDenoiser {
  const MLPDenoiser* net;
  double gamma = 0.414;

  LearnedDenoiser(const MLPDenoiser& n, double g) : net(&n), gamma(g) {}

  Mat sample(const Mat& y, double sigma, Rng& rng) const {
    const Mat z = normal_matrix(y.rows(), y.cols(), rng);
    return generator_forward(*net, y, Vec::Constant(y.cols(), sigma), z, gamma);
  }
};

// ---------------------------------------------------------------------------
// Chain

/// x_{i-1} ~ N(x0 + s_prev sqrt(1 - zeta) (x_i - x0) / s_i, s_prev^2 zeta I).
inline Mat ddim_transition(const Mat& x_i, const Mat& x0, double sigma_i, double sigma_prev, double zeta, Rng& rng) {
  if (!(sigma_prev < sigma_i)) throw std::invalid_argument("ddim_transition needs sigma_prev < sigma_i");
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw std::invalid_argument("zeta must lie in [0, 1]");
  Mat out = x0 + (sigma_prev * std::sqrt(1.0 - zeta) / sigma_i) * (x_i - x0);
  if (zeta > 0.0) out += (sigma_prev * std::sqrt(zeta)) * normal_matrix(x_i.rows(), x_i.cols(), rng);
  return out;
}

/// Per-column effective observation; sigma = inf is the unconditional limit.
inline Mat effective_observations(const Mat& y, double sigma, const Mat& x_i, double level, double& sigma_eff) {
  if (std::isinf(sigma)) {
    sigma_eff = level;
    return x_i;
  }
  Mat out(x_i.rows(), x_i.cols());
  const NoiseLevel t(level);
  const NoiseLevel s(sigma);
  for (Eigen::Index j = 0; j < x_i.cols(); ++j) {
    const NoisyObservation eff = effective_condition({y.col(j), s}, x_i.col(j), t);
    out.col(j) = eff.y;
    sigma_eff = eff.sigma.value();
  }
  return out;
}

struct ChainRecord {
  std::vector<Mat> latents;  // x_N, ..., x_1 (one entry per retained level)
  std::vector<double> sigma_eff;
  std::vector<Mat> y_eff;
};

/// Runs the chain for each column of y at conditioning level sigma and
/// returns the final x0 draws. x_N ~ N(0, sigma_N^2 I) unless x_init is given.
/// The denoiser is applied at every retained level, the last one included.
template <GenerativeDenoiser Denoiser>
Mat multistep_denoise(const Denoiser& denoiser, const Mat& y, double sigma, const SamplerConfig& config, Rng& rng,
                      const Mat* x_init = nullptr, ChainRecord* record = nullptr) {
  validate(config);
  if (!(sigma > 0.0)) throw std::invalid_argument("conditioning sigma must be positive");
  const auto& levels = config.levels;
  Mat x = x_init ? *x_init : Mat(levels.front() * normal_matrix(y.rows(), y.cols(), rng));
  Mat x0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (record) record->latents.push_back(x);
    double sigma_eff = 0.0;
    const Mat y_eff = effective_observations(y, sigma, x, levels[i], sigma_eff);
    if (record) {
      record->sigma_eff.push_back(sigma_eff);
      record->y_eff.push_back(y_eff);
    }
    x0 = denoiser.sample(y_eff, sigma_eff, rng);
    if (!x0.allFinite()) throw NonFiniteError("denoiser returned non-finite values at level " + std::to_string(i));
    if (i + 1 < levels.size()) x = ddim_transition(x, x0, levels[i], levels[i + 1], config.zeta, rng);
  }
  return x0;
}

inline constexpr Eigen::Index kChainChunk = 1024;

/// n independent unconditional chains. Chains are processed in fixed chunks
/// with one random stream per chunk, so output is independent of threading.
template <GenerativeDenoiser Denoiser>
SampleBatch unconditional_sample(const Denoiser& denoiser, const SamplerConfig& config, Eigen::Index dim,
                                 Eigen::Index n, std::uint64_t seed) {
  validate(config);
  SampleBatch batch;
  batch.points.resize(n, dim);
  batch.seed = seed;
  batch.steps = static_cast<int>(config.levels.size());
  batch.sigma = config.sigma_init;
  const Eigen::Index chunks = (n + kChainChunk - 1) / kChainChunk;
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChainChunk;
    const Eigen::Index count = std::min(kChainChunk, n - begin);
    Rng rng = make_rng(seed, 0x5a3d, c);
    const Mat y = Mat::Zero(dim, count);  // pseudo-observation, unused in the analytic limit
    const Mat x0 = multistep_denoise(denoiser, y, config.sigma_init, config, rng);
    batch.points.middleRows(begin, count) = x0.transpose();
  });
  return batch;
}

/// Conditional counterpart: every chain denoises the same observation y.
template <GenerativeDenoiser Denoiser>
SampleBatch conditional_sample(const Denoiser& denoiser, const SamplerConfig& config, const Vec& y, double sigma,
                               Eigen::Index n, std::uint64_t seed) {
  validate(config);
  SampleBatch batch;
  batch.points.resize(n, y.size());
  batch.seed = seed;
  batch.steps = static_cast<int>(config.levels.size());
  batch.sigma = sigma;
  const Eigen::Index chunks = (n + kChainChunk - 1) / kChainChunk;
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChainChunk;
    const Eigen::Index count = std::min(kChainChunk, n - begin);
    Rng rng = make_rng(seed, 0xc0d1, c);
    const Mat ys = y.replicate(1, count);
    const Mat x0 = multistep_denoise(denoiser, ys, sigma, config, rng);
    batch.points.middleRows(begin, count) = x0.transpose();
  });
  return batch;
}

}  // namespace ncvsd
