// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Plug-and-play posterior sampling with a generative denoiser: a split Gibbs
// sampler alternating a prior step x0 ~ mu(x0 | u, sigma_i) and a likelihood
// step u ~ exp(-E(u)/beta - |u - x0|^2 / (2 sigma^2)) under an annealed sigma.

#pragma once

#include "ncvsd/core.hpp"
#include "ncvsd/gmm.hpp"
#include "ncvsd/sampler.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ncvsd {

// ---------------------------------------------------------------------------
// Energies

struct EnergyFunction {
  std::string kind = "none";
  Eigen::Index dim = 0;
  std::function<double(const Vec&)> evaluate;
  std::function<Vec(const Vec&)> gradient;
  /// Exact draw of u for every column of x0, given (sigma, beta). Optional.
  std::function<Mat(const Mat& x0, double sigma, double beta, Rng&)> exact;
  double lipschitz = 0.1;  // C2 hint for the ULA step size

  bool has_exact() const { return static_cast<bool>(exact); }
};

/// Exact draw from N(u; x0, sigma^2 I) * N(y; A u, sigma_y^2 I) for every
/// column of x0. The posterior precision is shared, so it is factored once.
inline Mat gaussian_likelihood_step(const Mat& A, const Vec& y, NoiseLevel sigma_y, const Mat& x0, NoiseLevel sigma,
                                    Rng& rng) {
  if (A.cols() != x0.rows() || A.rows() != y.size())
    throw std::invalid_argument("gaussian_likelihood_step: operator shape does not match x0 / y");
  const Eigen::Index D = x0.rows();
  const Mat precision = Mat::Identity(D, D) * sigma.precision() + A.transpose() * A * sigma_y.precision();
  const Eigen::LLT<Mat> llt = detail::guarded_llt(precision, "likelihood-step precision");
  const Vec data_term = A.transpose() * y * sigma_y.precision();
  Mat rhs = x0 * sigma.precision();
  rhs.colwise() += data_term;
  Mat out = llt.solve(rhs);
  // u = mean + L^-T eps has covariance (L L^T)^-1
  out += llt.matrixU().solve(normal_matrix(D, x0.cols(), rng));
  return out;
}

inline Vec gaussian_likelihood_step(const Mat& A, const Vec& y, NoiseLevel sigma_y, const Vec& x0, NoiseLevel sigma,
                                    Rng& rng) {
  return gaussian_likelihood_step(A, y, sigma_y, Mat(x0), sigma, rng).col(0);
}

inline EnergyFunction no_energy(Eigen::Index dim) {
  EnergyFunction e;
  e.kind = "none";
  e.dim = dim;
  e.evaluate = [](const Vec&) { return 0.0; };
  e.gradient = [dim](const Vec&) { return Vec::Zero(dim).eval(); };
  e.exact = [](const Mat& x0, double sigma, double, Rng& rng) {
    return Mat(x0 + sigma * normal_matrix(x0.rows(), x0.cols(), rng));
  };
  return e;
}

/// E(x) = |y - A x|^2. With beta = 2 sigma_y^2 the likelihood is N(y; Ax, sigma_y^2 I).
inline EnergyFunction linear_gaussian_energy(const Mat& A, const Vec& y) {
  if (A.rows() != y.size()) throw std::invalid_argument("linear energy: A has " + std::to_string(A.rows()) +
                                                        " rows but y has " + std::to_string(y.size()) + " entries");
  EnergyFunction e;
  e.kind = "linear-gaussian";
  e.dim = A.cols();
  e.evaluate = [A, y](const Vec& x) { return (y - A * x).squaredNorm(); };
  e.gradient = [A, y](const Vec& x) { return Vec(2.0 * A.transpose() * (A * x - y)); };
  e.exact = [A, y](const Mat& x0, double sigma, double beta, Rng& rng) {
    return gaussian_likelihood_step(A, y, NoiseLevel(std::sqrt(beta / 2.0)), x0, NoiseLevel(sigma), rng);
  };
  e.lipschitz = 2.0 * A.squaredNorm();
  return e;
}

/// E(x) = 1/2 x^T H x - b^T x with H symmetric positive semi-definite.
inline EnergyFunction quadratic_energy(const Mat& H, const Vec& b) {
  if (H.rows() != H.cols() || H.rows() != b.size()) throw std::invalid_argument("quadratic energy: shape mismatch");
  if (!H.isApprox(H.transpose(), 1e-12)) throw std::invalid_argument("quadratic energy: H must be symmetric");
  EnergyFunction e;
  e.kind = "custom-quadratic";
  e.dim = H.rows();
  e.evaluate = [H, b](const Vec& x) { return 0.5 * x.dot(H * x) - b.dot(x); };
  e.gradient = [H, b](const Vec& x) { return Vec(H * x - b); };
  e.exact = [H, b](const Mat& x0, double sigma, double beta, Rng& rng) {
    const Eigen::Index D = H.rows();
    const Mat precision = H / beta + Mat::Identity(D, D) / (sigma * sigma);
    const Eigen::LLT<Mat> llt = detail::guarded_llt(precision, "quadratic likelihood-step precision");
    Mat rhs = x0 / (sigma * sigma);
    rhs.colwise() += b / beta;
    Mat out = llt.solve(rhs);
    out += llt.matrixU().solve(normal_matrix(D, x0.cols(), rng));
    return out;
  };
  e.lipschitz = H.norm();
  return e;
}

/// E(x) = |y - x^3|^2 with the cube taken coordinate-wise; no exact sampler.
inline EnergyFunction cubic_energy(const Vec& y) {
  EnergyFunction e;
  e.kind = "cubic";
  e.dim = y.size();
  e.evaluate = [y](const Vec& x) { return (y - x.array().cube().matrix()).squaredNorm(); };
  e.gradient = [y](const Vec& x) {
    const Vec r = x.array().cube().matrix() - y;
    return Vec(6.0 * r.array() * x.array().square());
  };
  e.lipschitz = 1.0;
  return e;
}

struct EnergySpec {
  Mat A;
  Vec y;
  Mat H;
  Vec b;
};

using EnergyFactory = std::function<EnergyFunction(const EnergySpec&)>;

/// Named energies constructible from a problem file. Callers may register more.
inline std::map<std::string, EnergyFactory>& energy_registry() {
  static std::map<std::string, EnergyFactory> registry = {
      {"cubic", [](const EnergySpec& s) { return cubic_energy(s.y); }},
  };
  return registry;
}

inline void register_energy(const std::string& name, EnergyFactory factory) {
  energy_registry()[name] = std::move(factory);
}

// ---------------------------------------------------------------------------
// Sampler pieces

struct PnPGDConfig {
  double beta = 0.02;
  int n = 50;
  double sigma_max = 80.0;
  double sigma_min = 0.002;
  double rho = 2.0;
  int ula_steps = 100;
  double c1 = 0.1;
  double c2 = 0.1;
  double sigma_ema = kInf;
  double mu = 0.4;
  int prior_steps = 1;     // 1 = one-step prior draws; M > 1 = M-step chain
  double zeta = 1.0;       // for multi-step prior draws
  std::string likelihood = "auto";  // auto | ula
};

inline void validate(const PnPGDConfig& c) {
  if (!(c.beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (c.n < 1) throw std::invalid_argument("PnP schedule needs at least one level");
  if (!(c.mu >= 0.0 && c.mu <= 1.0)) throw std::invalid_argument("mu must lie in [0, 1]");
  if (c.ula_steps < 1) throw std::invalid_argument("ula_steps must be at least 1");
  if (!(c.c1 > 0.0) || !(c.c2 > 0.0)) throw std::invalid_argument("ULA constants must be positive");
  if (c.prior_steps < 1) throw std::invalid_argument("prior_steps must be at least 1");
  if (c.likelihood != "auto" && c.likelihood != "ula")
    throw std::invalid_argument("likelihood must be 'auto' or 'ula'");
  if (!(c.sigma_ema >= 0.0)) throw std::invalid_argument("sigma_ema must be non-negative");
}

inline AnnealingSchedule pnp_schedule(const PnPGDConfig& c) {
  return edm_schedule(c.n, c.sigma_min, c.sigma_max, c.rho);
}

/// gamma = C1 / (C2 / beta + sigma^-2).
inline double ula_step_size(double beta, double c1, double c2, double sigma) {
  if (!(beta > 0.0) || !(c1 > 0.0) || !(c2 > 0.0) || !(sigma > 0.0))
    throw std::invalid_argument("ula_step_size needs positive arguments");
  return c1 / (c2 / beta + 1.0 / (sigma * sigma));
}

/// K unadjusted Langevin steps on V(u) = E(u)/beta + |u - x0|^2 / (2 sigma^2)
/// for every column.
inline Mat ula_likelihood_step(const EnergyFunction& energy, const Mat& x0, NoiseLevel sigma, const PnPGDConfig& c,
                               const Mat& u_init, Rng& rng) {
  const double step = ula_step_size(c.beta, c.c1, c.c2, sigma.value());
  const double noise = std::sqrt(2.0 * step);
  Mat u = u_init;
  for (int k = 0; k < c.ula_steps; ++k) {
    const Mat eps = normal_matrix(u.rows(), u.cols(), rng);
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      const Vec grad = energy.gradient(u.col(j)) / c.beta + (u.col(j) - x0.col(j)) * sigma.precision();
      u.col(j) += -step * grad + noise * eps.col(j);
    }
    if (!u.allFinite()) throw NonFiniteError("ULA iterate became non-finite at inner step " + std::to_string(k));
  }
  return u;
}

/// mu * acc + (1 - mu) * x, or x when nothing has been accumulated yet.
inline Mat ema_merge(const std::optional<Mat>& acc, const Mat& x, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("mu must lie in [0, 1]");
  if (!acc) return x;
  return mu * *acc + (1.0 - mu) * x;
}

struct PnPTrajectoryRow {
  int step = 0;  // i, counting down from N
  double sigma = 0.0;
  Vec x0;
  Vec u;
};

struct PnPTrajectory {
  std::vector<PnPTrajectoryRow> rows;  // chain 0 only
};

/// Runs one chain per column (`chains` of them) and returns the merged x0 draws (D x chains).
template <GenerativeDenoiser Denoiser>
Mat run_pnp_gd(const Denoiser& denoiser, const EnergyFunction& energy, const PnPGDConfig& c, Eigen::Index chains,
               Rng& rng, PnPTrajectory* trajectory = nullptr) {
  validate(c);
  const AnnealingSchedule schedule = pnp_schedule(c);
  const auto& s = schedule.levels;  // s[0] = sigma_N, ..., s[n-1] = sigma_1
  const Eigen::Index D = energy.dim;
  const bool exact = c.likelihood == "auto" && energy.has_exact();
  const SamplerConfig prior_chain =
      c.prior_steps > 1 ? SamplerConfig{c.zeta, select_levels(edm_schedule(40, 0.002, 80.0, 7.0),
                                                              few_step_indices(c.prior_steps)),
                                        kInf}
                        : SamplerConfig{};

  Mat u = s.front() * normal_matrix(D, chains, rng);
  std::optional<Mat> merged;
  Mat x0i;
  const std::size_t prior_steps_total = s.size() > 1 ? s.size() - 1 : 1;
  for (std::size_t k = 0; k < prior_steps_total; ++k) {
    const int i = c.n - static_cast<int>(k);
    const double sigma_i = s[k];
    try {
      x0i = c.prior_steps > 1 ? multistep_denoise(denoiser, u, sigma_i, prior_chain, rng)
                              : denoiser.sample(u, sigma_i, rng);
    } catch (const std::exception& e) {
      throw std::runtime_error("prior step at i = " + std::to_string(i) + ": " + e.what());
    }
    if (sigma_i < c.sigma_ema) merged = ema_merge(merged, x0i, c.mu);
    if (trajectory) trajectory->rows.push_back({i, sigma_i, x0i.col(0), u.col(0)});
    if (k + 1 < prior_steps_total) {
      const NoiseLevel next(s[k + 1]);
      try {
        u = exact ? energy.exact(x0i, next.value(), c.beta, rng) : ula_likelihood_step(energy, x0i, next, c, u, rng);
      } catch (const std::exception& e) {
        throw std::runtime_error("likelihood step at i = " + std::to_string(i) + ": " + e.what());
      }
    }
  }
  return merged ? *merged : x0i;
}

inline constexpr Eigen::Index kPnPChunk = 256;

/// n independent chains with one random stream per fixed-size chunk.
template <GenerativeDenoiser Denoiser>
SampleBatch pnp_sample(const Denoiser& denoiser, const EnergyFunction& energy, const PnPGDConfig& c, Eigen::Index n,
                       std::uint64_t seed, PnPTrajectory* trajectory = nullptr) {
  validate(c);
  SampleBatch batch;
  batch.points.resize(n, energy.dim);
  batch.seed = seed;
  batch.label = "pnp-gd";
  batch.steps = c.n;
  batch.sigma = c.sigma_min;
  const Eigen::Index chunks = (n + kPnPChunk - 1) / kPnPChunk;
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t k) {
    const Eigen::Index begin = static_cast<Eigen::Index>(k) * kPnPChunk;
    const Eigen::Index count = std::min(kPnPChunk, n - begin);
    Rng rng = make_rng(seed, 0x9a9d, k);
    const Mat x = run_pnp_gd(denoiser, energy, c, count, rng, k == 0 ? trajectory : nullptr);
    batch.points.middleRows(begin, count) = x.transpose();
  });
  return batch;
}

}  // namespace ncvsd
