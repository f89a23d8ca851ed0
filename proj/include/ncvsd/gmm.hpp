// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form Gaussian-mixture machinery: noised marginals, scores,
// denoising posteriors, effective conditions and linear-Gaussian posteriors.
// Everything here is exact and serves as ground truth for the rest of the
// library.

#pragma once

#include "ncvsd/core.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <fstream>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace ncvsd {

namespace detail {

inline double log_sum_exp(const Vec& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline double condition_number(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

/// Cholesky of a symmetric positive definite matrix with the condition guard.
inline Eigen::LLT<Mat> guarded_llt(const Mat& sym, const char* what) {
  const double cond = condition_number(sym);
  if (!(cond <= kMaxCondition)) {
    throw NumericalError(std::string(what) + ": condition number " + std::to_string(cond) +
                         " exceeds 1e12");
  }
  Eigen::LLT<Mat> llt(sym);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": Cholesky failed");
  return llt;
}

inline double log_det(const Eigen::LLT<Mat>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

inline double log_normal_pdf(const Vec& x, const Vec& mean, const Eigen::LLT<Mat>& llt,
                             double logdet) {
  const Vec r = llt.matrixL().solve(x - mean);
  const double d = static_cast<double>(x.size());
  return -0.5 * (r.squaredNorm() + logdet + d * std::log(2.0 * std::numbers::pi));
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

}  // namespace detail

/// Weighted sum of full-covariance Gaussians in D dimensions.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<Vec> means, std::vector<Mat> covariances)
      : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)) {
    validate();
    for (const auto& c : covs_) {
      chol_.emplace_back(c);
      log_det_.push_back(detail::log_det(chol_.back()));
    }
  }

  std::size_t components() const { return weights_.size(); }
  Eigen::Index dim() const { return means_.front().size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Vec>& means() const { return means_; }
  const std::vector<Mat>& covariances() const { return covs_; }

  /// Per-component log(w_k N(x; mu_k, Sigma_k)).
  Vec component_log_densities(const Vec& x) const {
    if (x.size() != dim())
      throw std::invalid_argument("point has dimension " + std::to_string(x.size()) + ", mixture has " +
                                  std::to_string(dim()));
    Vec out(components());
    for (std::size_t k = 0; k < components(); ++k) {
      out[k] = std::log(weights_[k]) + detail::log_normal_pdf(x, means_[k], chol_[k], log_det_[k]);
    }
    return out;
  }

  double log_density(const Vec& x) const { return detail::log_sum_exp(component_log_densities(x)); }

  /// grad_x log p(x).
  Vec score(const Vec& x) const {
    const Vec logp = component_log_densities(x);
    const double total = detail::log_sum_exp(logp);
    Vec g = Vec::Zero(dim());
    for (std::size_t k = 0; k < components(); ++k) {
      const double r = std::exp(logp[k] - total);
      if (r == 0.0) continue;
      g -= r * chol_[k].solve(x - means_[k]);
    }
    return g;
  }

  Vec mean() const {
    Vec m = Vec::Zero(dim());
    for (std::size_t k = 0; k < components(); ++k) m += weights_[k] * means_[k];
    return m;
  }

 private:
  void validate() const {
    if (weights_.empty()) throw std::invalid_argument("mixture needs at least one component");
    if (means_.size() != weights_.size() || covs_.size() != weights_.size())
      throw std::invalid_argument("mixture weights/means/covariances length mismatch");
    const Eigen::Index d = means_.front().size();
    if (d == 0) throw std::invalid_argument("mixture dimension must be positive");
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("mixture weight must be >= 0");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      if (means_[k].size() != d || covs_[k].rows() != d || covs_[k].cols() != d)
        throw std::invalid_argument("mixture component " + std::to_string(k) + " has wrong shape");
      if (!means_[k].allFinite() || !covs_[k].allFinite())
        throw std::invalid_argument("mixture component " + std::to_string(k) + " is not finite");
      if ((covs_[k] - covs_[k].transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + covs_[k].cwiseAbs().maxCoeff()))
        throw std::invalid_argument("covariance " + std::to_string(k) + " is not symmetric");
      Eigen::SelfAdjointEigenSolver<Mat> es(covs_[k], Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > 1e-12))
        throw std::invalid_argument("covariance " + std::to_string(k) + " is not positive definite");
    }
  }

  std::vector<double> weights_;
  std::vector<Vec> means_;
  std::vector<Mat> covs_;
  std::vector<Eigen::LLT<Mat>> chol_;
  std::vector<double> log_det_;
};

/// Builds weights from unnormalized log-weights with log-sum-exp.
inline std::vector<double> normalize_log_weights(const Vec& logw) {
  const double total = detail::log_sum_exp(logw);
  std::vector<double> w(logw.size());
  for (Eigen::Index k = 0; k < logw.size(); ++k) w[k] = std::exp(logw[k] - total);
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= s;
  return w;
}

/// q_data convolved with N(0, t^2 I).
inline GaussianMixture marginal_at_noise(const GaussianMixture& gmm, NoiseLevel t) {
  std::vector<Mat> covs;
  for (const auto& c : gmm.covariances())
    covs.push_back(c + t.variance() * Mat::Identity(gmm.dim(), gmm.dim()));
  return {gmm.weights(), gmm.means(), std::move(covs)};
}

/// Score of the t-noised mixture at x.
inline Vec score(const GaussianMixture& gmm, const Vec& x, NoiseLevel t) {
  return marginal_at_noise(gmm, t).score(x);
}

/// Precomputed per-component factors of q(x0 | y_sigma) at a fixed sigma.
/// Reused across many observations when sampling batches.
class DenoisingKernel {
 public:
  DenoisingKernel(const GaussianMixture& gmm, NoiseLevel sigma) : gmm_(&gmm), sigma_(sigma) {
    const Eigen::Index d = gmm.dim();
    const Mat eye = Mat::Identity(d, d);
    for (std::size_t k = 0; k < gmm.components(); ++k) {
      const Mat& cov = gmm.covariances()[k];
      const Mat evidence = cov + sigma.variance() * eye;
      auto llt = detail::guarded_llt(evidence, "denoising posterior");
      // gain = Sigma (Sigma + s^2 I)^-1; posterior cov = s^2 * gain.
      const Mat gain = llt.solve(cov).transpose();
      Mat post = detail::symmetrize(sigma.variance() * gain);
      Eigen::LLT<Mat> post_llt(post);
      if (post_llt.info() != Eigen::Success) throw NumericalError("denoising posterior: covariance not PD");
      log_det_.push_back(detail::log_det(llt));
      evidence_.push_back(std::move(llt));
      gain_.push_back(gain);
      post_chol_.push_back(post_llt.matrixL());
      post_cov_.push_back(std::move(post));
    }
  }

  NoiseLevel sigma() const { return sigma_; }

  Vec log_weights(const Vec& y) const {
    Vec out(gmm_->components());
    for (std::size_t k = 0; k < gmm_->components(); ++k) {
      out[k] = std::log(gmm_->weights()[k]) +
               detail::log_normal_pdf(y, gmm_->means()[k], evidence_[k], log_det_[k]);
    }
    return out;
  }

  Vec component_mean(std::size_t k, const Vec& y) const {
    return gmm_->means()[k] + gain_[k] * (y - gmm_->means()[k]);
  }

  Vec mean(const Vec& y) const {
    const auto w = normalize_log_weights(log_weights(y));
    Vec m = Vec::Zero(gmm_->dim());
    for (std::size_t k = 0; k < w.size(); ++k) m += w[k] * component_mean(k, y);
    return m;
  }

  GaussianMixture posterior(const Vec& y) const {
    std::vector<Vec> means;
    for (std::size_t k = 0; k < gmm_->components(); ++k) means.push_back(component_mean(k, y));
    return {normalize_log_weights(log_weights(y)), std::move(means), post_cov_};
  }

  /// One exact draw from q(x0 | y_sigma).
  Vec sample(const Vec& y, Rng& rng) const {
    const auto w = normalize_log_weights(log_weights(y));
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const std::size_t k = pick(rng);
    Vec eps(gmm_->dim());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = standard_normal(rng);
    return component_mean(k, y) + post_chol_[k] * eps;
  }

 private:
  const GaussianMixture* gmm_;
  NoiseLevel sigma_;
  std::vector<Eigen::LLT<Mat>> evidence_;
  std::vector<double> log_det_;
  std::vector<Mat> gain_;
  std::vector<Mat> post_chol_;
  std::vector<Mat> post_cov_;
};

/// Batched E[x0 | y, sigma] with a different sigma per column. Each
/// covariance is eigendecomposed once so any noise level costs O(K D^2).
class PosteriorMeanOracle {
 public:
  explicit PosteriorMeanOracle(const GaussianMixture& gmm) : gmm_(&gmm) {
    for (const auto& c : gmm.covariances()) {
      Eigen::SelfAdjointEigenSolver<Mat> es(c);
      basis_.push_back(es.eigenvectors());
      spectrum_.push_back(es.eigenvalues());
    }
  }

  Vec mean(const Vec& y, double sigma) const {
    const std::size_t K = gmm_->components();
    const double var = sigma * sigma;
    const double d = static_cast<double>(y.size());
    Vec logw(K);
    std::vector<Vec> means(K);
    for (std::size_t k = 0; k < K; ++k) {
      const Vec r = basis_[k].transpose() * (y - gmm_->means()[k]);
      const Vec total = spectrum_[k].array() + var;
      logw[k] = std::log(gmm_->weights()[k]) -
                0.5 * ((r.array().square() / total.array()).sum() + total.array().log().sum() +
                       d * std::log(2.0 * std::numbers::pi));
      means[k] = gmm_->means()[k] + basis_[k] * (spectrum_[k].array() / total.array() * r.array()).matrix();
    }
    const double norm = detail::log_sum_exp(logw);
    Vec m = Vec::Zero(y.size());
    for (std::size_t k = 0; k < K; ++k) m += std::exp(logw[k] - norm) * means[k];
    return m;
  }

  Mat mean(const Mat& y, const Vec& sigma) const {
    Mat out(y.rows(), y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) out.col(j) = mean(Vec(y.col(j)), sigma[j]);
    return out;
  }

 private:
  const GaussianMixture* gmm_;
  std::vector<Mat> basis_;
  std::vector<Vec> spectrum_;
};

inline void check_dim(const GaussianMixture& gmm, const Vec& v, const char* what) {
  if (v.size() != gmm.dim())
    throw std::invalid_argument(std::string(what) + " has dimension " + std::to_string(v.size()) +
                                ", mixture has " + std::to_string(gmm.dim()));
}

/// Exact q(x0 | y_sigma) as a mixture.
inline GaussianMixture denoising_posterior(const GaussianMixture& gmm, const NoisyObservation& obs) {
  check_dim(gmm, obs.y, "observation");
  return DenoisingKernel(gmm, obs.sigma).posterior(obs.y);
}

/// E[x0 | y_sigma].
inline Vec posterior_mean(const GaussianMixture& gmm, const NoisyObservation& obs) {
  check_dim(gmm, obs.y, "observation");
  return DenoisingKernel(gmm, obs.sigma).mean(obs.y);
}

/// Fuses (y, sigma) and (x_t, t) into the single observation that carries
/// the same information about x0.
inline NoisyObservation effective_condition(const NoisyObservation& y_sigma, const Vec& x_t, NoiseLevel t) {
  const double ps = y_sigma.sigma.precision();
  const double pt = t.precision();
  const double var_eff = 1.0 / (ps + pt);
  return {var_eff * (ps * y_sigma.y + pt * x_t), NoiseLevel(std::sqrt(var_eff))};
}

/// grad_{x_t} log q(x_t | y_sigma) = t^-2 (E[x0 | y_eff] - x_t).
inline Vec conditional_score(const GaussianMixture& gmm, const Vec& x_t, NoiseLevel t,
                             const NoisyObservation& obs) {
  check_dim(gmm, x_t, "x_t");
  const NoisyObservation eff = effective_condition(obs, x_t, t);
  return t.precision() * (posterior_mean(gmm, eff) - x_t);
}

/// Exact ancestral sampling; deterministic in rng.
inline SampleBatch sample(const GaussianMixture& gmm, std::size_t n, Rng& rng) {
  SampleBatch batch;
  batch.points.resize(static_cast<Eigen::Index>(n), gmm.dim());
  batch.label = "oracle";
  std::vector<Mat> chol;
  for (const auto& c : gmm.covariances()) chol.push_back(Eigen::LLT<Mat>(c).matrixL());
  std::discrete_distribution<std::size_t> pick(gmm.weights().begin(), gmm.weights().end());
  Vec eps(gmm.dim());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = pick(rng);
    for (Eigen::Index j = 0; j < eps.size(); ++j) eps[j] = standard_normal(rng);
    batch.points.row(static_cast<Eigen::Index>(i)) = (gmm.means()[k] + chol[k] * eps).transpose();
  }
  return batch;
}

/// Posterior of x under prior gmm and likelihood N(y; A x, sigma_y^2 I).
inline GaussianMixture linear_posterior(const GaussianMixture& gmm, const Mat& A, const Vec& y,
                                        NoiseLevel sigma_y) {
  if (A.cols() != gmm.dim() || A.rows() != y.size())
    throw std::invalid_argument("operator shape does not match mixture/observation dimensions");
  const Mat eye = Mat::Identity(A.rows(), A.rows());
  Vec logw(gmm.components());
  std::vector<Vec> means;
  std::vector<Mat> covs;
  for (std::size_t k = 0; k < gmm.components(); ++k) {
    const Mat& cov = gmm.covariances()[k];
    const Vec& mu = gmm.means()[k];
    const Mat s = detail::symmetrize(A * cov * A.transpose() + sigma_y.variance() * eye);
    auto llt = detail::guarded_llt(s, "linear posterior");
    const Mat gain = llt.solve(A * cov).transpose();  // Sigma A^T S^-1
    const Vec pred = A * mu;
    logw[k] = std::log(gmm.weights()[k]) + detail::log_normal_pdf(y, pred, llt, detail::log_det(llt));
    means.push_back(mu + gain * (y - pred));
    covs.push_back(detail::symmetrize(cov - gain * A * cov));
  }
  return {normalize_log_weights(logw), std::move(means), std::move(covs)};
}

// ---------------------------------------------------------------------------
// Presets

/// `modes` isotropic Gaussians evenly spaced on a circle in 2D.
inline GaussianMixture ring_mixture(int modes = 8, double radius = 1.0, double stddev = 0.1) {
  std::vector<double> w(modes, 1.0 / modes);
  std::vector<Vec> means;
  std::vector<Mat> covs;
  for (int k = 0; k < modes; ++k) {
    const double a = 2.0 * std::numbers::pi * k / modes;
    means.push_back(Vec{{radius * std::cos(a), radius * std::sin(a)}});
    covs.push_back(stddev * stddev * Mat::Identity(2, 2));
  }
  // 1/modes need not sum to exactly 1 in floating point.
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= s;
  return {std::move(w), std::move(means), std::move(covs)};
}

/// Equal-weight 1D mixture of N(-offset, var) and N(+offset, var).
inline GaussianMixture two_mode_1d(double offset = 2.0, double variance = 0.1) {
  return {{0.5, 0.5}, {Vec::Constant(1, -offset), Vec::Constant(1, offset)},
          {Mat::Constant(1, 1, variance), Mat::Constant(1, 1, variance)}};
}

// ---------------------------------------------------------------------------
// Serialization: {"weights": [...], "means": [[...]], "covariances": [[[...]]]}

inline nlohmann::json to_json(const GaussianMixture& gmm) {
  nlohmann::json j;
  j["weights"] = gmm.weights();
  j["means"] = nlohmann::json::array();
  j["covariances"] = nlohmann::json::array();
  for (const auto& m : gmm.means()) j["means"].push_back(std::vector<double>(m.data(), m.data() + m.size()));
  for (const auto& c : gmm.covariances()) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
      std::vector<double> row(c.cols());
      for (Eigen::Index q = 0; q < c.cols(); ++q) row[q] = c(r, q);
      rows.push_back(row);
    }
    j["covariances"].push_back(rows);
  }
  return j;
}

inline GaussianMixture mixture_from_json(const nlohmann::json& j) {
  for (const auto& [key, _] : j.items())
    if (key != "weights" && key != "means" && key != "covariances")
      throw std::invalid_argument("unknown mixture key: " + key);
  auto weights = j.at("weights").get<std::vector<double>>();
  std::vector<Vec> means;
  for (const auto& m : j.at("means")) {
    auto v = m.get<std::vector<double>>();
    means.push_back(Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  std::vector<Mat> covs;
  for (const auto& c : j.at("covariances")) {
    const auto rows = c.get<std::vector<std::vector<double>>>();
    Mat m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<Eigen::Index>(rows[r].size()) != m.cols())
        throw std::invalid_argument("ragged covariance matrix");
      for (std::size_t q = 0; q < rows[r].size(); ++q) m(r, q) = rows[r][q];
    }
    covs.push_back(std::move(m));
  }
  return {std::move(weights), std::move(means), std::move(covs)};
}

inline void save_mixture(const GaussianMixture& gmm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(gmm).dump(2) << '\n';
}

inline GaussianMixture load_mixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read mixture file " + path);
  return mixture_from_json(nlohmann::json::parse(in));
}

}  // namespace ncvsd
