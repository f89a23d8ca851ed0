// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Executable checks of the theory: the conditional-score identity, marginal
// preservation of the multi-step chain, unbiasedness of the distillation
// gradient, and finite-difference checks of every hand-written backward pass.

#pragma once

#include "ncvsd/gmm.hpp"
#include "ncvsd/nn.hpp"
#include "ncvsd/sampler.hpp"
#include "ncvsd/stats.hpp"
#include "ncvsd/train.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace ncvsd {

/// CDF of a one-dimensional mixture.
inline double mixture_cdf_1d(const GaussianMixture& gmm, double x) {
  if (gmm.dim() != 1) throw std::invalid_argument("mixture_cdf_1d needs a 1D mixture");
  double total = 0.0;
  for (std::size_t k = 0; k < gmm.components(); ++k) {
    const double sd = std::sqrt(gmm.covariances()[k](0, 0));
    total += gmm.weights()[k] * 0.5 * std::erfc(-(x - gmm.means()[k][0]) / (sd * std::numbers::sqrt2));
  }
  return total;
}

/// Random well-conditioned mixture: K in [1, 3], means in [-2, 2]^D,
/// covariances with eigenvalues in [0.05, 1].
inline GaussianMixture random_mixture(Eigen::Index dim, Rng& rng) {
  const int k = 1 + static_cast<int>(uniform01(rng) * 3.0) % 3;
  std::vector<double> w;
  std::vector<Vec> means;
  std::vector<Mat> covs;
  for (int i = 0; i < k; ++i) {
    w.push_back(0.2 + uniform01(rng));
    Vec m(dim);
    for (Eigen::Index d = 0; d < dim; ++d) m[d] = -2.0 + 4.0 * uniform01(rng);
    means.push_back(m);
    const Eigen::HouseholderQR<Mat> qr(normal_matrix(dim, dim, rng));
    const Mat q = qr.householderQ();
    Vec ev(dim);
    for (Eigen::Index d = 0; d < dim; ++d) ev[d] = 0.05 + 0.95 * uniform01(rng);
    covs.push_back(detail::symmetrize(q * ev.asDiagonal() * q.transpose()));
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  // renormalize once more so the sum is 1 to the last bit the validator checks
  w.back() = 1.0 - std::accumulate(w.begin(), w.end() - 1, 0.0);
  return GaussianMixture(w, means, covs);
}

inline double log_uniform(double lo, double hi, Rng& rng) {
  return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * uniform01(rng));
}

/// Five-point central difference of a scalar function along coordinate d.
inline double central_difference(const std::function<double(const Vec&)>& f, const Vec& x, Eigen::Index d, double h) {
  Vec p = x;
  auto at = [&](double off) {
    p[d] = x[d] + off;
    return f(p);
  };
  return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
}

// ---------------------------------------------------------------------------
// Conditional-score identity

/// Max per-coordinate gap between t^-2 (E[x0 | y_eff] - x_t) and finite
/// differences of log q(x_t | y_sigma), the latter the closed-form mixture
/// obtained by noising the denoising posterior at level t.
inline DistanceReport check_prop1(int trials, Rng& rng, std::vector<Eigen::Index> dims = {1, 2, 4},
                                  double tolerance = 1e-4) {
  DistanceReport r{"prop1_max_abs_error", 0.0, static_cast<std::size_t>(trials), 0};
  r.threshold = tolerance;
  for (int i = 0; i < trials; ++i) {
    const Eigen::Index dim = dims[static_cast<std::size_t>(i) % dims.size()];
    const GaussianMixture gmm = random_mixture(dim, rng);
    const NoiseLevel sigma(log_uniform(0.1, 10.0, rng));
    const NoiseLevel t(log_uniform(0.1, 10.0, rng));
    const Vec x0 = sample(gmm, 1, rng).points.row(0).transpose();
    const Vec y = x0 + sigma.value() * normal_matrix(dim, 1, rng).col(0);
    const Vec x_t = x0 + t.value() * normal_matrix(dim, 1, rng).col(0);
    const Vec analytic = conditional_score(gmm, x_t, t, {y, sigma});
    const GaussianMixture q_t = marginal_at_noise(denoising_posterior(gmm, {y, sigma}), t);
    const auto logq = [&](const Vec& x) { return q_t.log_density(x); };
    for (Eigen::Index d = 0; d < dim; ++d) {
      const double fd = central_difference(logq, x_t, d, 1e-3 * t.value());
      const double gap = std::abs(fd - analytic[d]);
      if (gap > r.value) {
        r.value = gap;
        r.detail = "trial " + std::to_string(i) + ", D=" + std::to_string(dim) + ", coordinate " + std::to_string(d);
      }
    }
  }
  r.passed = r.value < tolerance;
  return r;
}

// ---------------------------------------------------------------------------
// Marginal preservation

struct Prop2Setup {
  GaussianMixture gmm = two_mode_1d();
  double y = 0.5;
  double sigma = 1.0;  // kInf for the unconditional chain
  std::vector<double> levels = edm_schedule(8, 0.002, 80.0, 7.0).levels;
  double zeta = 1.0;
  Eigen::Index trajectories = 100000;
};

/// Exact q(x_i | y_sigma) at one level.
inline GaussianMixture chain_marginal(const Prop2Setup& s, double level) {
  const GaussianMixture base =
      std::isinf(s.sigma) ? s.gmm : denoising_posterior(s.gmm, {Vec::Constant(1, s.y), NoiseLevel(s.sigma)});
  return marginal_at_noise(base, NoiseLevel(level));
}

/// KS test of every retained latent x_i (and the final x0) against its
/// closed-form marginal. The chain starts from an exact draw of
/// q(x_N | y_sigma), so each level tests one transition-plus-denoise step.
inline std::vector<DistanceReport> check_prop2(const Prop2Setup& s, std::uint64_t seed, double alpha = 0.01) {
  const OracleDenoiser oracle(s.gmm);
  const SamplerConfig config{s.zeta, s.levels, kInf};
  validate(config);
  const std::size_t L = s.levels.size();
  std::vector<Mat> latents(L, Mat(s.trajectories, 1));
  Mat finals(s.trajectories, 1);
  const Eigen::Index chunks = (s.trajectories + kChainChunk - 1) / kChainChunk;
  const GaussianMixture start = chain_marginal(s, s.levels.front());
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChainChunk;
    const Eigen::Index count = std::min(kChainChunk, s.trajectories - begin);
    Rng rng = make_rng(seed, 0x9202, c);
    const Mat x_init = sample(start, static_cast<std::size_t>(count), rng).points.transpose();
    const Mat y = Mat::Constant(1, count, s.y);
    ChainRecord record;
    const Mat x0 = multistep_denoise(oracle, y, s.sigma, config, rng, &x_init, &record);
    for (std::size_t l = 0; l < L; ++l) latents[l].middleRows(begin, count) = record.latents[l].transpose();
    finals.middleRows(begin, count) = x0.transpose();
  });
  std::vector<DistanceReport> out;
  auto test = [&](const Mat& xs, const GaussianMixture& target, const std::string& name) {
    SampleBatch b;
    b.points = xs;
    DistanceReport r = ks_test_1d(b, [&](double x) { return mixture_cdf_1d(target, x); });
    r.threshold = alpha;
    r.passed = r.p_value > alpha;
    r.detail = name;
    out.push_back(r);
  };
  for (std::size_t l = 0; l < L; ++l) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "zeta=%g level=%zu sigma=%.6g", s.zeta, l, s.levels[l]);
    test(latents[l], chain_marginal(s, s.levels[l]), buf);
  }
  const GaussianMixture post =
      std::isinf(s.sigma) ? s.gmm : denoising_posterior(s.gmm, {Vec::Constant(1, s.y), NoiseLevel(s.sigma)});
  test(finals, post, "zeta=" + std::to_string(s.zeta).substr(0, 4) + " x0");
  return out;
}

// ---------------------------------------------------------------------------
// Gradient unbiasedness

/// 1D Gaussian data N(m, s^2), observation y = x0 + sigma eps and the linear
/// generator G(y, z) = a y + b + c z. Both p_theta(x_t | y) and q(x_t | y)
/// are Gaussian, so E_y KL(p || q) has a closed-form gradient.
struct LinearGaussianProblem {
  double m = 0.3;
  double s = 0.8;
  double a = 0.5;
  double b = 0.1;
  double c = 0.6;
  double sigma = 1.0;
  double t = 1.0;

  double gain() const { return s * s / (s * s + sigma * sigma); }
  double posterior_variance() const { return s * s * sigma * sigma / (s * s + sigma * sigma); }

  /// d/d(a, b, c) of E_y KL(N(a y + b, c^2 + t^2) || N(mu_post(y), v_post + t^2)).
  Eigen::Vector3d analytic_gradient() const {
    const double k = gain();
    const double v1 = c * c + t * t;
    const double v2 = posterior_variance() + t * t;
    const double ey = m, ey2 = m * m + s * s + sigma * sigma;
    const double off = b - m * (1.0 - k);  // mu1 - mu2 = (a - k) y + off
    return {((a - k) * ey2 + off * ey) / v2, ((a - k) * ey + off) / v2, c * (1.0 / v2 - 1.0 / v1)};
  }
};

struct GradientCheck {
  Eigen::Vector3d analytic;
  Eigen::Vector3d mc_mean;
  Eigen::Vector3d std_error;
  Eigen::Vector3d z;
};

/// Monte-Carlo mean of the distillation gradient with exact denoisers
/// substituted for the teacher (via the effective condition) and the model.
inline GradientCheck linear_generator_gradient(const LinearGaussianProblem& p, Eigen::Index samples, Rng& rng) {
  const GaussianMixture data({1.0}, {Vec::Constant(1, p.m)}, {Mat::Constant(1, 1, p.s * p.s)});
  const PosteriorMeanOracle teacher(data);
  const Eigen::Index n = samples;
  const Mat x0 = sample_columns(data, n, rng);
  const Mat y = x0 + p.sigma * normal_matrix(1, n, rng);
  const Mat z = normal_matrix(1, n, rng);
  const Mat x = (p.a * y).array() + p.b + (p.c * z).array();
  const Mat x_t = x + p.t * normal_matrix(1, n, rng);
  Mat y_eff(1, n);
  Vec s_eff(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const NoisyObservation eff = effective_condition({y.col(j), NoiseLevel(p.sigma)}, x_t.col(j), NoiseLevel(p.t));
    y_eff(0, j) = eff.y[0];
    s_eff[j] = eff.sigma.value();
  }
  const Mat s0 = teacher.mean(y_eff, s_eff);
  // E_p[x | x_t, y] for x ~ N(a y + b, c^2)
  const Mat mu1 = (p.a * y).array() + p.b;
  const Mat s_phi = mu1 + (p.c * p.c / (p.c * p.c + p.t * p.t)) * (x_t - mu1);
  const GeneratorLossTerms terms = distillation_terms(s0, s_phi, Mat::Zero(1, n));
  // per-sample d/dx of |x - sg(.)|^2 is grad_x * n; the KL gradient is that over 2 t^2
  Mat g(3, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double dx = terms.grad_x(0, j) * static_cast<double>(n) / (2.0 * p.t * p.t);
    g.col(j) << dx * y(0, j), dx, dx * z(0, j);
  }
  GradientCheck out;
  out.analytic = p.analytic_gradient();
  out.mc_mean = g.rowwise().mean();
  const Mat centered = g.colwise() - Vec(out.mc_mean);
  out.std_error = (centered.array().square().rowwise().sum() / static_cast<double>(n - 1)).sqrt() /
                  std::sqrt(static_cast<double>(n));
  out.z = (out.mc_mean - out.analytic).cwiseQuotient(out.std_error);
  return out;
}

/// Five random (t, sigma, theta) draws; passes when every |z| < 3.
inline std::vector<DistanceReport> check_gradient_unbiasedness(Eigen::Index samples, Rng& rng, int pairs = 5) {
  std::vector<DistanceReport> out;
  for (int i = 0; i < pairs; ++i) {
    LinearGaussianProblem p;
    p.t = log_uniform(0.1, 5.0, rng);
    p.sigma = log_uniform(0.1, 5.0, rng);
    p.a = 1.5 * uniform01(rng);
    p.b = 0.5 * standard_normal(rng);
    p.c = 0.2 + 1.3 * uniform01(rng);
    const GradientCheck g = linear_generator_gradient(p, samples, rng);
    const char* names[3] = {"a", "b", "c"};
    for (int k = 0; k < 3; ++k) {
      DistanceReport r{"gradient_abs_z", std::abs(g.z[k]), static_cast<std::size_t>(samples), 0};
      r.std_error = g.std_error[k];
      r.threshold = 3.0;
      r.passed = r.value < 3.0;
      char buf[160];
      std::snprintf(buf, sizeof buf, "t=%.4g sigma=%.4g param=%s analytic=%.6g mc=%.6g", p.t, p.sigma, names[k],
                    g.analytic[k], g.mc_mean[k]);
      r.detail = buf;
      out.push_back(r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference checks of backward passes

struct GradientComparison {
  double worst_excess = 0.0;  // max over entries of |a - n| - max(abs_tol, rel_tol |n|); <= 0 passes
  double max_abs_error = 0.0;
  std::string where;
  std::size_t entries = 0;
};

inline void compare_gradient(GradientComparison& cmp, const std::string& where, double analytic, double numeric,
                             double abs_tol = 1e-5, double rel_tol = 1e-3) {
  const double err = std::abs(analytic - numeric);
  const double excess = err - std::max(abs_tol, rel_tol * std::abs(numeric));
  ++cmp.entries;
  cmp.max_abs_error = std::max(cmp.max_abs_error, err);
  if (cmp.entries == 1 || excess > cmp.worst_excess) {
    cmp.worst_excess = excess;
    cmp.where = where;
  }
}

/// Compares param gradients of loss(net) = sum(R .* f(net)) against central
/// differences. `forward` must evaluate the scalar loss for the given net;
/// `analytic` holds backward's gradients.
template <class Net>
void fd_check_params(GradientComparison& cmp, const std::string& label, Net net, const Net& analytic,
                     const std::function<double(const Net&)>& loss, double h = 1e-6) {
  auto live = param_views(net);
  const auto grads = param_views(analytic);
  for (std::size_t i = 0; i < live.size(); ++i) {
    for (std::size_t k = 0; k < live[i].data.size(); ++k) {
      const double keep = live[i].data[k];
      live[i].data[k] = keep + h;
      const double up = loss(net);
      live[i].data[k] = keep - h;
      const double down = loss(net);
      live[i].data[k] = keep;
      compare_gradient(cmp, label + ":" + live[i].name + "[" + std::to_string(k) + "]", grads[i].data[k],
                       (up - down) / (2 * h));
    }
  }
}

inline void fd_check_input(GradientComparison& cmp, const std::string& label, const Mat& x, const Mat& analytic,
                           const std::function<double(const Mat&)>& loss, double h = 1e-6) {
  Mat p = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    p.data()[k] = x.data()[k] + h;
    const double up = loss(p);
    p.data()[k] = x.data()[k] - h;
    const double down = loss(p);
    p.data()[k] = x.data()[k];
    compare_gradient(cmp, label + ":input[" + std::to_string(k) + "]", analytic.data()[k], (up - down) / (2 * h));
  }
}

/// One random configuration per network family; returns the comparison.
inline GradientComparison fd_check_denoiser(Rng& rng, bool conditioned) {
  const Eigen::Index dim = 1 + static_cast<Eigen::Index>(uniform01(rng) * 3);
  const Eigen::Index width = 3 + static_cast<Eigen::Index>(uniform01(rng) * 4);
  const int depth = 1 + static_cast<int>(uniform01(rng) * 3);
  const Eigen::Index batch = 3;
  MLPDenoiser net = MLPDenoiser::init(dim, width, depth, conditioned, 0.5, rng);
  if (conditioned)
    for (Eigen::Index l = 0; l < net.merge.size(); ++l) net.merge[l] = 0.1 + 0.8 * uniform01(rng);
  const Mat x = normal_matrix(dim, batch, rng);
  Vec sigma(batch);
  for (Eigen::Index j = 0; j < batch; ++j) sigma[j] = log_uniform(0.01, 50.0, rng);
  const Conditioning cond{normal_matrix(dim, batch, rng), Vec(sigma * 1.7)};
  const Conditioning* cp = conditioned ? &cond : nullptr;
  const Mat R = normal_matrix(dim, batch, rng);
  MLPDenoiser::Cache cache;
  net.forward(x, sigma, cp, &cache);
  MLPDenoiser grads = zeros_like(net);
  Mat grad_x;
  net.backward(cache, R, grads, &grad_x);
  GradientComparison cmp;
  const std::string label = conditioned ? "conditioned denoiser" : "denoiser";
  fd_check_params<MLPDenoiser>(cmp, label, net, grads,
                               [&](const MLPDenoiser& n) { return n.forward(x, sigma, cp).cwiseProduct(R).sum(); });
  fd_check_input(cmp, label, x, grad_x, [&](const Mat& xi) { return net.forward(xi, sigma, cp).cwiseProduct(R).sum(); });
  return cmp;
}

inline GradientComparison fd_check_discriminator(Rng& rng) {
  const Eigen::Index dim = 1 + static_cast<Eigen::Index>(uniform01(rng) * 3);
  const Eigen::Index width = 3 + static_cast<Eigen::Index>(uniform01(rng) * 4);
  const int depth = 1 + static_cast<int>(uniform01(rng) * 3);
  const Eigen::Index batch = 3;
  const Discriminator d = Discriminator::init(dim, width, depth, 0.5, rng);
  const Mat x = normal_matrix(dim, batch, rng);
  const Mat y = normal_matrix(dim, batch, rng);
  Vec t(batch), sigma(batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    t[j] = log_uniform(0.01, 50.0, rng);
    sigma[j] = log_uniform(0.01, 50.0, rng);
  }
  const Mat R = normal_matrix(1, batch, rng);
  Discriminator::Cache cache;
  d.logits(x, t, y, sigma, &cache);
  Discriminator grads = zeros_like(d);
  Mat grad_x;
  d.backward(cache, R, grads, &grad_x);
  GradientComparison cmp;
  fd_check_params<Discriminator>(cmp, "discriminator", d, grads, [&](const Discriminator& n) {
    return n.logits(x, t, y, sigma).cwiseProduct(R).sum();
  });
  fd_check_input(cmp, "discriminator", x, grad_x,
                 [&](const Mat& xi) { return d.logits(xi, t, y, sigma).cwiseProduct(R).sum(); });
  return cmp;
}

inline GradientComparison fd_check_weighting(Rng& rng) {
  UncertaintyNet u = UncertaintyNet::init(rng, 4 + static_cast<Eigen::Index>(uniform01(rng) * 8));
  u.out.weight = normal_matrix(u.out.weight.rows(), u.out.weight.cols(), rng);  // nonzero so hidden grads matter
  const Eigen::Index batch = 4;
  Vec t(batch);
  for (Eigen::Index j = 0; j < batch; ++j) t[j] = log_uniform(1e-3, 100.0, rng);
  const Mat R = normal_matrix(1, batch, rng);
  UncertaintyNet::Cache cache;
  u.forward(t, &cache);
  UncertaintyNet grads = zeros_like(u);
  u.backward(cache, R, grads);
  GradientComparison cmp;
  fd_check_params<UncertaintyNet>(cmp, "uncertainty", u, grads,
                                  [&](const UncertaintyNet& n) { return n.forward(t).cwiseProduct(R).sum(); });
  return cmp;
}

/// Generator objective (distillation + adversarial) w.r.t. generator
/// parameters with the stop-gradient target held fixed.
inline GradientComparison fd_check_generator_loss(Rng& rng) {
  const Eigen::Index dim = 1 + static_cast<Eigen::Index>(uniform01(rng) * 3);
  const Eigen::Index width = 3 + static_cast<Eigen::Index>(uniform01(rng) * 3);
  const int depth = 1 + static_cast<int>(uniform01(rng) * 2);
  const Eigen::Index batch = 3;
  MLPDenoiser gen = MLPDenoiser::init(dim, width, depth, true, 0.5, rng);
  for (Eigen::Index l = 0; l < gen.merge.size(); ++l) gen.merge[l] = 0.1 + 0.8 * uniform01(rng);
  const Discriminator disc = Discriminator::init(dim, width, depth, 0.5, rng);
  const Mat y = normal_matrix(dim, batch, rng);
  const Mat z = normal_matrix(dim, batch, rng);
  const Mat eps = normal_matrix(dim, batch, rng);
  Vec sigma(batch), t(batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    sigma[j] = log_uniform(0.05, 20.0, rng);
    t[j] = log_uniform(0.05, 20.0, rng);
  }
  const double gamma = 0.414;
  const Mat w = normal_matrix(1, batch, rng);
  MLPDenoiser::Cache gc;
  const Mat x = generator_forward(gen, y, sigma, z, gamma, &gc);
  Mat x_t = x;
  for (Eigen::Index j = 0; j < batch; ++j) x_t.col(j) += t[j] * eps.col(j);
  // frozen target: s0 - s_phi + x, evaluated at the current parameters
  const Mat s0 = normal_matrix(dim, batch, rng);
  const Mat s_phi = normal_matrix(dim, batch, rng);
  const Mat target = s0 - s_phi + x;
  GeneratorLossTerms terms = distillation_terms(s0, s_phi, w);
  Discriminator::Cache dc;
  const Mat logit = disc.logits(x_t, t, y, sigma, &dc);
  Mat grad_logit(1, batch);
  const double D = static_cast<double>(dim);
  for (Eigen::Index j = 0; j < batch; ++j) grad_logit(0, j) = D * (sigmoid(logit(0, j)) - 1.0) / batch;
  Discriminator unused = zeros_like(disc);
  Mat grad_xt;
  disc.backward(dc, grad_logit, unused, &grad_xt);
  terms.grad_x += grad_xt;
  MLPDenoiser grads = zeros_like(gen);
  gen.backward(gc, terms.grad_x, grads);
  const auto loss = [&](const MLPDenoiser& g) {
    const Mat xg = generator_forward(g, y, sigma, z, gamma);
    Mat xt = xg;
    for (Eigen::Index j = 0; j < batch; ++j) xt.col(j) += t[j] * eps.col(j);
    const Mat l = disc.logits(xt, t, y, sigma);
    double total = 0.0;
    for (Eigen::Index j = 0; j < batch; ++j)
      total += (std::exp(-w(0, j)) * (xg.col(j) - target.col(j)).squaredNorm() + D * w(0, j) +
                D * softplus_neg(l(0, j))) /
               batch;
    return total;
  };
  GradientComparison cmp;
  fd_check_params<MLPDenoiser>(cmp, "generator loss", gen, grads, loss);
  return cmp;
}

struct BackwardSuiteResult {
  std::vector<std::pair<std::string, GradientComparison>> families;
  bool passed = true;
};

/// `configs` random configurations for each network family.
inline BackwardSuiteResult check_backward(int configs, Rng& rng) {
  BackwardSuiteResult out;
  const std::vector<std::pair<std::string, std::function<GradientComparison(Rng&)>>> families = {
      {"denoiser", [](Rng& r) { return fd_check_denoiser(r, false); }},
      {"conditioned_denoiser", [](Rng& r) { return fd_check_denoiser(r, true); }},
      {"discriminator", [](Rng& r) { return fd_check_discriminator(r); }},
      {"uncertainty", [](Rng& r) { return fd_check_weighting(r); }},
      {"generator_loss", [](Rng& r) { return fd_check_generator_loss(r); }},
  };
  for (const auto& [name, run] : families) {
    GradientComparison worst;
    for (int i = 0; i < configs; ++i) {
      const GradientComparison c = run(rng);
      worst.entries += c.entries;
      worst.max_abs_error = std::max(worst.max_abs_error, c.max_abs_error);
      if (i == 0 || c.worst_excess > worst.worst_excess) {
        worst.worst_excess = c.worst_excess;
        worst.where = "config " + std::to_string(i) + " " + c.where;
      }
    }
    out.passed = out.passed && worst.worst_excess <= 0.0;
    out.families.emplace_back(name, worst);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Suites

struct SuiteReport {
  std::string suite;
  std::uint64_t seed = 0;
  std::vector<DistanceReport> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const DistanceReport& r) { return r.passed; });
  }
};

inline nlohmann::json to_json(const SuiteReport& s) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& r : s.checks) checks.push_back(to_json(r));
  return {{"suite", s.suite}, {"seed", s.seed}, {"passed", s.passed()}, {"checks", checks}};
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"prop1", "prop2", "gradient", "backward"};
  return names;
}

inline SuiteReport run_suite(const std::string& name, std::uint64_t seed) {
  SuiteReport out{name, seed, {}};
  if (name == "prop1") {
    Rng rng = make_rng(seed, 0x1);
    out.checks.push_back(check_prop1(1000, rng));
  } else if (name == "prop2") {
    for (double zeta : {0.25, 0.5, 1.0}) {
      Prop2Setup s;
      s.zeta = zeta;
      for (auto& r : check_prop2(s, derive_seed(seed, 0x2, static_cast<std::uint64_t>(zeta * 100))))
        out.checks.push_back(r);
    }
  } else if (name == "gradient") {
    Rng rng = make_rng(seed, 0x3);
    out.checks = check_gradient_unbiasedness(100000, rng);
  } else if (name == "backward") {
    Rng rng = make_rng(seed, 0x4);
    const BackwardSuiteResult b = check_backward(20, rng);
    for (const auto& [family, cmp] : b.families) {
      DistanceReport r{"fd_max_abs_error", cmp.max_abs_error, cmp.entries, 0};
      r.passed = cmp.worst_excess <= 0.0;
      r.detail = family + " worst at " + cmp.where;
      out.checks.push_back(r);
    }
  } else {
    throw std::invalid_argument("unknown verify suite '" + name + "'");
  }
  return out;
}

}  // namespace ncvsd
