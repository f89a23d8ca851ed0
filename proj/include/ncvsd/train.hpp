// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Noise-conditional variational score distillation. One optimizer step per
// batch runs, in order: the model-score regression, the discriminator update
// (real pairs built from data, fake pairs from the generator), and the
// generator update with the uncertainty-weighted distillation loss plus the
// dimension-scaled adversarial term.

#pragma once

#include "ncvsd/core.hpp"
#include "ncvsd/gmm.hpp"
#include "ncvsd/nn.hpp"
#include "ncvsd/sampler.hpp"
#include "ncvsd/stats.hpp"

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ncvsd {

enum class TeacherMode { analytic, learned };

struct TrainConfig {
  // noise distributions
  double p_mean = -0.8;
  double p_std = 1.6;
  int sigma_grid_n = 1000;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  // optimization
  int batch_size = 128;
  double lr_ref = 0.01;
  double lr_decay_steps = 35000;  // t_ref, in optimizer steps
  long lr_warmup_images = 1000;
  long adv_warmup_images = 16778;
  double lr_scale_disc = 0.01;
  double lr_scale_gen = 0.01;
  int score_updates = 1;  // score-model updates per generator update
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double gamma = 0.414;
  double ema_rate = 0.999;
  long total_images = 1L << 20;
  std::uint64_t seed = 0;
  TeacherMode teacher = TeacherMode::analytic;
  // networks
  int width = 256;
  int depth = 3;
  double sigma_data = 0.5;
  // teacher / warm start regression
  long teacher_images = 1L << 18;
  double teacher_lr = 2e-3;
  double teacher_threshold = 0.05;
  // telemetry
  int metric_every = 500;
  int metric_samples = 4096;
  int metric_projections = 128;
};

inline constexpr std::size_t kTelemetryCapacity = 1000;

inline void validate(const TrainConfig& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  positive(c.sigma_grid_n, "sigma_grid_n");
  positive(c.sigma_min, "sigma_min");
  positive(c.sigma_max, "sigma_max");
  if (!(c.sigma_min < c.sigma_max)) throw std::invalid_argument("sigma_min must be < sigma_max");
  positive(c.rho, "rho");
  positive(c.batch_size, "batch_size");
  positive(c.score_updates, "score_updates");
  positive(c.lr_decay_steps, "lr_decay_steps");
  positive(c.gamma, "gamma");
  positive(c.width, "width");
  positive(c.depth, "depth");
  positive(c.sigma_data, "sigma_data");
  if (!(c.p_std >= 0.0)) throw std::invalid_argument("p_std must be non-negative");
  if (c.lr_ref < 0.0 || c.lr_warmup_images < 0 || c.adv_warmup_images < 0 || c.total_images < 0)
    throw std::invalid_argument("learning rate, warmups and budget must be non-negative");
  if (c.metric_every > static_cast<int>(kTelemetryCapacity))
    throw std::invalid_argument("metric_every exceeds the telemetry buffer");
  if (!(c.ema_rate >= 0.0 && c.ema_rate <= 1.0)) throw std::invalid_argument("ema_rate must lie in [0, 1]");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0 && c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Schedules and noise sampling

/// Linear warmup to lr_ref, then lr_ref / sqrt(max(k / t_ref, 1)) in optimizer steps k.
inline double learning_rate(const TrainConfig& c, long images_seen) {
  const double warm = c.lr_warmup_images > 0
                          ? std::min(1.0, static_cast<double>(images_seen) / static_cast<double>(c.lr_warmup_images))
                          : 1.0;
  const double steps = static_cast<double>(images_seen) / c.batch_size;
  return c.lr_ref * warm / std::sqrt(std::max(steps / c.lr_decay_steps, 1.0));
}

/// log t ~ N(p_mean, p_std^2).
inline NoiseLevel sample_t(const TrainConfig& c, Rng& rng) {
  return NoiseLevel(std::exp(c.p_mean + c.p_std * standard_normal(rng)));
}

inline const std::vector<double>& sigma_grid(const TrainConfig& c) {
  thread_local AnnealingSchedule cached;
  if (cached.n != c.sigma_grid_n || cached.sigma_min != c.sigma_min || cached.sigma_max != c.sigma_max ||
      cached.rho != c.rho)
    cached = edm_schedule(c.sigma_grid_n, c.sigma_min, c.sigma_max, c.rho);
  return cached.levels;
}

/// Uniform over the inference-time grid.
inline NoiseLevel sample_sigma(const TrainConfig& c, Rng& rng) {
  const auto& grid = sigma_grid(c);
  std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
  return NoiseLevel(grid[pick(rng)]);
}

inline Vec sample_t(const TrainConfig& c, Eigen::Index n, Rng& rng) {
  Vec t(n);
  for (Eigen::Index j = 0; j < n; ++j) t[j] = sample_t(c, rng).value();
  return t;
}

inline Vec sample_sigma(const TrainConfig& c, Eigen::Index n, Rng& rng) {
  Vec s(n);
  for (Eigen::Index j = 0; j < n; ++j) s[j] = sample_sigma(c, rng).value();
  return s;
}

/// Mixture samples as columns.
inline Mat sample_columns(const GaussianMixture& gmm, Eigen::Index n, Rng& rng) {
  return sample(gmm, static_cast<std::size_t>(n), rng).points.transpose();
}

// ---------------------------------------------------------------------------
// Teacher: D0(y, rho) ~ E[x0 | y_rho]

/// Noise levels for regressing a denoiser: log-uniform over the whole range
/// the distillation queries (effective levels down to sigma_min, inflated
/// generator levels up to (1 + gamma) sigma_max).
inline Vec regression_levels(const TrainConfig& c, Eigen::Index n, Rng& rng) {
  const double lo = std::log(c.sigma_min), hi = std::log((1.0 + c.gamma) * c.sigma_max);
  Vec s(n);
  for (Eigen::Index j = 0; j < n; ++j) s[j] = std::exp(lo + (hi - lo) * uniform01(rng));
  return s;
}

struct TeacherReport {
  double mean_error = 0.0;  // average ||D(y, s) - E[x0 | y_s]|| over the s grid
  double threshold = 0.0;
  bool converged = false;
  double final_loss = 0.0;
};

/// Held-out error of a denoiser against the exact posterior mean, averaged
/// over every 50th level of the sigma grid.
inline double denoiser_error(const MLPDenoiser& net, const GaussianMixture& gmm, const TrainConfig& c, Rng& rng,
                             Eigen::Index per_level = 256) {
  const PosteriorMeanOracle oracle(gmm);
  const auto& grid = sigma_grid(c);
  double total = 0.0;
  int levels = 0;
  for (std::size_t i = 0; i < grid.size(); i += 50) {
    const Vec s = Vec::Constant(per_level, grid[i]);
    const Mat x0 = sample_columns(gmm, per_level, rng);
    const Mat y = x0 + grid[i] * normal_matrix(x0.rows(), per_level, rng);
    const Mat diff = net.forward(y, s) - oracle.mean(y, s);
    total += diff.colwise().norm().mean();
    ++levels;
  }
  return total / levels;
}

enum class RegressionTarget { clean_sample, posterior_mean };

/// Fits an unconditioned denoiser. clean_sample is the usual denoising
/// score-matching objective; posterior_mean regresses directly onto the
/// exact E[x0 | y] (used to warm-start networks in analytic-teacher mode).
inline MLPDenoiser fit_denoiser(const TrainConfig& c, const GaussianMixture& gmm, RegressionTarget target, Rng& rng,
                                TeacherReport* report = nullptr) {
  MLPDenoiser net = MLPDenoiser::init(gmm.dim(), c.width, c.depth, false, c.sigma_data, rng);
  net.head.weight.setZero();
  MLPDenoiser grads = zeros_like(net);
  AdamState adam{c.adam_beta1, c.adam_beta2};
  const PosteriorMeanOracle oracle(gmm);
  const Eigen::Index B = c.batch_size;
  const long steps = c.teacher_images / B;
  double running = 0.0;
  for (long k = 0; k < steps; ++k) {
    const Mat x0 = sample_columns(gmm, B, rng);
    const Vec s = regression_levels(c, B, rng);
    Mat y = x0;
    for (Eigen::Index j = 0; j < B; ++j) y.col(j) += s[j] * normal_matrix(gmm.dim(), 1, rng);
    const Mat goal = target == RegressionTarget::clean_sample ? x0 : oracle.mean(y, s);
    MLPDenoiser::Cache cache;
    const Mat out = net.forward(y, s, nullptr, &cache);
    Mat grad(out.rows(), B);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
      const double w = net.precond.loss_weight(s[j]);
      const Vec r = out.col(j) - goal.col(j);
      loss += w * r.squaredNorm() / B;
      grad.col(j) = 2.0 * w * r / B;
    }
    running = k == 0 ? loss : 0.99 * running + 0.01 * loss;
    grads = zeros_like(net);
    net.backward(cache, grad, grads);
    // cosine decay keeps the final iterates quiet
    const double lr = c.teacher_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * k / std::max<long>(steps, 1)));
    adam_step(net, grads, adam, lr);
  }
  require_finite(net, "teacher");
  if (report) {
    report->mean_error = denoiser_error(net, gmm, c, rng);
    report->threshold = c.teacher_threshold;
    report->converged = report->mean_error < c.teacher_threshold;
    report->final_loss = running;
  }
  return net;
}

/// Learned-teacher pretraining by denoising regression on clean samples.
inline MLPDenoiser pretrain_teacher(const TrainConfig& c, const GaussianMixture& gmm, Rng& rng,
                                   TeacherReport* report = nullptr) {
  if (c.teacher != TeacherMode::learned) throw std::invalid_argument("pretrain_teacher requires teacher mode 'learned'");
  return fit_denoiser(c, gmm, RegressionTarget::clean_sample, rng, report);
}

// ---------------------------------------------------------------------------
// State

struct LossRow {
  long step = 0;
  long images_seen = 0;
  double loss_gen = 0.0;
  double loss_score = 0.0;
  double loss_disc = 0.0;
  double w_lambda_mean = 0.0;
  double swd_1step = std::numeric_limits<double>::quiet_NaN();
};

struct TrainState {
  MLPDenoiser generator;
  EmaState<MLPDenoiser> generator_ema;
  MLPDenoiser score;
  Discriminator discriminator;
  UncertaintyNet weighting;
  std::optional<MLPDenoiser> teacher;  // set in learned mode
  AdamState adam_generator, adam_score, adam_discriminator, adam_weighting;
  long step = 0;
  long images_seen = 0;
  std::deque<LossRow> telemetry;
};

/// Fresh state: every network starts from the same base denoiser (teacher
/// in learned mode, an oracle-regressed warm start in analytic mode).
inline TrainState init_state(const TrainConfig& c, const GaussianMixture& gmm,
                             const MLPDenoiser* pretrained = nullptr) {
  validate(c);
  Rng rng = make_rng(c.seed, 0x1417);
  TrainState s;
  MLPDenoiser base;
  if (c.teacher == TeacherMode::learned) {
    if (pretrained && pretrained->conditioned()) throw std::invalid_argument("teacher must be unconditioned");
    base = pretrained ? *pretrained : pretrain_teacher(c, gmm, rng);
    s.teacher = base;
  } else {
    base = fit_denoiser(c, gmm, RegressionTarget::posterior_mean, rng);
  }
  s.generator = MLPDenoiser::with_branch_from(base);
  s.generator_ema = {s.generator, c.ema_rate};
  s.score = MLPDenoiser::with_branch_from(base);
  s.discriminator = Discriminator::from_teacher(base, rng);
  s.weighting = UncertaintyNet::init(rng);
  for (AdamState* a : {&s.adam_generator, &s.adam_score, &s.adam_discriminator, &s.adam_weighting}) {
    a->beta1 = c.adam_beta1;
    a->beta2 = c.adam_beta2;
  }
  return s;
}

/// D0 evaluations for the data score.
class DataScoreTeacher {
 public:
  DataScoreTeacher(const GaussianMixture& gmm, const MLPDenoiser* learned) : oracle_(gmm), learned_(learned) {}
  Mat operator()(const Mat& y, const Vec& sigma) const {
    return learned_ ? learned_->forward(y, sigma) : oracle_.mean(y, sigma);
  }

 private:
  PosteriorMeanOracle oracle_;
  const MLPDenoiser* learned_;
};

struct Batch {
  Mat x0;
  Vec sigma;
  Mat y;
};

inline Batch draw_batch(const TrainConfig& c, const GaussianMixture& gmm, Rng& rng) {
  Batch b;
  b.x0 = sample_columns(gmm, c.batch_size, rng);
  b.sigma = sample_sigma(c, c.batch_size, rng);
  b.y = b.x0;
  const Mat eps = normal_matrix(b.x0.rows(), b.x0.cols(), rng);
  for (Eigen::Index j = 0; j < b.y.cols(); ++j) b.y.col(j) += b.sigma[j] * eps.col(j);
  return b;
}

inline Mat add_noise(const Mat& x, const Vec& t, Rng& rng) {
  Mat out = x;
  const Mat eps = normal_matrix(x.rows(), x.cols(), rng);
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) += t[j] * eps.col(j);
  return out;
}

// ---------------------------------------------------------------------------
// Steps

/// Regresses D_phi(x_t, t, {y, sigma}) onto fresh generator samples; one Adam
/// update on phi. Returns the mean weighted loss.
inline double score_model_step(TrainState& s, const TrainConfig& c, const Batch& b, Rng& rng, double lr) {
  const Eigen::Index B = b.y.cols();
  const Vec t = sample_t(c, B, rng);
  const Mat z = normal_matrix(b.y.rows(), B, rng);
  const Mat x_gen = generator_forward(s.generator, b.y, b.sigma, z, c.gamma);
  const Mat x_t = add_noise(x_gen, t, rng);
  const Conditioning cond{b.y, b.sigma};
  MLPDenoiser::Cache cache;
  const Mat out = s.score.forward(x_t, t, &cond, &cache);
  Mat grad(out.rows(), B);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const double w = s.score.precond.loss_weight(t[j]);
    const Vec r = out.col(j) - x_gen.col(j);
    loss += w * r.squaredNorm() / B;
    grad.col(j) = 2.0 * w * r / B;
  }
  if (!std::isfinite(loss)) throw NonFiniteError("score model loss is not finite at step " + std::to_string(s.step));
  MLPDenoiser grads = zeros_like(s.score);
  s.score.backward(cache, grad, grads);
  adam_step(s.score, grads, s.adam_score, lr);
  s.score.project();
  return loss;
}

/// Maximizes log C on real pairs (x0 + t eps, y) and log(1 - C) on fake
/// pairs (G(y, sigma, z) + t eps, y); one Adam update on psi.
inline double discriminator_step(TrainState& s, const TrainConfig& c, const Batch& b, Rng& rng, double lr) {
  const Eigen::Index B = b.y.cols();
  const Eigen::Index D = b.y.rows();
  const Vec t_real = sample_t(c, B, rng);
  const Mat x_real = add_noise(b.x0, t_real, rng);
  const Mat z = normal_matrix(D, B, rng);
  const Mat x_gen = generator_forward(s.generator, b.y, b.sigma, z, c.gamma);
  const Vec t_fake = sample_t(c, B, rng);
  const Mat x_fake = add_noise(x_gen, t_fake, rng);

  Mat x_t(D, 2 * B), y(D, 2 * B);
  Vec t(2 * B), sigma(2 * B);
  x_t << x_real, x_fake;
  y << b.y, b.y;
  t << t_real, t_fake;
  sigma << b.sigma, b.sigma;
  Discriminator::Cache cache;
  const Mat logit = s.discriminator.logits(x_t, t, y, sigma, &cache);
  Mat grad(1, 2 * B);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const double lr_ = logit(0, j), lf = logit(0, B + j);
    loss += (softplus_neg(lr_) + softplus_neg(-lf)) / B;
    grad(0, j) = (sigmoid(lr_) - 1.0) / B;
    grad(0, B + j) = sigmoid(lf) / B;
  }
  if (!std::isfinite(loss)) throw NonFiniteError("discriminator loss is not finite at step " + std::to_string(s.step));
  Discriminator grads = zeros_like(s.discriminator);
  s.discriminator.backward(cache, grad, grads);
  adam_step(s.discriminator, grads, s.adam_discriminator, lr);
  return loss;
}

/// Per-sample pieces of the generator objective; exposed for verification.
struct GeneratorLossTerms {
  Mat grad_x;       // dL/dx_theta, D x B (already divided by B)
  Vec grad_w;       // dL/dw_lambda(t), B
  double loss = 0.0;
  double adversarial = 0.0;
};

/// L = e^-w ||x - stopgrad(s0 - s_phi + x)||^2 + D w [+ D * (-log C)], mean
/// over the batch. The stopgrad target reduces the x-gradient to
/// 2 e^-w (s_phi - s0).
inline GeneratorLossTerms distillation_terms(const Mat& s0, const Mat& s_phi, const Mat& w) {
  const Eigen::Index B = s0.cols();
  const double D = static_cast<double>(s0.rows());
  GeneratorLossTerms out{Mat(s0.rows(), B), Vec(B)};
  for (Eigen::Index j = 0; j < B; ++j) {
    const Vec diff = s_phi.col(j) - s0.col(j);
    const double scale = std::exp(-w(0, j));
    const double sq = diff.squaredNorm();
    out.loss += (scale * sq + D * w(0, j)) / B;
    out.grad_x.col(j) = 2.0 * scale * diff / B;
    out.grad_w[j] = (-scale * sq + D) / B;
  }
  return out;
}

struct GeneratorStepResult {
  double loss = 0.0;
  double w_mean = 0.0;
  bool adversarial = false;
};

inline GeneratorStepResult generator_step(TrainState& s, const TrainConfig& c, const Batch& b,
                                          const DataScoreTeacher& teacher, Rng& rng, double lr) {
  const Eigen::Index B = b.y.cols();
  const Eigen::Index D = b.y.rows();
  const Vec t = sample_t(c, B, rng);
  const Mat z = normal_matrix(D, B, rng);
  MLPDenoiser::Cache gen_cache;
  const Mat x_gen = generator_forward(s.generator, b.y, b.sigma, z, c.gamma, &gen_cache);
  const Mat x_t = add_noise(x_gen, t, rng);

  Mat y_eff(D, B);
  Vec sigma_eff(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const NoisyObservation eff = effective_condition({b.y.col(j), NoiseLevel(b.sigma[j])}, x_t.col(j), NoiseLevel(t[j]));
    y_eff.col(j) = eff.y;
    sigma_eff[j] = eff.sigma.value();
  }
  const Mat s0 = teacher(y_eff, sigma_eff);
  const Conditioning cond{b.y, b.sigma};
  const Mat s_phi = s.score.forward(x_t, t, &cond);
  UncertaintyNet::Cache w_cache;
  const Mat w = s.weighting.forward(t, &w_cache);

  GeneratorLossTerms terms = distillation_terms(s0, s_phi, w);
  GeneratorStepResult result;
  result.adversarial = s.images_seen >= c.adv_warmup_images;
  if (result.adversarial) {
    Discriminator::Cache d_cache;
    const Mat logit = s.discriminator.logits(x_t, t, b.y, b.sigma, &d_cache);
    Mat grad_logit(1, B);
    for (Eigen::Index j = 0; j < B; ++j) {
      terms.loss += D * softplus_neg(logit(0, j)) / B;
      grad_logit(0, j) = D * (sigmoid(logit(0, j)) - 1.0) / B;
    }
    Discriminator unused = zeros_like(s.discriminator);
    Mat grad_xt;
    s.discriminator.backward(d_cache, grad_logit, unused, &grad_xt);
    terms.grad_x += grad_xt;  // x_t = x_theta + t eps
  }
  if (!std::isfinite(terms.loss))
    throw NonFiniteError("generator loss is not finite at step " + std::to_string(s.step));

  MLPDenoiser g_grads = zeros_like(s.generator);
  s.generator.backward(gen_cache, terms.grad_x, g_grads);
  UncertaintyNet w_grads = zeros_like(s.weighting);
  s.weighting.backward(w_cache, terms.grad_w.transpose(), w_grads);
  adam_step(s.generator, g_grads, s.adam_generator, lr * c.lr_scale_gen);
  s.generator.project();
  adam_step(s.weighting, w_grads, s.adam_weighting, lr);
  s.generator_ema.rate = c.ema_rate;
  s.generator_ema.update(s.generator);
  result.loss = terms.loss;
  result.w_mean = w.mean();
  return result;
}

/// 1-step unconditional sliced Wasserstein of the EMA generator against exact samples.
inline double one_step_swd(const MLPDenoiser& gen, const GaussianMixture& gmm, const TrainConfig& c,
                           std::uint64_t seed, int steps = 1) {
  const LearnedDenoiser den(gen, c.gamma);
  const SampleBatch fake = unconditional_sample(den, few_step_config(steps), gmm.dim(), c.metric_samples, seed);
  Rng rng = make_rng(seed, 0xe7a1);
  const SampleBatch real = sample(gmm, static_cast<std::size_t>(c.metric_samples), rng);
  return sliced_wasserstein(fake, real, c.metric_projections, rng).value;
}

/// One full optimizer step; randomness is keyed by (seed, step) so a
/// resumed run replays the same stream.
inline LossRow train_step(TrainState& s, const TrainConfig& c, const GaussianMixture& gmm,
                          const DataScoreTeacher& teacher) {
  Rng rng = make_rng(c.seed, 0x7a11, s.step);
  const Batch b = draw_batch(c, gmm, rng);
  const double lr = learning_rate(c, s.images_seen);
  LossRow row;
  row.loss_score = score_model_step(s, c, b, rng, lr);
  for (int k = 1; k < c.score_updates; ++k) score_model_step(s, c, draw_batch(c, gmm, rng), rng, lr);
  row.loss_disc = discriminator_step(s, c, b, rng, lr * c.lr_scale_disc);
  const GeneratorStepResult g = generator_step(s, c, b, teacher, rng, lr);
  row.loss_gen = g.loss;
  row.w_lambda_mean = g.w_mean;
  s.images_seen += c.batch_size;
  ++s.step;
  row.step = s.step;
  row.images_seen = s.images_seen;
  require_finite(s.generator, "generator");
  require_finite(s.score, "score model");
  require_finite(s.discriminator, "discriminator");
  require_finite(s.weighting, "uncertainty net");
  s.telemetry.push_back(row);
  if (s.telemetry.size() > kTelemetryCapacity) s.telemetry.pop_front();
  return row;
}

struct TrainHooks {
  std::function<void(const LossRow&)> on_metrics;
  std::function<void(const TrainState&)> on_checkpoint;
  long checkpoint_every = 0;  // optimizer steps; 0 disables
  std::function<void(const TrainState&, const std::exception&)> on_crash;
};

/// Mean of the telemetry rows logged after step `after`.
inline LossRow average_since(const TrainState& s, long after) {
  LossRow out{s.step, s.images_seen};
  int n = 0;
  for (const LossRow& r : s.telemetry) {
    if (r.step <= after) continue;
    out.loss_gen += r.loss_gen;
    out.loss_score += r.loss_score;
    out.loss_disc += r.loss_disc;
    out.w_lambda_mean += r.w_lambda_mean;
    ++n;
  }
  if (n > 0) {
    out.loss_gen /= n;
    out.loss_score /= n;
    out.loss_disc /= n;
    out.w_lambda_mean /= n;
  }
  return out;
}

/// Runs optimizer steps until total_images is exhausted. Metric rows average
/// the step losses since the previous row and carry the 1-step SWD of the
/// EMA generator. Resuming from a saved state replays the same rows.
inline std::vector<LossRow> train(TrainState& s, const TrainConfig& c, const GaussianMixture& gmm,
                                  const TrainHooks& hooks = {}) {
  validate(c);
  const DataScoreTeacher teacher(gmm, s.teacher ? &*s.teacher : nullptr);
  std::vector<LossRow> log;
  std::optional<TrainState> last_good;
  if (hooks.on_crash) last_good = s;
  while (s.images_seen + c.batch_size <= c.total_images) {
    try {
      train_step(s, c, gmm, teacher);
    } catch (const std::exception& e) {
      if (hooks.on_crash) hooks.on_crash(*last_good, e);
      throw;
    }
    if (c.metric_every > 0 && s.step % c.metric_every == 0) {
      LossRow out = average_since(s, s.step - c.metric_every);
      out.swd_1step = one_step_swd(s.generator_ema.shadow, gmm, c, derive_seed(c.seed, 0x5fd, s.step));
      log.push_back(out);
      if (hooks.on_metrics) hooks.on_metrics(out);
    }
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && s.step % hooks.checkpoint_every == 0)
      hooks.on_checkpoint(s);
    if (hooks.on_crash) last_good = s;
  }
  return log;
}

}  // namespace ncvsd
