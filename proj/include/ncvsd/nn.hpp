// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small trainable networks with hand-written reverse passes: the
// preconditioned MLP denoiser (optionally with a conditioning branch merged
// through magnitude-preserving sums), the two-encoder discriminator, the
// uncertainty-weighting net, plus Adam and parameter EMA.
//
// Batches are column-major: a D x B matrix holds B samples.

#pragma once

#include "ncvsd/core.hpp"

#include <array>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace ncvsd {

// ---------------------------------------------------------------------------
// Elementwise pieces

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Mat silu(const Mat& x) {
  return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

inline Mat silu_grad(const Mat& x) {
  return x.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

/// ((1-w) a + w b) / sqrt((1-w)^2 + w^2).
template <class A, class B>
auto mp_sum(const A& a, const B& b, double w) {
  const double norm = std::sqrt((1.0 - w) * (1.0 - w) + w * w);
  return (((1.0 - w) / norm) * a + (w / norm) * b).eval();
}

inline Vec mp_sum(std::span<const double> a, std::span<const double> b, double w) {
  if (a.size() != b.size()) throw std::invalid_argument("mp_sum: length mismatch");
  const Eigen::Map<const Vec> va(a.data(), static_cast<Eigen::Index>(a.size()));
  const Eigen::Map<const Vec> vb(b.data(), static_cast<Eigen::Index>(b.size()));
  return mp_sum(va, vb, w);
}

// ---------------------------------------------------------------------------
// EDM preconditioning

struct Preconditioning {
  double sigma_data = 0.5;

  double c_skip(double s) const { return sigma_data * sigma_data / (s * s + sigma_data * sigma_data); }
  double c_out(double s) const { return s * sigma_data / std::sqrt(s * s + sigma_data * sigma_data); }
  double c_in(double s) const { return 1.0 / std::sqrt(s * s + sigma_data * sigma_data); }
  double c_noise(double s) const { return 0.25 * std::log(s); }
  /// EDM loss weight, makes the regression target unit-variance in F space.
  double loss_weight(double s) const { return 1.0 / (c_out(s) * c_out(s)); }
};

inline constexpr int kNoiseFrequencies = 8;
inline constexpr int kNoiseFeatures = 1 + 2 * kNoiseFrequencies;

/// Fixed Fourier features of c_noise, one column per sample.
inline Mat noise_features(const Vec& c_noise) {
  Mat out(kNoiseFeatures, c_noise.size());
  for (Eigen::Index j = 0; j < c_noise.size(); ++j) {
    const double c = c_noise[j];
    out(0, j) = c;
    for (int f = 0; f < kNoiseFrequencies; ++f) {
      const double freq = 0.5 * std::numbers::pi * (f + 1);
      out(1 + 2 * f, j) = std::sin(freq * c);
      out(2 + 2 * f, j) = std::cos(freq * c);
    }
  }
  return out;
}

/// [c_in(s) * x ; features(c_noise(s))] per column.
inline Mat embed_input(const Preconditioning& pre, const Mat& x, const Vec& sigma) {
  Vec c_noise(sigma.size());
  Mat out(x.rows() + kNoiseFeatures, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    out.col(j).head(x.rows()) = pre.c_in(sigma[j]) * x.col(j);
    c_noise[j] = pre.c_noise(sigma[j]);
  }
  out.bottomRows(kNoiseFeatures) = noise_features(c_noise);
  return out;
}

// ---------------------------------------------------------------------------
// Layers

struct Linear {
  Mat weight;  // out x in
  Vec bias;

  static Linear init(Eigen::Index in, Eigen::Index out, Rng& rng, double gain = 1.0) {
    Linear l{normal_matrix(out, in, rng) * (gain / std::sqrt(static_cast<double>(in))), Vec::Zero(out)};
    return l;
  }
  Mat apply(const Mat& x) const { return (weight * x).colwise() + bias; }

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + ".weight", self.weight);
    f(prefix + ".bias", self.bias);
  }
};

/// Stack of Linear + SiLU layers.
struct Encoder {
  std::vector<Linear> layers;

  static Encoder init(Eigen::Index in, Eigen::Index width, int depth, Rng& rng) {
    Encoder e;
    for (int l = 0; l < depth; ++l) e.layers.push_back(Linear::init(l == 0 ? in : width, width, rng));
    return e;
  }
  std::size_t depth() const { return layers.size(); }

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < self.layers.size(); ++l)
      Linear::visit(self.layers[l], prefix + "." + std::to_string(l), f);
  }
};

// ---------------------------------------------------------------------------
// Generic parameter plumbing. Every network type provides a static
// visit(self, f) that calls f(name, matrix_or_vector) for each tensor.

struct ParamView {
  std::string name;
  std::span<double> data;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

struct ConstParamView {
  std::string name;
  std::span<const double> data;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

template <class Net>
std::vector<ParamView> param_views(Net& net) {
  std::vector<ParamView> out;
  Net::visit(net, [&](const std::string& name, auto& m) {
    out.push_back({name, std::span<double>(m.data(), static_cast<std::size_t>(m.size())), m.rows(), m.cols()});
  });
  return out;
}

template <class Net>
std::vector<ConstParamView> param_views(const Net& net) {
  std::vector<ConstParamView> out;
  Net::visit(net, [&](const std::string& name, const auto& m) {
    out.push_back(
        {name, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())), m.rows(), m.cols()});
  });
  return out;
}

template <class Net>
Net zeros_like(const Net& net) {
  Net out = net;
  Net::visit(out, [](const std::string&, auto& m) { m.setZero(); });
  return out;
}

template <class Net>
std::size_t parameter_count(const Net& net) {
  std::size_t n = 0;
  for (const auto& p : param_views(net)) n += p.data.size();
  return n;
}

/// Throws NonFiniteError naming the first tensor holding a NaN/Inf.
template <class Net>
void require_finite(const Net& net, const std::string& what) {
  for (const auto& p : param_views(net))
    for (double v : p.data)
      if (!std::isfinite(v)) throw NonFiniteError(what + ": non-finite value in " + p.name);
}

// ---------------------------------------------------------------------------
// Preconditioned denoiser D(x, sigma, {y, s})

struct Conditioning {
  Mat y;
  Vec sigma;
};

struct MLPDenoiser {
  Eigen::Index dim = 0;
  Preconditioning precond;
  Encoder trunk;
  Encoder branch;  // empty when unconditioned
  Vec merge;       // one mp_sum weight per hidden layer, kept in [0, 1]
  Linear head;

  static MLPDenoiser init(Eigen::Index dim, Eigen::Index width, int depth, bool conditioned,
                          double sigma_data, Rng& rng) {
    MLPDenoiser net;
    net.dim = dim;
    net.precond.sigma_data = sigma_data;
    net.trunk = Encoder::init(dim + kNoiseFeatures, width, depth, rng);
    if (conditioned) {
      net.branch = Encoder::init(dim + kNoiseFeatures, width, depth, rng);
      net.merge = Vec::Zero(depth);
    }
    net.head = Linear::init(width, dim, rng);
    return net;
  }

  /// Copies an unconditioned net into a conditioned one: the branch is a
  /// copy of the trunk, merges start at 0 so outputs are unchanged.
  static MLPDenoiser with_branch_from(const MLPDenoiser& base) {
    MLPDenoiser net = base;
    net.branch = base.trunk;
    net.merge = Vec::Zero(static_cast<Eigen::Index>(base.trunk.depth()));
    return net;
  }

  bool conditioned() const { return !branch.layers.empty(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    Encoder::visit(self.trunk, "trunk", f);
    if (!self.branch.layers.empty()) {
      Encoder::visit(self.branch, "branch", f);
      f(std::string("merge"), self.merge);
    }
    Linear::visit(self.head, "head", f);
  }

  /// Keeps merge weights inside [0, 1] after an optimizer update.
  void project() {
    if (conditioned()) merge = merge.cwiseMax(0.0).cwiseMin(1.0);
  }

  struct Cache {
    Mat x;
    Mat input;
    std::vector<Mat> pre, act, hidden;
    Mat branch_input;
    std::vector<Mat> bpre, bact;
    Vec c_skip, c_out, c_in;
  };

  Mat forward(const Mat& x, const Vec& sigma, const Conditioning* cond = nullptr, Cache* cache = nullptr) const {
    if (x.rows() != dim || sigma.size() != x.cols())
      throw std::invalid_argument("denoiser input shape mismatch");
    if (conditioned() && cond == nullptr) throw std::invalid_argument("conditioned denoiser needs {y, sigma}");
    const Eigen::Index batch = x.cols();
    Cache local;
    Cache& c = cache ? *cache : local;
    c.x = x;
    c.c_skip.resize(batch);
    c.c_out.resize(batch);
    c.c_in.resize(batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
      c.c_skip[j] = precond.c_skip(sigma[j]);
      c.c_out[j] = precond.c_out(sigma[j]);
      c.c_in[j] = precond.c_in(sigma[j]);
    }
    c.input = embed_input(precond, x, sigma);
    const bool use_branch = conditioned();
    if (use_branch) c.branch_input = embed_input(precond, cond->y, cond->sigma);
    const std::size_t depth = trunk.depth();
    c.pre.resize(depth);
    c.act.resize(depth);
    c.hidden.resize(depth);
    c.bpre.resize(use_branch ? depth : 0);
    c.bact.resize(use_branch ? depth : 0);
    for (std::size_t l = 0; l < depth; ++l) {
      const Mat& in = l == 0 ? c.input : c.hidden[l - 1];
      c.pre[l] = trunk.layers[l].apply(in);
      c.act[l] = silu(c.pre[l]);
      if (use_branch) {
        const Mat& bin = l == 0 ? c.branch_input : c.bact[l - 1];
        c.bpre[l] = branch.layers[l].apply(bin);
        c.bact[l] = silu(c.bpre[l]);
        c.hidden[l] = mp_sum(c.act[l], c.bact[l], merge[static_cast<Eigen::Index>(l)]);
      } else {
        c.hidden[l] = c.act[l];
      }
    }
    const Mat f = head.apply(c.hidden.back());
    Mat out(dim, batch);
    for (Eigen::Index j = 0; j < batch; ++j) out.col(j) = c.c_skip[j] * x.col(j) + c.c_out[j] * f.col(j);
    return out;
  }

  /// Accumulates parameter gradients into grads; optionally returns dL/dx.
  void backward(const Cache& c, const Mat& grad_out, MLPDenoiser& grads, Mat* grad_x = nullptr) const {
    const Eigen::Index batch = grad_out.cols();
    Mat grad_f(dim, batch);
    for (Eigen::Index j = 0; j < batch; ++j) grad_f.col(j) = c.c_out[j] * grad_out.col(j);
    grads.head.weight.noalias() += grad_f * c.hidden.back().transpose();
    grads.head.bias += grad_f.rowwise().sum();
    Mat grad_h = head.weight.transpose() * grad_f;
    Mat grad_b;  // flowing down the branch
    const bool use_branch = conditioned();
    for (std::size_t l = trunk.depth(); l-- > 0;) {
      Mat grad_a;
      if (use_branch) {
        const double w = merge[static_cast<Eigen::Index>(l)];
        const double norm = std::sqrt((1.0 - w) * (1.0 - w) + w * w);
        const double dnorm = (2.0 * w - 1.0) / norm;
        const Mat dout_dw = (c.bact[l] - c.act[l]) / norm - c.hidden[l] * (dnorm / norm);
        grads.merge[static_cast<Eigen::Index>(l)] += grad_h.cwiseProduct(dout_dw).sum();
        grad_a = grad_h * ((1.0 - w) / norm);
        Mat grad_ba = grad_h * (w / norm);
        if (grad_b.size() != 0) grad_ba += grad_b;
        const Mat grad_bpre = grad_ba.cwiseProduct(silu_grad(c.bpre[l]));
        const Mat& bin = l == 0 ? c.branch_input : c.bact[l - 1];
        grads.branch.layers[l].weight.noalias() += grad_bpre * bin.transpose();
        grads.branch.layers[l].bias += grad_bpre.rowwise().sum();
        if (l > 0) grad_b = branch.layers[l].weight.transpose() * grad_bpre;
      } else {
        grad_a = std::move(grad_h);
      }
      const Mat grad_pre = grad_a.cwiseProduct(silu_grad(c.pre[l]));
      const Mat& in = l == 0 ? c.input : c.hidden[l - 1];
      grads.trunk.layers[l].weight.noalias() += grad_pre * in.transpose();
      grads.trunk.layers[l].bias += grad_pre.rowwise().sum();
      if (l > 0 || grad_x != nullptr) grad_h = trunk.layers[l].weight.transpose() * grad_pre;
    }
    if (grad_x != nullptr) {
      grad_x->resize(dim, batch);
      for (Eigen::Index j = 0; j < batch; ++j)
        grad_x->col(j) = c.c_skip[j] * grad_out.col(j) + c.c_in[j] * grad_h.col(j).head(dim);
    }
  }
};

// ---------------------------------------------------------------------------
// Generator G(y, sigma, z) = D(y + sqrt(s_hat^2 - sigma^2) z, s_hat, {y, sigma}),
// s_hat = (1 + gamma) sigma.

struct GeneratorInput {
  Mat y_hat;
  Vec sigma_hat;
  Conditioning cond;
};

inline GeneratorInput generator_input(const Mat& y, const Vec& sigma, const Mat& z, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("stochasticity strength gamma must be > 0");
  GeneratorInput in{y, sigma * (1.0 + gamma), {y, sigma}};
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const double s = sigma[j];
    const double sh = in.sigma_hat[j];
    in.y_hat.col(j) += std::sqrt(sh * sh - s * s) * z.col(j);
  }
  return in;
}

inline Mat generator_forward(const MLPDenoiser& net, const Mat& y, const Vec& sigma, const Mat& z, double gamma,
                             MLPDenoiser::Cache* cache = nullptr) {
  const GeneratorInput in = generator_input(y, sigma, z, gamma);
  return net.forward(in.y_hat, in.sigma_hat, net.conditioned() ? &in.cond : nullptr, cache);
}

// ---------------------------------------------------------------------------
// Discriminator C(x_t, t, y, sigma) in (0, 1)

inline constexpr double kLogitClamp = 15.0;

struct Discriminator {
  Eigen::Index dim = 0;
  Preconditioning precond;
  Encoder sample_encoder;     // (x_t, t)
  Encoder condition_encoder;  // (y_sigma, sigma)
  Linear head;                // 2H -> 1

  static Discriminator init(Eigen::Index dim, Eigen::Index width, int depth, double sigma_data, Rng& rng) {
    Discriminator d;
    d.dim = dim;
    d.precond.sigma_data = sigma_data;
    d.sample_encoder = Encoder::init(dim + kNoiseFeatures, width, depth, rng);
    d.condition_encoder = Encoder::init(dim + kNoiseFeatures, width, depth, rng);
    d.head = Linear::init(2 * width, 1, rng);
    return d;
  }

  /// Both encoders start as copies of a denoiser trunk.
  static Discriminator from_teacher(const MLPDenoiser& teacher, Rng& rng) {
    Discriminator d;
    d.dim = teacher.dim;
    d.precond = teacher.precond;
    d.sample_encoder = teacher.trunk;
    d.condition_encoder = teacher.trunk;
    const Eigen::Index width = teacher.trunk.layers.back().weight.rows();
    d.head = Linear::init(2 * width, 1, rng);
    return d;
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    Encoder::visit(self.sample_encoder, "sample_encoder", f);
    Encoder::visit(self.condition_encoder, "condition_encoder", f);
    Linear::visit(self.head, "head", f);
  }

  struct Cache {
    Mat sample_input, cond_input;
    std::vector<Mat> spre, sact, cpre, cact;
    Vec c_in;
    Eigen::Array<bool, 1, Eigen::Dynamic> clamped;
  };

  /// Clamped logits, 1 x B.
  Mat logits(const Mat& x_t, const Vec& t, const Mat& y, const Vec& sigma, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c.c_in.resize(t.size());
    for (Eigen::Index j = 0; j < t.size(); ++j) c.c_in[j] = precond.c_in(t[j]);
    c.sample_input = embed_input(precond, x_t, t);
    c.cond_input = embed_input(precond, y, sigma);
    const auto run = [](const Encoder& enc, const Mat& in, std::vector<Mat>& pre, std::vector<Mat>& act) {
      pre.resize(enc.depth());
      act.resize(enc.depth());
      for (std::size_t l = 0; l < enc.depth(); ++l) {
        pre[l] = enc.layers[l].apply(l == 0 ? in : act[l - 1]);
        act[l] = silu(pre[l]);
      }
    };
    run(sample_encoder, c.sample_input, c.spre, c.sact);
    run(condition_encoder, c.cond_input, c.cpre, c.cact);
    const Eigen::Index width = c.sact.back().rows();
    Mat raw = head.weight.leftCols(width) * c.sact.back() + head.weight.rightCols(width) * c.cact.back();
    raw.array() += head.bias[0];
    c.clamped = raw.array().abs() > kLogitClamp;
    return raw.cwiseMax(-kLogitClamp).cwiseMin(kLogitClamp);
  }

  Mat probability(const Mat& x_t, const Vec& t, const Mat& y, const Vec& sigma) const {
    return logits(x_t, t, y, sigma).unaryExpr([](double v) { return sigmoid(v); });
  }

  /// grad_logit: 1 x B upstream gradient w.r.t. the clamped logits.
  void backward(const Cache& c, const Mat& grad_logit, Discriminator& grads, Mat* grad_x = nullptr) const {
    Mat g = grad_logit;
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      if (c.clamped[j]) g(0, j) = 0.0;
    const Eigen::Index width = c.sact.back().rows();
    grads.head.weight.leftCols(width) += g * c.sact.back().transpose();
    grads.head.weight.rightCols(width) += g * c.cact.back().transpose();
    grads.head.bias[0] += g.sum();
    const auto back = [](const Encoder& enc, Encoder& genc, const Mat& in, const std::vector<Mat>& pre,
                         const std::vector<Mat>& act, Mat grad_h, bool need_input) {
      for (std::size_t l = enc.depth(); l-- > 0;) {
        const Mat grad_pre = grad_h.cwiseProduct(silu_grad(pre[l]));
        genc.layers[l].weight.noalias() += grad_pre * (l == 0 ? in : act[l - 1]).transpose();
        genc.layers[l].bias += grad_pre.rowwise().sum();
        if (l > 0 || need_input) grad_h = enc.layers[l].weight.transpose() * grad_pre;
      }
      return grad_h;
    };
    const Mat grad_in = back(sample_encoder, grads.sample_encoder, c.sample_input, c.spre, c.sact,
                             head.weight.leftCols(width).transpose() * g, grad_x != nullptr);
    back(condition_encoder, grads.condition_encoder, c.cond_input, c.cpre, c.cact,
         head.weight.rightCols(width).transpose() * g, false);
    if (grad_x != nullptr) {
      grad_x->resize(dim, g.cols());
      for (Eigen::Index j = 0; j < g.cols(); ++j) grad_x->col(j) = c.c_in[j] * grad_in.col(j).head(dim);
    }
  }
};

/// -log sigmoid(l), stable for large |l|.
inline double softplus_neg(double l) { return l > 0 ? std::log1p(std::exp(-l)) : -l + std::log1p(std::exp(l)); }

// ---------------------------------------------------------------------------
// Uncertainty weighting w(t): MLP on log t

struct UncertaintyNet {
  Linear hidden;
  Linear out;

  static UncertaintyNet init(Rng& rng, Eigen::Index width = 64) {
    UncertaintyNet u{Linear::init(1, width, rng), Linear::init(width, 1, rng)};
    u.out.weight.setZero();
    return u;
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    Linear::visit(self.hidden, "hidden", f);
    Linear::visit(self.out, "out", f);
  }

  struct Cache {
    Mat input, pre, act;
  };

  /// 1 x B.
  Mat forward(const Vec& t, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = t.array().log().matrix().transpose();
    c.pre = hidden.apply(c.input);
    c.act = silu(c.pre);
    return out.apply(c.act);
  }

  void backward(const Cache& c, const Mat& grad_out, UncertaintyNet& grads) const {
    grads.out.weight += grad_out * c.act.transpose();
    grads.out.bias[0] += grad_out.sum();
    const Mat grad_pre = (out.weight.transpose() * grad_out).cwiseProduct(silu_grad(c.pre));
    grads.hidden.weight += grad_pre * c.input.transpose();
    grads.hidden.bias += grad_pre.rowwise().sum();
  }
};

// ---------------------------------------------------------------------------
// Optimizer and EMA

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;
};

/// One Adam update with bias correction. params and grads must list the same
/// tensors in the same order.
inline void adam_step(const std::vector<ParamView>& params, const std::vector<ConstParamView>& grads,
                      AdamState& state, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: param/grad count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.data.size(), 0.0);
      state.v.emplace_back(p.data.size(), 0.0);
    }
  }
  for (const auto& g : grads)
    for (double v : g.data)
      if (!std::isfinite(v)) throw NonFiniteError("non-finite gradient in " + g.name);
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i].data;
    auto p = params[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

template <class Net>
void adam_step(Net& net, const Net& grads, AdamState& state, double lr) {
  adam_step(param_views(net), param_views(grads), state, lr);
}

/// shadow <- rate * shadow + (1 - rate) * live.
inline void ema_update(const std::vector<ParamView>& shadow, const std::vector<ConstParamView>& live, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("EMA rate must lie in [0, 1]");
  if (shadow.size() != live.size()) throw std::invalid_argument("EMA shape mismatch");
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    if (shadow[i].data.size() != live[i].data.size()) throw std::invalid_argument("EMA shape mismatch");
    for (std::size_t k = 0; k < shadow[i].data.size(); ++k)
      shadow[i].data[k] = rate * shadow[i].data[k] + (1.0 - rate) * live[i].data[k];
  }
}

template <class Net>
struct EmaState {
  Net shadow;
  double rate = 0.999;

  void update(const Net& live) { ema_update(param_views(shadow), param_views(live), rate); }
};

}  // namespace ncvsd
