// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared value types, errors and random-stream plumbing.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace ncvsd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a linear solve is too ill-conditioned to trust.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a training or sampling step produces non-finite values.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kMaxCondition = 1e12;

/// A strictly positive, finite noise standard deviation.
class NoiseLevel {
 public:
  explicit NoiseLevel(double sigma) : sigma_(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw std::invalid_argument("noise level must be positive and finite, got " +
                                  std::to_string(sigma));
    }
  }
  double value() const { return sigma_; }
  double variance() const { return sigma_ * sigma_; }
  double precision() const { return 1.0 / (sigma_ * sigma_); }

  friend bool operator==(const NoiseLevel&, const NoiseLevel&) = default;

 private:
  double sigma_;
};

/// y = x0 + sigma * eps.
struct NoisyObservation {
  Vec y;
  NoiseLevel sigma;
};

// ---------------------------------------------------------------------------
// Random streams
//
// Every random draw flows from one 64-bit seed. Child streams are keyed by
// small integers (step index, chain chunk, element...) and derived with the
// splitmix64 finalizer, so results never depend on thread scheduling.

using Rng = std::mt19937_64;

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed) { return mix64(seed); }

template <class... Keys>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key, Keys... rest) {
  return derive_seed(mix64(seed ^ mix64(key + 0x632be59bd9b4e019ULL)), rest...);
}

template <class... Keys>
Rng make_rng(std::uint64_t seed, Keys... keys) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(keys)...));
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng);
}

/// rows x cols matrix of iid N(0, 1) draws, filled column by column.
inline Mat normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat out(rows, cols);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = n(rng);
  return out;
}

/// n x D sample matrix (one row per sample) with provenance.
struct SampleBatch {
  Mat points;
  std::uint64_t seed = 0;
  std::string label;
  double sigma = std::numeric_limits<double>::infinity();
  int steps = 0;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
};

// ---------------------------------------------------------------------------
// Worker pool cap shared by the chain-parallel routines.

inline unsigned& thread_cap() {
  static unsigned cap = 1;
  return cap;
}

inline void set_thread_cap(unsigned n) { thread_cap() = n == 0 ? 1 : n; }

/// Runs body(i) for i in [0, count) over at most thread_cap() workers.
/// body must only touch state owned by index i.
template <class Body>
void parallel_for(std::size_t count, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(thread_cap(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ncvsd
