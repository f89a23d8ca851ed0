// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// CSV writers for samples, training metrics and PnP trajectories. Numbers
// are printed in shortest round-trip form, so rereading a file recovers
// the exact doubles.

#pragma once

#include "ncvsd/core.hpp"
#include "ncvsd/pnp.hpp"
#include "ncvsd/train.hpp"

#include <charconv>
#include <fstream>
#include <ostream>
#include <string>

namespace ncvsd {

inline std::string exact_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// One row per sample: x0..x{D-1}, seed, steps.
inline void write_samples_csv(std::ostream& out, const SampleBatch& b) {
  for (Eigen::Index d = 0; d < b.dim(); ++d) out << 'x' << d << ',';
  out << "seed,steps\n";
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    for (Eigen::Index d = 0; d < b.dim(); ++d) out << exact_double(b.points(i, d)) << ',';
    out << b.seed << ',' << b.steps << '\n';
  }
}

inline constexpr const char* kMetricsHeader = "step,images_seen,loss_gen,loss_score,loss_disc,w_lambda_mean,swd_1step";

inline void write_metrics_row(std::ostream& out, const LossRow& r) {
  out << r.step << ',' << r.images_seen << ',' << exact_double(r.loss_gen) << ',' << exact_double(r.loss_score) << ','
      << exact_double(r.loss_disc) << ',' << exact_double(r.w_lambda_mean) << ',' << exact_double(r.swd_1step)
      << '\n';
}

/// step, sigma, x0_0.., u_0..
inline void write_trajectory_csv(std::ostream& out, const PnPTrajectory& t) {
  const Eigen::Index dim = t.rows.empty() ? 0 : t.rows.front().x0.size();
  out << "step,sigma";
  for (Eigen::Index d = 0; d < dim; ++d) out << ",x0_" << d;
  for (Eigen::Index d = 0; d < dim; ++d) out << ",u_" << d;
  out << '\n';
  for (const auto& r : t.rows) {
    out << r.step << ',' << exact_double(r.sigma);
    for (Eigen::Index d = 0; d < dim; ++d) out << ',' << exact_double(r.x0[d]);
    for (Eigen::Index d = 0; d < dim; ++d) out << ',' << exact_double(r.u[d]);
    out << '\n';
  }
}

/// Reads a samples CSV back (coordinates only).
inline SampleBatch read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto dim = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') - 1);
  std::vector<double> values;
  SampleBatch b;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (Eigen::Index d = 0; d < dim; ++d) {
      std::getline(ss, cell, ',');
      values.push_back(std::stod(cell));
    }
    std::getline(ss, cell, ',');
    b.seed = std::stoull(cell);
    std::getline(ss, cell, ',');
    b.steps = std::stoi(cell);
    ++rows;
  }
  b.points = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(),
                                                                                                       rows, dim);
  return b;
}

}  // namespace ncvsd
