// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` configuration files. Lines may carry `#` comments;
// every key must be known to the target struct, otherwise parsing fails
// with the full list of offending keys.

#pragma once

#include "ncvsd/pnp.hpp"
#include "ncvsd/train.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncvsd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline void parse_value(const std::string& key, const std::string& text, double& out) {
  if (text == "inf" || text == "+inf") {
    out = std::numeric_limits<double>::infinity();
    return;
  }
  std::size_t used = 0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw ConfigError("'" + key + "': expected a number, got '" + text + "'");
}

template <class Int>
  requires std::is_integral_v<Int>
void parse_value(const std::string& key, const std::string& text, Int& out) {
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("'" + key + "': expected an integer, got '" + text + "'");
}

inline void parse_value(const std::string&, const std::string& text, std::string& out) { out = text; }

inline void parse_value(const std::string& key, const std::string& text, TeacherMode& out) {
  if (text == "analytic") out = TeacherMode::analytic;
  else if (text == "learned") out = TeacherMode::learned;
  else throw ConfigError("'" + key + "': expected analytic or learned, got '" + text + "'");
}

inline void parse_value(const std::string& key, const std::string& text, std::vector<double>& out) {
  out.clear();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    parse_value(key, trim(item), v);
    out.push_back(v);
  }
}

/// Rows separated by ';', entries by ','.
inline void parse_value(const std::string& key, const std::string& text, Mat& out) {
  std::vector<std::vector<double>> rows;
  std::stringstream ss(text);
  std::string row;
  while (std::getline(ss, row, ';')) {
    rows.emplace_back();
    parse_value(key, trim(row), rows.back());
  }
  if (rows.empty()) {
    out.resize(0, 0);
    return;
  }
  for (const auto& r : rows)
    if (r.size() != rows.front().size()) throw ConfigError("'" + key + "': ragged matrix rows");
  out.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
}

inline void parse_value(const std::string& key, const std::string& text, Vec& out) {
  std::vector<double> v;
  parse_value(key, text, v);
  out = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::string format_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, ptr);
}
template <class Int>
  requires std::is_integral_v<Int>
std::string format_value(Int v) {
  return std::to_string(v);
}
inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(TeacherMode m) { return m == TeacherMode::analytic ? "analytic" : "learned"; }
inline std::string format_value(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_value(v[i]);
  return out;
}

inline std::string format_value(const Vec& v) {
  return format_value(std::vector<double>(v.data(), v.data() + v.size()));
}
inline std::string format_value(const Mat& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += i ? ";" : "";
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += (j ? "," : "") + format_value(m(i, j));
  }
  return out;
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>") {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_key_values(in, path);
}

/// Consumes the keys `Config` knows; leftovers are reported by the caller.
template <class Config>
void consume(Config& c, KeyValues& kv) {
  fields(c, [&](const char* name, auto& field) {
    if (auto it = kv.find(name); it != kv.end()) {
      detail::parse_value(name, it->second, field);
      kv.erase(it);
    }
  });
}

inline void reject_unknown(const KeyValues& kv) {
  if (kv.empty()) return;
  std::string msg = "unknown config keys:";
  for (const auto& [k, v] : kv) msg += " " + k;
  throw ConfigError(msg);
}

template <class Config>
Config parse_config(KeyValues kv) {
  Config c;
  consume(c, kv);
  reject_unknown(kv);
  return c;
}

template <class Config>
std::string serialize(const Config& c) {
  std::string out;
  fields(const_cast<Config&>(c), [&](const char* name, auto& field) {
    out += std::string(name) + " = " + detail::format_value(field) + "\n";
  });
  return out;
}

template <class Config>
KeyValues to_key_values(const Config& c) {
  std::istringstream in(serialize(c));
  return parse_key_values(in);
}

// ---------------------------------------------------------------------------
// Field tables

template <class F>
void fields(TrainConfig& c, F&& f) {
  f("p_mean", c.p_mean);
  f("p_std", c.p_std);
  f("sigma_grid_n", c.sigma_grid_n);
  f("sigma_min", c.sigma_min);
  f("sigma_max", c.sigma_max);
  f("rho", c.rho);
  f("batch_size", c.batch_size);
  f("lr_ref", c.lr_ref);
  f("lr_decay_steps", c.lr_decay_steps);
  f("lr_warmup_images", c.lr_warmup_images);
  f("adv_warmup_images", c.adv_warmup_images);
  f("lr_scale_disc", c.lr_scale_disc);
  f("lr_scale_gen", c.lr_scale_gen);
  f("score_updates", c.score_updates);
  f("adam_beta1", c.adam_beta1);
  f("adam_beta2", c.adam_beta2);
  f("gamma", c.gamma);
  f("ema_rate", c.ema_rate);
  f("total_images", c.total_images);
  f("seed", c.seed);
  f("teacher", c.teacher);
  f("width", c.width);
  f("depth", c.depth);
  f("sigma_data", c.sigma_data);
  f("teacher_images", c.teacher_images);
  f("teacher_lr", c.teacher_lr);
  f("teacher_threshold", c.teacher_threshold);
  f("metric_every", c.metric_every);
  f("metric_samples", c.metric_samples);
  f("metric_projections", c.metric_projections);
}

template <class F>
void fields(PnPGDConfig& c, F&& f) {
  f("beta", c.beta);
  f("n", c.n);
  f("sigma_max", c.sigma_max);
  f("sigma_min", c.sigma_min);
  f("rho", c.rho);
  f("ula_steps", c.ula_steps);
  f("c1", c.c1);
  f("c2", c.c2);
  f("sigma_ema", c.sigma_ema);
  f("mu", c.mu);
  f("prior_steps", c.prior_steps);
  f("zeta", c.zeta);
  f("likelihood", c.likelihood);
}

/// Keys a training run reads besides the optimizer settings.
struct DataConfig {
  std::string mixture = "ring8";  // preset name or path to a mixture JSON file
  std::string teacher_checkpoint;  // learned mode: reuse a pretrained teacher
  long checkpoint_every = 1000;    // optimizer steps
};

template <class F>
void fields(DataConfig& c, F&& f) {
  f("mixture", c.mixture);
  f("teacher_checkpoint", c.teacher_checkpoint);
  f("checkpoint_every", c.checkpoint_every);
}

/// Inverse problem: energy description plus the optional known prior.
struct PnPProblem {
  std::string energy = "none";  // none | linear-gaussian | custom-quadratic | registered name
  Mat A;
  Vec y;
  double sigma_y = 0.0;
  Mat H;
  Vec b;
  std::string mixture;  // when set, the report compares against the exact posterior
  long chains = 1;
  int reference_samples = 10000;
};

template <class F>
void fields(PnPProblem& c, F&& f) {
  f("energy", c.energy);
  f("A", c.A);
  f("y", c.y);
  f("sigma_y", c.sigma_y);
  f("H", c.H);
  f("b", c.b);
  f("mixture", c.mixture);
  f("chains", c.chains);
  f("reference_samples", c.reference_samples);
}

/// Builds the energy a problem describes, validating operator shapes.
inline EnergyFunction make_energy(const PnPProblem& p, Eigen::Index dim) {
  if (p.energy == "none") return no_energy(dim);
  if (p.energy == "linear-gaussian") {
    if (p.A.cols() != dim)
      throw ConfigError("operator A has " + std::to_string(p.A.cols()) + " columns, prior dimension is " +
                        std::to_string(dim));
    if (p.A.rows() != p.y.size())
      throw ConfigError("operator A has " + std::to_string(p.A.rows()) + " rows but y has " +
                        std::to_string(p.y.size()) + " entries");
    return linear_gaussian_energy(p.A, p.y);
  }
  if (p.energy == "custom-quadratic") {
    if (p.H.rows() != dim || p.H.cols() != dim || p.b.size() != dim)
      throw ConfigError("custom-quadratic needs H of shape " + std::to_string(dim) + "x" + std::to_string(dim) +
                        " and b of length " + std::to_string(dim));
    return quadratic_energy(p.H, p.b);
  }
  const auto& registry = energy_registry();
  if (const auto it = registry.find(p.energy); it != registry.end()) {
    EnergyFunction e = it->second({p.A, p.y, p.H, p.b});
    if (e.dim != dim) throw ConfigError("energy '" + p.energy + "' has dimension " + std::to_string(e.dim));
    return e;
  }
  throw ConfigError("unknown energy '" + p.energy + "'");
}

/// Problem files hold PnPProblem and PnPGDConfig keys. beta defaults to
/// 2 sigma_y^2 when the file sets sigma_y but not beta.
inline std::pair<PnPProblem, PnPGDConfig> parse_problem(KeyValues kv) {
  const bool beta_given = kv.count("beta") > 0;
  PnPProblem problem;
  PnPGDConfig config;
  consume(problem, kv);
  consume(config, kv);
  reject_unknown(kv);
  if (!beta_given && problem.sigma_y > 0.0) config.beta = 2.0 * problem.sigma_y * problem.sigma_y;
  return {problem, config};
}

/// Preset name (ring8, two_mode_1d) or a mixture JSON path.
inline GaussianMixture resolve_mixture(const std::string& name) {
  if (name == "ring8") return ring_mixture();
  if (name == "two_mode_1d") return two_mode_1d();
  return load_mixture(name);
}

inline bool operator==(const TrainConfig& a, const TrainConfig& b) { return serialize(a) == serialize(b); }

}  // namespace ncvsd
