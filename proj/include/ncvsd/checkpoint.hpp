// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints. Layout:
//   8 bytes   magic "NCVSDCK1"
//   8 bytes   little-endian u64 header length H
//   H bytes   JSON header: version, kind, seed, counters, config, tensor index
//   payload   raw little-endian doubles, tensors concatenated in index order

#pragma once

#include "ncvsd/config.hpp"
#include "ncvsd/train.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace ncvsd {

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[9] = "NCVSDCK1";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named tensors plus a free-form JSON header.
struct TensorArchive {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::string> names;
  std::vector<Mat> tensors;

  void put(const std::string& name, const Mat& m) {
    names.push_back(name);
    tensors.push_back(m);
  }

  const Mat& get(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return tensors[i];
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
  }

  bool has(const std::string& name) const { return std::find(names.begin(), names.end(), name) != names.end(); }
};

inline void write_archive(const TensorArchive& a, const std::string& path) {
  nlohmann::json header = a.header;
  header["version"] = kCheckpointVersion;
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < a.names.size(); ++i)
    index.push_back({{"name", a.names[i]}, {"rows", a.tensors[i].rows()}, {"cols", a.tensors[i].cols()}});
  header["tensors"] = index;
  const std::string text = header.dump();
  // write-then-rename so a crash never leaves a truncated checkpoint behind
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    out.write(kCheckpointMagic, 8);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Mat& m : a.tensors)
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!out) throw CheckpointError("short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline TensorArchive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("'" + path + "' is not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 30)) throw CheckpointError("corrupt checkpoint header in '" + path + "'");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  TensorArchive a;
  try {
    a.header = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw CheckpointError("corrupt checkpoint header in '" + path + "': " + e.what());
  }
  if (!a.header.contains("version")) throw CheckpointError("checkpoint '" + path + "' has no version field");
  const int version = a.header["version"].get<int>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint '" + path + "' has version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  for (const auto& t : a.header.at("tensors")) {
    Mat m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint '" + path + "' is truncated");
    a.names.push_back(t.at("name").get<std::string>());
    a.tensors.push_back(std::move(m));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Network and optimizer (de)serialization

template <class Net>
void put_net(TensorArchive& a, const std::string& prefix, const Net& net) {
  for (const auto& p : param_views(net))
    a.put(prefix + "/" + p.name, Eigen::Map<const Mat>(p.data.data(), p.rows, p.cols));
}

template <class Net>
void get_net(const TensorArchive& a, const std::string& prefix, Net& net) {
  for (auto& p : param_views(net)) {
    const Mat& m = a.get(prefix + "/" + p.name);
    if (m.rows() != p.rows || m.cols() != p.cols)
      throw CheckpointError("shape mismatch for '" + prefix + "/" + p.name + "'");
    std::copy(m.data(), m.data() + m.size(), p.data.begin());
  }
}

inline void put_adam(TensorArchive& a, const std::string& prefix, const AdamState& s) {
  a.header["optim"][prefix] = {{"beta1", s.beta1}, {"beta2", s.beta2}, {"eps", s.eps}, {"step", s.step},
                               {"slots", s.m.size()}};
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(s.m[i].size());
    a.put(prefix + "/m/" + std::to_string(i), Eigen::Map<const Mat>(s.m[i].data(), n, 1));
    a.put(prefix + "/v/" + std::to_string(i), Eigen::Map<const Mat>(s.v[i].data(), n, 1));
  }
}

inline AdamState get_adam(const TensorArchive& a, const std::string& prefix) {
  const auto& h = a.header.at("optim").at(prefix);
  AdamState s{h.at("beta1").get<double>(), h.at("beta2").get<double>(), h.at("eps").get<double>(),
              h.at("step").get<long>()};
  const auto slots = h.at("slots").get<std::size_t>();
  for (std::size_t i = 0; i < slots; ++i) {
    const Mat& m = a.get(prefix + "/m/" + std::to_string(i));
    const Mat& v = a.get(prefix + "/v/" + std::to_string(i));
    s.m.emplace_back(m.data(), m.data() + m.size());
    s.v.emplace_back(v.data(), v.data() + v.size());
  }
  return s;
}

struct Architecture {
  Eigen::Index dim = 0;
  int width = 0;
  int depth = 0;
  double sigma_data = 0.5;
  int weighting_width = 64;
};

inline nlohmann::json to_json(const Architecture& a) {
  return {{"dim", a.dim}, {"width", a.width}, {"depth", a.depth}, {"sigma_data", a.sigma_data},
          {"weighting_width", a.weighting_width}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
  return {j.at("dim").get<Eigen::Index>(), j.at("width").get<int>(), j.at("depth").get<int>(),
          j.at("sigma_data").get<double>(), j.at("weighting_width").get<int>()};
}

inline MLPDenoiser blank_denoiser(const Architecture& arch, bool conditioned) {
  Rng rng(0);
  return MLPDenoiser::init(arch.dim, arch.width, arch.depth, conditioned, arch.sigma_data, rng);
}

// ---------------------------------------------------------------------------
// Training and teacher checkpoints

inline Architecture architecture_of(const TrainState& s) {
  return {s.generator.dim, static_cast<int>(s.generator.trunk.layers.front().weight.rows()),
          static_cast<int>(s.generator.trunk.depth()), s.generator.precond.sigma_data,
          static_cast<int>(s.weighting.hidden.weight.rows())};
}

inline void save_train_state(const TrainState& s, const TrainConfig& c, const std::string& path,
                             const nlohmann::json& extra = {}) {
  TensorArchive a;
  a.header["kind"] = "train";
  a.header["seed"] = c.seed;
  a.header["step"] = s.step;
  a.header["images_seen"] = s.images_seen;
  a.header["config"] = serialize(c);
  a.header["architecture"] = to_json(architecture_of(s));
  a.header["has_teacher"] = s.teacher.has_value();
  a.header["ema_rate"] = s.generator_ema.rate;
  if (!extra.is_null()) a.header["extra"] = extra;
  nlohmann::json telemetry = nlohmann::json::array();
  for (const LossRow& r : s.telemetry)
    telemetry.push_back({r.step, r.images_seen, r.loss_gen, r.loss_score, r.loss_disc, r.w_lambda_mean});
  a.header["telemetry"] = telemetry;
  put_net(a, "generator", s.generator);
  put_net(a, "generator_ema", s.generator_ema.shadow);
  put_net(a, "score", s.score);
  put_net(a, "discriminator", s.discriminator);
  put_net(a, "weighting", s.weighting);
  if (s.teacher) put_net(a, "teacher", *s.teacher);
  put_adam(a, "adam_generator", s.adam_generator);
  put_adam(a, "adam_score", s.adam_score);
  put_adam(a, "adam_discriminator", s.adam_discriminator);
  put_adam(a, "adam_weighting", s.adam_weighting);
  write_archive(a, path);
}

struct LoadedTrainState {
  TrainState state;
  TrainConfig config;
  nlohmann::json header;
};

inline LoadedTrainState load_train_state(const std::string& path) {
  const TensorArchive a = read_archive(path);
  if (a.header.value("kind", "") != "train") throw CheckpointError("'" + path + "' is not a training checkpoint");
  std::istringstream cfg(a.header.at("config").get<std::string>());
  LoadedTrainState out{{}, parse_config<TrainConfig>(parse_key_values(cfg, path)), a.header};
  const Architecture arch = architecture_from_json(a.header.at("architecture"));
  TrainState& s = out.state;
  s.generator = blank_denoiser(arch, true);
  s.score = blank_denoiser(arch, true);
  s.generator_ema = {blank_denoiser(arch, true), a.header.at("ema_rate").get<double>()};
  Rng rng(0);
  s.discriminator = Discriminator::init(arch.dim, arch.width, arch.depth, arch.sigma_data, rng);
  s.weighting = UncertaintyNet::init(rng, arch.weighting_width);
  get_net(a, "generator", s.generator);
  get_net(a, "generator_ema", s.generator_ema.shadow);
  get_net(a, "score", s.score);
  get_net(a, "discriminator", s.discriminator);
  get_net(a, "weighting", s.weighting);
  if (a.header.at("has_teacher").get<bool>()) {
    s.teacher = blank_denoiser(arch, false);
    get_net(a, "teacher", *s.teacher);
  }
  s.adam_generator = get_adam(a, "adam_generator");
  s.adam_score = get_adam(a, "adam_score");
  s.adam_discriminator = get_adam(a, "adam_discriminator");
  s.adam_weighting = get_adam(a, "adam_weighting");
  s.step = a.header.at("step").get<long>();
  s.images_seen = a.header.at("images_seen").get<long>();
  for (const auto& r : a.header.at("telemetry"))
    s.telemetry.push_back({r[0].get<long>(), r[1].get<long>(), r[2].get<double>(), r[3].get<double>(),
                           r[4].get<double>(), r[5].get<double>()});
  return out;
}

inline void save_denoiser(const MLPDenoiser& net, const std::string& kind, const nlohmann::json& extra,
                          const std::string& path) {
  TensorArchive a;
  a.header["kind"] = kind;
  a.header["conditioned"] = net.conditioned();
  a.header["architecture"] = to_json(Architecture{net.dim, static_cast<int>(net.trunk.layers.front().weight.rows()),
                                                  static_cast<int>(net.trunk.depth()), net.precond.sigma_data});
  a.header["extra"] = extra;
  put_net(a, "net", net);
  write_archive(a, path);
}

inline MLPDenoiser load_denoiser(const std::string& path, nlohmann::json* header = nullptr) {
  const TensorArchive a = read_archive(path);
  if (!a.header.contains("conditioned")) throw CheckpointError("'" + path + "' holds no single denoiser");
  MLPDenoiser net = blank_denoiser(architecture_from_json(a.header.at("architecture")),
                                   a.header.at("conditioned").get<bool>());
  get_net(a, "net", net);
  if (header) *header = a.header;
  return net;
}

}  // namespace ncvsd
