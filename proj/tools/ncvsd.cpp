// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0
//
// ncvsd: pretrain | train | sample | pnp | verify
//
// Every command writes manifest.json into its output directory before doing
// any work. All randomness derives from --seed through derive_seed(seed,
// stream, index) keyed streams, so reruns with the same inputs reproduce
// every output file byte for byte.

#include "ncvsd/checkpoint.hpp"
#include "ncvsd/config.hpp"
#include "ncvsd/io.hpp"
#include "ncvsd/pnp.hpp"
#include "ncvsd/sampler.hpp"
#include "ncvsd/stats.hpp"
#include "ncvsd/verify.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace ncvsd;

#ifndef NCVSD_SOURCE_REVISION
#define NCVSD_SOURCE_REVISION "unknown"
#endif

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
  std::string checkpoint;
  int steps = 1;
  long n = 0;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Creates the output directory (it must not exist or be empty), then
/// writes the manifest through a temporary file and a rename.
void begin_experiment(const std::string& command, const CommonOptions& o, std::uint64_t seed,
                      const nlohmann::json& inputs) {
  if (o.out.empty()) throw UsageError("--out is required");
  const fs::path dir(o.out);
  if (fs::exists(dir) && !fs::is_empty(dir)) throw UsageError("output directory '" + o.out + "' is not empty");
  fs::create_directories(dir);
  const nlohmann::json manifest = {
      {"experiment_id", command + "-" + std::to_string(seed)},
      {"command", command},
      {"config_path", o.config},
      {"seed", seed},
      {"output_dir", o.out},
      {"source_revision", NCVSD_SOURCE_REVISION},
      {"threads", o.threads},
      {"inputs", inputs},
      {"started_at", utc_now()},
  };
  const fs::path tmp = dir / "manifest.json.tmp";
  std::ofstream(tmp) << manifest.dump(2) << '\n';
  fs::rename(tmp, dir / "manifest.json");
}

void finish_experiment(const CommonOptions& o) {
  const fs::path path = fs::path(o.out) / "manifest.json";
  std::ifstream in(path);
  nlohmann::json manifest = nlohmann::json::parse(in);
  manifest["finished_at"] = utc_now();
  std::ofstream(path) << manifest.dump(2) << '\n';
}

void write_json(const fs::path& path, const nlohmann::json& j) { std::ofstream(path) << j.dump(2) << '\n'; }

struct TrainInputs {
  TrainConfig train;
  DataConfig data;
};

TrainInputs read_train_config(const CommonOptions& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  if (!fs::exists(o.config)) throw UsageError("config file '" + o.config + "' does not exist");
  KeyValues kv = read_key_values(o.config);
  TrainInputs in;
  consume(in.train, kv);
  consume(in.data, kv);
  reject_unknown(kv);
  if (o.seed) in.train.seed = *o.seed;
  validate(in.train);
  return in;
}

nlohmann::json describe(const TrainInputs& in) {
  return {{"train", serialize(in.train)}, {"data", serialize(in.data)}};
}

// ---------------------------------------------------------------------------

int cmd_pretrain(const CommonOptions& o) {
  const TrainInputs in = read_train_config(o);
  if (in.train.teacher == TeacherMode::analytic) {
    std::cout << "teacher = analytic: the exact posterior mean serves as the teacher, nothing to pretrain\n";
    return 0;
  }
  begin_experiment("pretrain", o, in.train.seed, describe(in));
  const GaussianMixture gmm = resolve_mixture(in.data.mixture);
  Rng rng = make_rng(in.train.seed, 0x1417);
  TeacherReport report;
  const MLPDenoiser teacher = pretrain_teacher(in.train, gmm, rng, &report);
  const nlohmann::json j = {{"mean_error", report.mean_error},
                            {"threshold", report.threshold},
                            {"converged", report.converged},
                            {"final_loss", report.final_loss}};
  save_denoiser(teacher, "teacher", j, (fs::path(o.out) / "teacher.ckpt").string());
  write_json(fs::path(o.out) / "teacher_report.json", j);
  std::cout << "teacher held-out error " << report.mean_error << " (threshold " << report.threshold << ")"
            << (report.converged ? "" : " -- NOT converged") << '\n';
  finish_experiment(o);
  return 0;
}

int cmd_train(const CommonOptions& o) {
  TrainInputs in = read_train_config(o);
  begin_experiment("train", o, in.train.seed, describe(in));
  const GaussianMixture gmm = resolve_mixture(in.data.mixture);
  const fs::path dir(o.out);
  TrainState state;
  std::ofstream metrics(dir / "metrics.csv");
  metrics << kMetricsHeader << '\n';
  if (!o.checkpoint.empty()) {
    LoadedTrainState loaded = load_train_state(o.checkpoint);
    if (serialize(loaded.config) != serialize(in.train))
      throw UsageError("checkpoint '" + o.checkpoint + "' was written with a different configuration");
    state = std::move(loaded.state);
  } else {
    std::optional<MLPDenoiser> teacher;
    if (in.train.teacher == TeacherMode::learned && !in.data.teacher_checkpoint.empty())
      teacher = load_denoiser(in.data.teacher_checkpoint);
    state = init_state(in.train, gmm, teacher ? &*teacher : nullptr);
  }
  TrainHooks hooks;
  hooks.on_metrics = [&](const LossRow& r) {
    write_metrics_row(metrics, r);
    metrics.flush();
    std::cout << "step " << r.step << "  images " << r.images_seen << "  swd_1step " << r.swd_1step << '\n';
  };
  hooks.checkpoint_every = in.data.checkpoint_every;
  hooks.on_checkpoint = [&](const TrainState& s) {
    save_train_state(s, in.train, (dir / "checkpoint.ckpt").string());
  };
  const std::string crash_path = (dir / "crash.ckpt").string();
  hooks.on_crash = [&](const TrainState& s, const std::exception& e) {
    save_train_state(s, in.train, crash_path, {{"error", e.what()}});
    std::cerr << "training aborted: " << e.what() << "\nlast good state written to " << crash_path << '\n';
  };
  train(state, in.train, gmm, hooks);
  save_train_state(state, in.train, (dir / "final.ckpt").string(), {{"final", true}, {"sampling_weights", "ema"}});
  finish_experiment(o);
  return 0;
}

/// "oracle:<mixture>" or a training / denoiser checkpoint.
struct DenoiserSource {
  std::optional<GaussianMixture> oracle;
  std::optional<MLPDenoiser> generator;
  double gamma = 0.414;
};

DenoiserSource load_source(const std::string& spec) {
  if (spec.empty()) throw UsageError("--checkpoint is required (a checkpoint path or oracle:<mixture>)");
  DenoiserSource src;
  if (spec.rfind("oracle:", 0) == 0) {
    src.oracle = resolve_mixture(spec.substr(7));
    return src;
  }
  const TensorArchive header_only = read_archive(spec);
  if (header_only.header.value("kind", "") == "train") {
    LoadedTrainState loaded = load_train_state(spec);
    src.generator = std::move(loaded.state.generator_ema.shadow);
    src.gamma = loaded.config.gamma;
  } else {
    nlohmann::json header;
    src.generator = load_denoiser(spec, &header);
    if (!src.generator->conditioned()) throw UsageError("'" + spec + "' holds an unconditioned denoiser");
  }
  return src;
}

template <class F>
auto with_denoiser(const DenoiserSource& src, F&& f) {
  if (src.oracle) return f(OracleDenoiser(*src.oracle));
  return f(LearnedDenoiser(*src.generator, src.gamma));
}

Eigen::Index source_dim(const DenoiserSource& src) { return src.oracle ? src.oracle->dim() : src.generator->dim; }

int cmd_sample(const CommonOptions& o, const std::string& mode, const std::string& y_text, double sigma, double zeta) {
  const DenoiserSource src = load_source(o.checkpoint);
  const std::uint64_t seed = o.seed.value_or(0);
  if (o.n < 0) throw UsageError("--n must be non-negative");
  if (mode != "uncond" && mode != "denoise") throw UsageError("--mode must be uncond or denoise");
  SamplerConfig config = few_step_config(o.steps, zeta);
  Vec y;
  if (mode == "denoise") {
    if (!(sigma > 0.0)) throw UsageError("--sigma must be positive in denoise mode");
    detail::parse_value("y", y_text, y);
    if (y.size() != source_dim(src))
      throw UsageError("--y has " + std::to_string(y.size()) + " entries, model dimension is " +
                       std::to_string(source_dim(src)));
  }
  begin_experiment("sample", o, seed,
                   {{"checkpoint", o.checkpoint}, {"steps", o.steps}, {"n", o.n}, {"mode", mode},
                    {"y", y_text}, {"sigma", sigma}, {"zeta", zeta}});
  SampleBatch batch = with_denoiser(src, [&](const auto& d) {
    return mode == "uncond" ? unconditional_sample(d, config, source_dim(src), o.n, seed)
                            : conditional_sample(d, config, y, sigma, o.n, seed);
  });
  batch.label = src.oracle ? "oracle" : (o.steps == 1 ? "learned-1step" : "learned-kstep");
  std::ofstream out(fs::path(o.out) / "samples.csv");
  write_samples_csv(out, batch);
  finish_experiment(o);
  return 0;
}

int cmd_pnp(const CommonOptions& o, bool steps_given) {
  if (o.config.empty()) throw UsageError("--config (problem spec) is required");
  if (!fs::exists(o.config)) throw UsageError("problem file '" + o.config + "' does not exist");
  auto [problem, config] = parse_problem(read_key_values(o.config));
  if (steps_given) config.prior_steps = o.steps;
  validate(config);
  const DenoiserSource src = load_source(o.checkpoint);
  const EnergyFunction energy = make_energy(problem, source_dim(src));
  const std::uint64_t seed = o.seed.value_or(0);
  const Eigen::Index chains = o.n > 0 ? o.n : problem.chains;
  begin_experiment("pnp", o, seed,
                   {{"checkpoint", o.checkpoint}, {"problem", serialize(problem)}, {"config", serialize(config)},
                    {"chains", chains}});
  PnPTrajectory trajectory;
  const SampleBatch solution =
      with_denoiser(src, [&](const auto& d) { return pnp_sample(d, energy, config, chains, seed, &trajectory); });
  const fs::path dir(o.out);
  {
    std::ofstream out(dir / "solution.csv");
    write_samples_csv(out, solution);
  }
  {
    std::ofstream out(dir / "trajectory.csv");
    write_trajectory_csv(out, trajectory);
  }
  if (!problem.mixture.empty()) {
    const GaussianMixture prior = resolve_mixture(problem.mixture);
    GaussianMixture target = prior;
    if (problem.energy == "linear-gaussian")
      target = linear_posterior(prior, problem.A, problem.y, NoiseLevel(std::sqrt(config.beta / 2.0)));
    else if (problem.energy != "none")
      throw UsageError("an exact reference exists only for energy none or linear-gaussian");
    Rng rng = make_rng(seed, 0x7e7);
    const SampleBatch reference = sample(target, static_cast<std::size_t>(problem.reference_samples), rng);
    DistanceReport r = energy_distance(solution, reference);
    r.detail = "PnP-GD chains vs exact posterior";
    write_json(dir / "report.json", to_json(r));
    std::cout << "energy distance to the exact posterior: " << r.value << '\n';
  }
  finish_experiment(o);
  return 0;
}

int cmd_verify(const CommonOptions& o, const std::string& suite) {
  const std::uint64_t seed = o.seed.value_or(0);
  std::vector<std::string> suites;
  if (suite == "all") suites = suite_names();
  else if (std::find(suite_names().begin(), suite_names().end(), suite) != suite_names().end()) suites = {suite};
  else throw UsageError("unknown suite '" + suite + "' (expected prop1, prop2, gradient, backward or all)");
  if (!o.out.empty()) begin_experiment("verify", o, seed, {{"suite", suite}});
  nlohmann::json report = {{"seed", seed}, {"suites", nlohmann::json::array()}};
  bool passed = true;
  for (const auto& name : suites) {
    const SuiteReport r = run_suite(name, seed);
    passed = passed && r.passed();
    report["suites"].push_back(to_json(r));
    std::cout << (r.passed() ? "PASS " : "FAIL ") << name << " (" << r.checks.size() << " checks)\n";
  }
  report["passed"] = passed;
  if (!o.out.empty()) {
    write_json(fs::path(o.out) / "report.json", report);
    finish_experiment(o);
  } else {
    std::cout << report.dump(2) << '\n';
  }
  return passed ? 0 : 1;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool config, bool checkpoint, bool sampling) {
  if (config) cmd->add_option("--config", o.config, "Configuration / problem file");
  cmd->add_option("--seed", o.seed, "Root random seed");
  cmd->add_option("--out", o.out, "Output directory (must be new or empty)");
  cmd->add_option("--threads", o.threads, "Worker thread cap")->check(CLI::PositiveNumber);
  if (checkpoint) cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint path or oracle:<mixture>");
  if (sampling) {
    cmd->add_option("--steps", o.steps, "Sampling steps (1, 2, 4 or up to 40)");
    cmd->add_option("--n", o.n, "Number of samples / chains");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-conditional variational score distillation on Gaussian-mixture toys"};
  app.require_subcommand(1);
  CommonOptions o;
  std::string mode = "uncond", y_text, suite = "all";
  double sigma = 0.0, zeta = 1.0;

  auto* pretrain = app.add_subcommand("pretrain", "Fit a learned teacher by denoising regression");
  add_common(pretrain, o, true, false, false);
  auto* trainc = app.add_subcommand("train", "Distill a generative denoiser");
  add_common(trainc, o, true, true, false);
  auto* samplec = app.add_subcommand("sample", "Draw samples from a trained generator or the oracle");
  add_common(samplec, o, false, true, true);
  samplec->add_option("--mode", mode, "uncond or denoise");
  samplec->add_option("--y", y_text, "Observation, comma separated (denoise mode)");
  samplec->add_option("--sigma", sigma, "Observation noise level (denoise mode)");
  samplec->add_option("--zeta", zeta, "Chain stochasticity in [0, 1]");
  auto* pnpc = app.add_subcommand("pnp", "Posterior sampling with PnP-GD");
  add_common(pnpc, o, true, true, true);
  auto* verifyc = app.add_subcommand("verify", "Run verification suites");
  add_common(verifyc, o, false, false, false);
  verifyc->add_option("--suite", suite, "prop1 | prop2 | gradient | backward | all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  set_thread_cap(o.threads);
  try {
    if (*pretrain) return cmd_pretrain(o);
    if (*trainc) return cmd_train(o);
    if (*samplec) return cmd_sample(o, mode, y_text, sigma, zeta);
    if (*pnpc) return cmd_pnp(o, pnpc->count("--steps") > 0);
    if (*verifyc) return cmd_verify(o, suite);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
