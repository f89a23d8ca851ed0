// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ncvsd/checkpoint.hpp"
#include "ncvsd/config.hpp"
#include "ncvsd/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace ncvsd {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ncvsd_io_test";
  fs::create_directories(dir);
  return dir / name;
}

KeyValues parse(const std::string& text) {
  std::istringstream in(text);
  return parse_key_values(in);
}

TEST(Config, CommentsAndWhitespace) {
  const auto kv = parse("# header\n  batch_size = 64  # inline\n\nlr_ref=0.5\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("batch_size"), "64");
  const auto c = parse_config<TrainConfig>(kv);
  EXPECT_EQ(c.batch_size, 64);
  EXPECT_EQ(c.lr_ref, 0.5);
}

TEST(Config, UnknownAndDuplicateKeysAreErrors) {
  EXPECT_THROW(parse_config<TrainConfig>(parse("batch_sise = 3\n")), ConfigError);
  EXPECT_THROW(parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(parse("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse_config<TrainConfig>(parse("batch_size = many\n")), ConfigError);
}

TEST(Config, SerializeRoundTrips) {
  TrainConfig c;
  c.lr_ref = 0.1 + 0.2;
  c.teacher = TeacherMode::learned;
  c.seed = 12345678901234ULL;
  const auto back = parse_config<TrainConfig>(parse(serialize(c)));
  EXPECT_EQ(serialize(back), serialize(c));
  EXPECT_EQ(back.lr_ref, c.lr_ref);
  EXPECT_TRUE(back == c);
}

TEST(Problem, BetaFollowsMeasurementNoise) {
  auto [p, c] = parse_problem(parse("energy = linear-gaussian\nA = 1,0;0,1\ny = 0.95,0.1\nsigma_y = 0.1\n"));
  EXPECT_NEAR(c.beta, 0.02, 1e-15);
  EXPECT_EQ(p.A, Mat::Identity(2, 2));
  EXPECT_EQ(make_energy(p, 2).kind, "linear-gaussian");
  auto [p2, c2] = parse_problem(parse("energy = linear-gaussian\nA = 1,0\ny = 1\nsigma_y = 0.1\nbeta = 0.5\n"));
  EXPECT_EQ(c2.beta, 0.5);
  EXPECT_THROW(parse_problem(parse("energy = none\nwat = 1\n")), ConfigError);
}

TEST(Problem, ShapeErrorsNameTheMismatch) {
  auto [p, c] = parse_problem(parse("energy = linear-gaussian\nA = 1,0,0\ny = 1\n"));
  EXPECT_THROW(make_energy(p, 2), ConfigError);
  auto [q, d] = parse_problem(parse("energy = linear-gaussian\nA = 1,0;0,1\ny = 1\n"));
  EXPECT_THROW(make_energy(q, 2), ConfigError);
  auto [r, e] = parse_problem(parse("energy = nonsense\n"));
  EXPECT_THROW(make_energy(r, 2), ConfigError);
}

TEST(Mixture, JsonRoundTrip) {
  const auto gmm = ring_mixture();
  const auto path = scratch("ring.json").string();
  save_mixture(gmm, path);
  const auto back = load_mixture(path);
  ASSERT_EQ(back.components(), gmm.components());
  for (std::size_t k = 0; k < gmm.components(); ++k) {
    EXPECT_EQ(back.weights()[k], gmm.weights()[k]);
    EXPECT_EQ(back.means()[k], gmm.means()[k]);
    EXPECT_EQ(back.covariances()[k], gmm.covariances()[k]);
  }
  EXPECT_EQ(resolve_mixture(path).components(), 8u);
}

TEST(Checkpoint, TrainStateRoundTripsBitExactly) {
  TrainConfig c;
  c.width = 8;
  c.depth = 2;
  const auto gmm = ring_mixture();
  TrainState s = init_state(c, gmm);
  s.step = 7;
  s.images_seen = 7 * c.batch_size;
  s.telemetry.push_back({7, s.images_seen, 0.1, 0.2, 0.3, 0.4});
  const auto path = scratch("state.ckpt").string();
  save_train_state(s, c, path);
  const auto back = load_train_state(path);
  EXPECT_EQ(back.state.step, 7);
  EXPECT_EQ(serialize(back.config), serialize(c));
  const auto a = param_views(s.generator);
  const auto b = param_views(back.state.generator);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_TRUE(std::equal(a[i].data.begin(), a[i].data.end(), b[i].data.begin())) << a[i].name;
  EXPECT_EQ(back.state.adam_generator.step, s.adam_generator.step);
  EXPECT_EQ(back.state.telemetry.size(), 1u);
}

TEST(Checkpoint, RejectsForeignFilesAndVersions) {
  const auto junk = scratch("junk.ckpt").string();
  std::ofstream(junk) << "hello";
  EXPECT_THROW(read_archive(junk), CheckpointError);
  EXPECT_THROW(read_archive(scratch("missing.ckpt").string()), CheckpointError);

  TensorArchive a;
  a.header["kind"] = "test";
  const auto path = scratch("v.ckpt").string();
  write_archive(a, path);
  EXPECT_EQ(read_archive(path).header["version"], kCheckpointVersion);
  // Patch the version digit in the JSON header.
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto pos = bytes.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 10] = '9';
  std::ofstream(path, std::ios::binary) << bytes;
  EXPECT_THROW(read_archive(path), CheckpointError);
}

TEST(Csv, SamplesRoundTripExactly) {
  SampleBatch b;
  b.points = Mat{{0.1, -1e-300}, {1.0 / 3.0, 2.5e10}};
  b.seed = 42;
  b.steps = 4;
  std::stringstream ss;
  write_samples_csv(ss, b);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "x0,x1,seed,steps");
  const auto back = read_samples_csv(ss);
  EXPECT_EQ(back.points, b.points);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.steps, 4);
}

TEST(Csv, MetricsAndTrajectoryLayout) {
  std::stringstream m;
  write_metrics_row(m, {3, 96, 0.5, 0.25, 1.0, -2.0, 0.125});
  EXPECT_EQ(m.str(), "3,96,0.5,0.25,1,-2,0.125\n");
  EXPECT_EQ(std::string(kMetricsHeader), "step,images_seen,loss_gen,loss_score,loss_disc,w_lambda_mean,swd_1step");

  PnPTrajectory t;
  t.rows.push_back({5, 80.0, Vec{{1.0, 2.0}}, Vec{{3.0, 4.0}}});
  std::stringstream out;
  write_trajectory_csv(out, t);
  EXPECT_EQ(out.str(), "step,sigma,x0_0,x0_1,u_0,u_1\n5,80,1,2,3,4\n");
}

}  // namespace
}  // namespace ncvsd
