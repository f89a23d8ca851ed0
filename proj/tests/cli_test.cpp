// Copyright (c) 2026, The ncvsd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace {

namespace fs = std::filesystem;

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "ncvsd_cli_test";
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(NCVSD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh(const std::string& name) {
  const fs::path p = work_dir() / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("sample --checkpoint oracle:ring8"), 2);  // no --out
  EXPECT_EQ(run("verify --suite nope"), 2);
  EXPECT_EQ(run("train --out " + fresh("missing_config").string()), 2);
  EXPECT_EQ(run("sample --checkpoint oracle:ring8 --steps 0 --n 4 --out " + fresh("steps0").string()), 1);
}

TEST(Cli, RefusesNonEmptyOutputDirectory) {
  const fs::path dir = fresh("busy");
  fs::create_directories(dir);
  std::ofstream(dir / "keep.txt") << "x";
  EXPECT_EQ(run("sample --checkpoint oracle:ring8 --n 4 --out " + dir.string()), 2);
  EXPECT_TRUE(fs::exists(dir / "keep.txt"));
}

TEST(Cli, UnknownConfigKeyIsAnError) {
  const fs::path cfg = fresh("bad.cfg");
  std::ofstream(cfg) << "batch_size = 8\nlearning_rat = 1\n";
  EXPECT_EQ(run("train --config " + cfg.string() + " --out " + fresh("bad_train").string()), 2);
}

TEST(Cli, OracleSamplingWritesCsvAndManifest) {
  const fs::path dir = fresh("oracle_sample");
  ASSERT_EQ(run("sample --checkpoint oracle:ring8 --steps 4 --n 10 --seed 3 --out " + dir.string()), 0);
  const std::string csv = slurp(dir / "samples.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "x0,x1,seed,steps");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  const std::string manifest = slurp(dir / "manifest.json");
  for (const char* key : {"experiment_id", "seed", "source_revision", "threads", "started_at", "finished_at"})
    EXPECT_NE(manifest.find(key), std::string::npos) << key;
}

TEST(Cli, EmptySampleIsHeaderOnly) {
  const fs::path dir = fresh("empty_sample");
  ASSERT_EQ(run("sample --checkpoint oracle:ring8 --n 0 --out " + dir.string()), 0);
  EXPECT_EQ(slurp(dir / "samples.csv"), "x0,x1,seed,steps\n");
}

TEST(Cli, DenoiseModeChecksTheObservation) {
  EXPECT_EQ(run("sample --checkpoint oracle:ring8 --mode denoise --y 1 --sigma 0.5 --n 4 --out " +
                fresh("bad_y").string()),
            2);
  EXPECT_EQ(run("sample --checkpoint oracle:ring8 --mode denoise --y 1,0 --sigma 0.5 --n 4 --out " +
                fresh("good_y").string()),
            0);
}

TEST(Cli, RerunsAreByteIdentical) {
  const fs::path problem = fresh("problem.cfg");
  std::ofstream(problem) << "energy = linear-gaussian\nA = 1,0;0,1\ny = 0.95,0.1\nsigma_y = 0.1\nn = 12\n"
                            "mixture = ring8\nchains = 300\nreference_samples = 300\n";
  const fs::path a = fresh("pnp_a"), b = fresh("pnp_b");
  const std::string args = "pnp --checkpoint oracle:ring8 --seed 5 --config " + problem.string() + " --out ";
  ASSERT_EQ(run(args + a.string()), 0);
  ASSERT_EQ(run(args + b.string() + " --threads 2"), 0);
  for (const char* f : {"solution.csv", "trajectory.csv", "report.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(Cli, PnPWithoutEnergyRunsThePrior) {
  const fs::path problem = fresh("none.cfg");
  std::ofstream(problem) << "energy = none\nn = 6\n";
  const fs::path dir = fresh("pnp_none");
  ASSERT_EQ(run("pnp --checkpoint oracle:ring8 --n 8 --config " + problem.string() + " --out " + dir.string()), 0);
  const std::string traj = slurp(dir / "trajectory.csv");
  EXPECT_EQ(traj.substr(0, traj.find('\n')), "step,sigma,x0_0,x0_1,u_0,u_1");
  EXPECT_EQ(std::count(traj.begin(), traj.end(), '\n'), 6);
}

TEST(Cli, VerifyReportsFailureThroughTheExitCode) {
  const fs::path dir = fresh("verify_prop1");
  ASSERT_EQ(run("verify --suite prop1 --seed 2 --out " + dir.string()), 0);
  EXPECT_NE(slurp(dir / "report.json").find("\"passed\": true"), std::string::npos);
}

}  // namespace
