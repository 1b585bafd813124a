// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/cli/cli.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace kvpool::cli {
namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("kvsim-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  int call(std::vector<std::string> args) {
    args.insert(args.begin(), "kvsim");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    out_.str("");
    err_.str("");
    return main(static_cast<int>(argv.size()), argv.data(), out_, err_);
  }

  fs::path dir_;
  std::ostringstream out_;
  std::ostringstream err_;
};

constexpr const char* kSmall = R"(seed: 5
cluster:
  setting: 1P1D-CC
workload:
  kind: chat
  sessions: 4
  request_rate: 2.0
)";

TEST_F(CliTest, SweepPointsEnumerateCrossProductFirstAxisOutermost) {
  const auto points = sweep_points({{"a", {"1", "2"}}, {"b", {"x", "y", "z"}}});
  ASSERT_EQ(points.size(), 6u);
  EXPECT_EQ(points[0], (std::vector<std::string>{"a=1", "b=x"}));
  EXPECT_EQ(points[1], (std::vector<std::string>{"a=1", "b=y"}));
  EXPECT_EQ(points[5], (std::vector<std::string>{"a=2", "b=z"}));
  EXPECT_EQ(sweep_points({}).size(), 1u);
}

TEST_F(CliTest, RunWritesAllOutputs) {
  const fs::path config = write("c.yaml", kSmall);
  EXPECT_EQ(call({"run", config.string(), "-o", (dir_ / "out").string()}), 0) << err_.str();
  for (const char* f : {"requests.csv", "transfers.csv", "routing.csv", "summary.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / f)) << f;
  }
  EXPECT_NE(out_.str().find("requests done="), std::string::npos);
}

TEST_F(CliTest, SeedFlagChangesOutput) {
  const fs::path config = write("c.yaml", kSmall);
  ASSERT_EQ(call({"run", config.string(), "-o", (dir_ / "a").string()}), 0);
  ASSERT_EQ(call({"run", config.string(), "--seed", "6", "-o", (dir_ / "b").string()}), 0);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_NE(slurp(dir_ / "a" / "requests.csv"), slurp(dir_ / "b" / "requests.csv"));
}

TEST_F(CliTest, BadInputsExitNonzero) {
  const fs::path config = write("c.yaml", kSmall);
  EXPECT_NE(call({"run", config.string(), "--no-such-flag"}), 0);
  EXPECT_NE(call({"run", (dir_ / "missing.yaml").string()}), 0);
  EXPECT_EQ(call({"validate", config.string(), "-s", "workload.sessions=oops"}), 1);
  EXPECT_FALSE(err_.str().empty());
  const fs::path bad = write("bad.yaml", "seed: 1\ncluster:\n  setting: 9X9Z\n");
  EXPECT_EQ(call({"validate", config.string(), bad.string()}), 1);
  EXPECT_NE(out_.str().find("ok: "), std::string::npos);
}

TEST_F(CliTest, SweepRecordsFailedPointsAndContinues) {
  write("c.yaml", kSmall);
  const fs::path exp = write("e.yaml", R"(base: c.yaml
axes:
  - {key: cluster.setting, values: [PD-CC, 1P1D, NOPE]}
)");
  const ExperimentSpec spec = load_experiment(exp);
  EXPECT_EQ(spec.base, dir_ / "c.yaml");
  EXPECT_EQ(call({"sweep", exp.string(), "-o", (dir_ / "sw").string(), "-j", "2"}), 1);
  std::ifstream in(dir_ / "sw" / "sweep.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_NE(lines[1].find(",PD-CC,ok,"), std::string::npos);
  EXPECT_NE(lines[3].find(",NOPE,"), std::string::npos);
  EXPECT_NE(lines[3].find("error: "), std::string::npos);
  const auto columns = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  EXPECT_EQ(columns(lines[1]), columns(lines[0]));
  EXPECT_TRUE(fs::exists(dir_ / "sw" / "point-0000" / "summary.csv"));
}

TEST_F(CliTest, DumpIndexListsEveryInstance) {
  const fs::path config = write("c.yaml", kSmall);
  ASSERT_EQ(call({"dump-index", config.string()}), 0) << err_.str();
  EXPECT_NE(out_.str().find("== p0"), std::string::npos);
  EXPECT_NE(out_.str().find("== d0"), std::string::npos);
  ASSERT_EQ(call({"dump-index", config.string(), "--instance", "d0", "--at", "0"}), 0);
  EXPECT_EQ(out_.str().find("== p0"), std::string::npos);
}

}  // namespace
}  // namespace kvpool::cli
