// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "clipforge/checkpoint.hpp"
#include "clipforge/cli.hpp"
#include "oracles.hpp"

namespace clipforge {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  int status = 0;
  std::string out, err;
  fs::path run_dir;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "clipforge");
  std::ostringstream out, err;
  Invocation r;
  r.status = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  const std::string key = "run directory: ";
  const auto at = r.out.rfind(key);
  if (at != std::string::npos) {
    std::string line = r.out.substr(at + key.size());
    r.run_dir = line.substr(0, line.find('\n'));
  }
  return r;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::vector<nlohmann::json> step_log(const fs::path& run_dir) {
  std::ifstream in(run_dir / "steps.ndjson");
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_time_s");
    out.push_back(j);
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    ::setenv(kRunRootEnv, root_.path().c_str(), 1);
    config_ = root_.path() / "micro.json";
    std::ofstream(config_) << nlohmann::json{{"image_size_px", 8},      {"patch_size_px", 4},
                                             {"image_layers", 1},        {"image_width", 16},
                                             {"image_heads", 1},         {"text_layers", 1},
                                             {"text_width", 16},         {"text_heads", 1},
                                             {"context_length_tokens", 8}, {"batch_size", 4},
                                             {"total_steps", 10},        {"warmup_steps", 2},
                                             {"data_num_classes", 2},    {"data_samples_per_class", 4}}
                                  .dump();
  }
  void TearDown() override { ::unsetenv(kRunRootEnv); }

  testing::TempDir root_{"cli"};
  fs::path config_;
};

TEST_F(Cli, GenDataWritesALoadableCorpus) {
  const fs::path spec = root_.path() / "spec.json";
  std::ofstream(spec) << R"({"num_classes": 3, "samples_per_class": 2, "image_size": 8})";
  const Invocation r = invoke({"gen-data", "--spec", spec.string(), "--out", (root_.path() / "data").string()});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_.path() / "data" / "manifest.json"));
  EXPECT_TRUE(fs::exists(r.run_dir / "resolved_config.json"));
  const Invocation again = invoke({"gen-data", "--spec", spec.string(), "--out", (root_.path() / "data").string()});
  EXPECT_EQ(again.status, 1);
  EXPECT_NE(again.err.find("--out"), std::string::npos);
}

TEST_F(Cli, TrainEchoesOverridesAndWritesArtifacts) {
  const Invocation r = invoke({"train", "--config", config_.string(), "--set", "seed=4", "total_steps=6"});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto resolved = read_json(r.run_dir / "resolved_config.json");
  EXPECT_EQ(resolved.at("seed"), 4);
  EXPECT_EQ(resolved.at("total_steps"), 6);
  EXPECT_EQ(resolved.at("overrides"), (nlohmann::json{"seed=4", "total_steps=6"}));
  EXPECT_EQ(step_log(r.run_dir).size(), 6u);
  EXPECT_TRUE(fs::exists(r.run_dir / "checkpoints" / "final.cfck"));
  EXPECT_EQ(read_json(r.run_dir / "summary.json").at("effective_steps"), 6);
}

TEST_F(Cli, ResolvedConfigReproducesTheRun) {
  const Invocation a = invoke({"train", "--config", config_.string(), "--set", "seed=9"});
  ASSERT_EQ(a.status, 0) << a.err;
  const Invocation b = invoke({"train", "--config", (a.run_dir / "resolved_config.json").string()});
  ASSERT_EQ(b.status, 0) << b.err;
  EXPECT_NE(a.run_dir, b.run_dir);
  EXPECT_EQ(step_log(a.run_dir), step_log(b.run_dir));
}

TEST_F(Cli, ResumeFromIntermediateCheckpointIsBitExact) {
  const Invocation full = invoke({"train", "--config", config_.string()});
  ASSERT_EQ(full.status, 0) << full.err;
  const fs::path mid = full.run_dir / "checkpoints" / "step-000004.cfck";
  ASSERT_TRUE(fs::exists(mid));
  const Invocation rest = invoke({"train", "--resume", mid.string()});
  ASSERT_EQ(rest.status, 0) << rest.err;
  const Checkpoint a = load_checkpoint(full.run_dir / "checkpoints" / "final.cfck");
  const Checkpoint b = load_checkpoint(rest.run_dir / "checkpoints" / "final.cfck");
  EXPECT_EQ(a.tensors, b.tensors);
  const auto tail = step_log(full.run_dir);
  EXPECT_EQ(step_log(rest.run_dir), std::vector<nlohmann::json>(tail.begin() + 4, tail.end()));
}

TEST_F(Cli, EvalWritesJsonAndCsvReports) {
  const Invocation t = invoke({"train", "--config", config_.string(), "--set", "total_steps=3"});
  ASSERT_EQ(t.status, 0) << t.err;
  const Invocation e =
      invoke({"eval", "--ckpt", (t.run_dir / "checkpoints" / "final.cfck").string(), "--samples-per-class", "3"});
  ASSERT_EQ(e.status, 0) << e.err;
  const auto report = read_json(e.run_dir / "report.json");
  EXPECT_TRUE(report.contains("benchmarks"));
  std::ifstream csv(e.run_dir / "report.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "benchmark,metric,value");
  EXPECT_NE(e.out.find("delta"), std::string::npos);
}

TEST_F(Cli, UnknownKeysAndFlagsFail) {
  const Invocation bad_key = invoke({"train", "--config", config_.string(), "--set", "learning_rate=0.1"});
  EXPECT_EQ(bad_key.status, 1);
  EXPECT_NE(bad_key.err.find("learning_rate"), std::string::npos);
  const Invocation bad_flag = invoke({"train", "--frobnicate"});
  EXPECT_NE(bad_flag.status, 0);
  const Invocation missing = invoke({"train", "--config", (root_.path() / "absent.json").string()});
  EXPECT_EQ(missing.status, 1);
  EXPECT_NE(missing.err.find("--config"), std::string::npos);
}

TEST_F(Cli, RunDirectoriesAreNeverReused) {
  std::set<fs::path> seen;
  for (int i = 0; i < 5; ++i) {
    const fs::path p = make_run_dir(root_.path(), "x");
    EXPECT_TRUE(seen.insert(p).second);
    EXPECT_TRUE(fs::is_directory(p));
  }
}

}  // namespace
}  // namespace clipforge
