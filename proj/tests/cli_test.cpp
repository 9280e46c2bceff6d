// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Drives the cellsearch binary through a shell and checks exit codes,
// printed contracts and artifacts.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "cellsearch/audio/feature_cache.hpp"
#include "cellsearch/audio/wav.hpp"
#include "cellsearch/cli/run_config.hpp"
#include "support/genotype_oracles.hpp"
#include "support/temp_dir.hpp"

#ifndef CELLSEARCH_CLI_PATH
#error "CELLSEARCH_CLI_PATH must point at the cellsearch binary"
#endif

namespace cellsearch {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int rc = -1;
  std::string output;  // stdout and stderr interleaved
};

CliRun cli(const std::string& args, const fs::path& cwd, const std::string& env = "env -u CELLSEARCH_DATA") {
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" CELLSEARCH_CLI_PATH "' " + args + " 2>&1";
  CliRun r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.output.append(buf, n);
  const int status = ::pclose(p);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

constexpr const char* kToyConfig = R"({
  // small synthetic run
  "synthetic": true,
  "synthetic_data": {"height": 20, "width": 8, "train_per_class": 8, "val_per_class": 8, "test_per_class": 8},
  "supernet": {"num_cells": 1, "init_channels": 4},
  "search": {"epochs": 2, "batch_size": 8, "alpha_lr": 0.01},
  "network": {"depth": 2, "init_channels": 4},
  "train": {"epochs": 2, "batch_size": 8}
})";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { spit(dir_.path() / "toy.json", kToyConfig); }
  const fs::path& dir() const { return dir_.path(); }

  testing::TempDir dir_;
};

std::size_t last_total(const std::string& out) {
  std::smatch m;
  const std::regex re("total_params=(\\d+)\\n$");
  EXPECT_TRUE(std::regex_search(out, m, re)) << out;
  return m.empty() ? 0 : std::stoull(m[1]);
}

TEST_F(Cli, SearchEmitsParseableGenotypeAndIsDeterministic) {
  const CliRun a = cli("search --config toy.json --out a", dir());
  ASSERT_EQ(a.rc, 0) << a.output;
  const CliRun b = cli("search --config toy.json --out b", dir());
  ASSERT_EQ(b.rc, 0) << b.output;
  const std::string ga = slurp(dir() / "a" / "search.genotype");
  EXPECT_NO_THROW(parse_genotype(ga));
  EXPECT_EQ(ga, slurp(dir() / "b" / "search.genotype"));
  EXPECT_EQ(slurp(dir() / "a" / "metrics.csv"), slurp(dir() / "b" / "metrics.csv"));
  for (const char* f : {"config.json", "metrics.csv", "search_epoch1.ckpt", "search_epoch2.ckpt"})
    EXPECT_TRUE(fs::exists(dir() / "a" / f)) << f;
  EXPECT_FALSE(fs::exists(dir() / "a" / ".lock"));
}

TEST_F(Cli, SearchRerunResumesToSameGenotype) {
  ASSERT_EQ(cli("search --config toy.json --out a", dir()).rc, 0);
  const std::string first = slurp(dir() / "a" / "search.genotype");
  fs::remove(dir() / "a" / "search_epoch2.ckpt");
  const CliRun again = cli("search --config toy.json --out a", dir());
  ASSERT_EQ(again.rc, 0) << again.output;
  EXPECT_NE(again.output.find("resumed from epoch 1"), std::string::npos) << again.output;
  EXPECT_EQ(slurp(dir() / "a" / "search.genotype"), first);
}

TEST_F(Cli, ConfigSnapshotMatchesResolvedConfigWithFlagsWinning) {
  ASSERT_EQ(cli("search --config toy.json --out a --seed 5 --channels 3", dir()).rc, 0);
  const std::string snap = slurp(dir() / "a" / "config.json");
  RunConfig back;
  apply_config_json(nlohmann::ordered_json::parse(snap), back);
  EXPECT_EQ(config_snapshot(back), snap);
  EXPECT_EQ(back.seed, 5u);
  EXPECT_EQ(back.supernet.init_channels, 3u);
  EXPECT_EQ(back.out, "a");
  EXPECT_EQ(back.search.epochs, 2u);
}

TEST_F(Cli, MissingDataRootIsConfigErrorNamingTheKey) {
  const CliRun r = cli("search --out a", dir());
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.output.find("data_root"), std::string::npos) << r.output;
  const CliRun env = cli("search --out a", dir(), "CELLSEARCH_DATA=/nonexistent/sc");
  EXPECT_EQ(env.rc, 2);
  EXPECT_NE(env.output.find("data_root"), std::string::npos) << env.output;
  EXPECT_NE(env.output.find("/nonexistent/sc"), std::string::npos) << env.output;
  const CliRun flag = cli("search --out a --data-root /also/missing", dir(), "CELLSEARCH_DATA=/nonexistent/sc");
  EXPECT_EQ(flag.rc, 2);
  EXPECT_NE(flag.output.find("/also/missing"), std::string::npos) << flag.output;
}

TEST_F(Cli, InvalidConfigsExitTwoWithFieldDiagnostics) {
  spit(dir() / "bad_key.json", R"({"synthetic": true, "search": {"epochs": 1, "epoch": 2}})");
  CliRun r = cli("search --config bad_key.json --out a", dir());
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.output.find("search.epoch: unknown key"), std::string::npos) << r.output;
  spit(dir() / "bad_type.json", R"({"train": {"lr": "fast"}})");
  r = cli("params --config bad_type.json", dir());
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.output.find("train.lr"), std::string::npos) << r.output;
  spit(dir() / "bad_value.json", R"({"synthetic": true, "search": {"batch_size": 0}})");
  r = cli("search --config bad_value.json --out a", dir());
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.output.find("batch_size"), std::string::npos) << r.output;
  spit(dir() / "not_json.json", "{");
  EXPECT_EQ(cli("search --config not_json.json", dir()).rc, 2);
  EXPECT_EQ(cli("search --config absent.json", dir()).rc, 2);
  EXPECT_EQ(cli("search --config toy.json --op-set nas3", dir()).rc, 2);
  EXPECT_EQ(cli("frobnicate", dir()).rc, 2);
}

TEST_F(Cli, RuntimeFailuresExitOne) {
  spit(dir() / "occupied", "a file, not a directory");
  EXPECT_EQ(cli("search --config toy.json --out occupied", dir()).rc, 1);
  fs::create_directories(dir() / "locked");
  spit(dir() / "locked" / ".lock", "123\n");
  const CliRun r = cli("search --config toy.json --out locked", dir());
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.output.find("locked"), std::string::npos) << r.output;
}

TEST_F(Cli, TrainReportSchemaAndConsistencyWithParams) {
  spit(dir() / "g.genotype", serialize_genotype(uniform_genotype(OpSet::Nas2, OpKind::DilConv3)));
  const CliRun t = cli("train g.genotype --config toy.json --out t", dir());
  ASSERT_EQ(t.rc, 0) << t.output;
  const auto report = nlohmann::json::parse(slurp(dir() / "t" / "report.json"));
  ASSERT_TRUE(report.contains("test_accuracy"));
  ASSERT_TRUE(report.contains("parameters"));
  const CliRun p = cli("params g.genotype --config toy.json", dir());
  ASSERT_EQ(p.rc, 0) << p.output;
  EXPECT_EQ(report["parameters"].get<std::size_t>(), last_total(p.output));
  EXPECT_TRUE(fs::exists(dir() / "t" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir() / "t" / "train_metrics.csv"));
  ASSERT_EQ(cli("train g.genotype --config toy.json --out t2", dir()).rc, 0);
  EXPECT_EQ(slurp(dir() / "t" / "report.json"), slurp(dir() / "t2" / "report.json"));
}

TEST_F(Cli, DepthTwelveReportListsFourReductionCells) {
  spit(dir() / "g.genotype", serialize_genotype(uniform_genotype(OpSet::Nas1, OpKind::MaxPool3)));
  spit(dir() / "quick.json", R"({"synthetic": true,
    "synthetic_data": {"height": 20, "width": 8, "train_per_class": 2, "val_per_class": 2, "test_per_class": 2},
    "train": {"epochs": 0}})");
  const CliRun t = cli("train g.genotype --config quick.json --depth 12 --channels 16 --out t", dir());
  ASSERT_EQ(t.rc, 0) << t.output;
  const auto report = nlohmann::json::parse(slurp(dir() / "t" / "report.json"));
  EXPECT_EQ(report["stacking"]["reduction_cells"].size(), 4u);
  EXPECT_EQ(report["stacking"]["depth"], 12);
  EXPECT_EQ(report["stacking"]["init_channels"], 16);
}

TEST_F(Cli, TrainRejectsOpSetMismatchAndBadGenotype) {
  spit(dir() / "g.genotype", serialize_genotype(uniform_genotype(OpSet::Nas1, OpKind::SepConv9)));
  EXPECT_EQ(cli("train g.genotype --config toy.json --op-set nas2 --out t", dir()).rc, 2);
  spit(dir() / "broken.genotype", "cellsearch-genotype v1\nop_set nas1\nnormal 2 warp_drive 0\n");
  const CliRun r = cli("train broken.genotype --config toy.json --out t", dir());
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.output.find("warp_drive"), std::string::npos) << r.output;
  EXPECT_EQ(cli("train --config toy.json --out t", dir()).rc, 2);
}

TEST_F(Cli, ParamsMatchesEnumerationAndGrowsWithWidth) {
  const Genotype g = uniform_genotype(OpSet::Nas1, OpKind::Identity);
  spit(dir() / "id.genotype", serialize_genotype(g));
  const CliRun r16 = cli("params id.genotype --depth 6 --channels 16", dir());
  ASSERT_EQ(r16.rc, 0) << r16.output;
  Rng rng(0);
  DiscreteNetwork<float> net({g, 6, 16, 12}, rng);
  EXPECT_EQ(last_total(r16.output), testing::enumerate_parameter_tensors(net));
  const CliRun r36 = cli("params id.genotype --depth 6 --channels 36", dir());
  ASSERT_EQ(r36.rc, 0);
  EXPECT_GT(last_total(r36.output), last_total(r16.output));
  EXPECT_NE(r16.output.find("total_k="), std::string::npos);
  spit(dir() / "junk.genotype", "hello\n");
  EXPECT_EQ(cli("params junk.genotype", dir()).rc, 2);
  EXPECT_EQ(cli("params missing.genotype", dir()).rc, 2);
}

TEST_F(Cli, FeaturesOfSilenceHaveIdenticalRows) {
  save_wav(WavClip{std::vector<float>(16000, 0.0f), 16000}, dir() / "silence.wav");
  const CliRun r = cli("features silence.wav out/silence.csv", dir());
  ASSERT_EQ(r.rc, 0) << r.output;
  std::istringstream csv(slurp(dir() / "out" / "silence.csv"));
  std::string first, line;
  std::getline(csv, first);
  std::size_t rows = 1;
  while (std::getline(csv, line)) {
    EXPECT_EQ(line, first);
    ++rows;
  }
  EXPECT_EQ(rows, 101u);
  ASSERT_EQ(cli("features silence.wav out/silence.bin", dir()).rc, 0);
  FeatureCache cache(dir() / "out" / "silence.bin");
  EXPECT_EQ(cache.get("silence.wav").size(), 101u * 40u);
}

TEST_F(Cli, FeaturesRejectBadWav) {
  spit(dir() / "bad.wav", "RIFX not a wave");
  const CliRun r = cli("features bad.wav out.csv", dir());
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.output.find("RIFF"), std::string::npos) << r.output;
  save_wav(WavClip{std::vector<float>(8000, 0.0f), 8000}, dir() / "8k.wav");
  EXPECT_EQ(cli("features 8k.wav out.csv", dir()).rc, 2);
  EXPECT_EQ(cli("features absent.wav out.csv", dir()).rc, 2);
}

TEST_F(Cli, EvalOfUntrainedModelIsNearChanceAndConfusionAddsUp) {
  spit(dir() / "four.json", R"({"synthetic": true,
    "synthetic_data": {"num_classes": 4, "height": 20, "width": 8, "train_per_class": 2, "val_per_class": 2,
                       "test_per_class": 50, "separation": 0.2},
    "network": {"depth": 2, "init_channels": 4},
    "train": {"epochs": 0}})");
  spit(dir() / "g.genotype", serialize_genotype(uniform_genotype(OpSet::Nas1, OpKind::SepConv5)));
  ASSERT_EQ(cli("train g.genotype --config four.json --out t", dir()).rc, 0);
  const CliRun r = cli("eval t/model.ckpt --config four.json", dir());
  ASSERT_EQ(r.rc, 0) << r.output;
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.output, m, std::regex("test_accuracy=([0-9.e-]+)")));
  EXPECT_NEAR(std::stod(m[1]), 0.25, 0.15) << r.output;
  const std::regex row("class(\\d)((?:\\s+\\d+){4})");
  std::size_t rows = 0;
  for (auto it = std::sregex_iterator(r.output.begin(), r.output.end(), row); it != std::sregex_iterator(); ++it) {
    std::istringstream nums((*it)[2].str());
    std::size_t v, sum = 0;
    while (nums >> v) sum += v;
    EXPECT_EQ(sum, 50u) << (*it)[0];
    ++rows;
  }
  EXPECT_EQ(rows, 4u) << r.output;
  EXPECT_EQ(cli("eval missing.ckpt --config four.json", dir()).rc, 2);
  EXPECT_EQ(cli("eval t/model.ckpt --config toy.json", dir()).rc, 2);  // 2 classes vs 4
}

}  // namespace
}  // namespace cellsearch
