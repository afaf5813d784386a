// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The kwsnas Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Runs the built binary end to end on a tiny toy dataset.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kwsnas/kwsnas.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kTiny = " --dataset toy --toy-classes 2 --toy-per-class 10 --batch-size 8 --pretrain-epochs 1";

int run(const std::string& args) {
  const std::string cmd = std::string(KWSNAS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream is(slurp(p));
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string t; std::getline(ss, t, sep);) out.push_back(t);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("kwsnas_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string out(const std::string& sub) const { return " --out " + (dir_ / sub).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("train" + out("a")), 1);                         // missing --arch
  EXPECT_EQ(run("search --beta 3" + out("a")), 1);               // beta outside the menu
  EXPECT_EQ(run("search --quant-bits 9" + out("a")), 1);
  EXPECT_EQ(run("search --seed nope" + out("a")), 1);
  EXPECT_EQ(run("cost --epochs 3 --arch x" + out("a")), 1);       // --epochs not used by cost
  EXPECT_EQ(run("eval --checkpoint x --split dev" + out("a")), 1);
  EXPECT_EQ(run("--help"), 0);
  std::ofstream(dir_ / "bad.cfg") << "beta = 5\n";
  EXPECT_EQ(run("search --config " + (dir_ / "bad.cfg").string() + out("a")), 1);
}

TEST_F(Cli, RuntimeFailuresExitWithTwo) {
  std::ofstream(dir_ / "broken.arch") << "not an architecture\n";
  EXPECT_EQ(run("cost --arch " + (dir_ / "broken.arch").string() + out("a")), 2);
  EXPECT_EQ(run("cost --arch " + (dir_ / "missing.arch").string() + out("a")), 2);
  EXPECT_EQ(run("eval --checkpoint " + (dir_ / "missing.ckpt").string() + out("a")), 2);
  EXPECT_EQ(run("features --dataset " + (dir_ / "nowhere").string() + out("a")), 2);
}

TEST_F(Cli, SearchTrainEvalPipeline) {
  ASSERT_EQ(run("search --seed 4 --epochs 2" + kTiny + out("s1")), 0);
  ASSERT_EQ(run("search --seed 4 --epochs 2" + kTiny + out("s2")), 0);
  for (const char* f : {"architecture.txt", "search_log.csv"}) {
    EXPECT_EQ(slurp(dir_ / "s1" / f), slurp(dir_ / "s2" / f)) << f;
  }
  EXPECT_TRUE(fs::exists(dir_ / "s1" / "supernet.ckpt"));
  const auto log = lines(dir_ / "s1" / "search_log.csv");
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0], "epoch,ce_train,ce_val,expected_ops,arch_loss,lr,per_layer_argmax");
  EXPECT_EQ(split(split(log[1]).back(), ';').size(), 12u);

  const std::string arch = " --arch " + (dir_ / "s1" / "architecture.txt").string();
  ASSERT_EQ(run("train --seed 4 --epochs 2" + kTiny + arch + out("t")), 0);
  const auto metrics = lines(dir_ / "t" / "metrics.csv");
  ASSERT_EQ(metrics.size(), 3u);
  EXPECT_EQ(metrics[0], "epoch,loss_train,acc_train,acc_val");
  const auto summary = lines(dir_ / "t" / "summary.csv");
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[0], "bits,acc_train,acc_val,acc_test,ops,weights,exempt_params,bytes,bytes_with_exempt");
  EXPECT_EQ(split(summary[1])[0], "8");
  EXPECT_TRUE(fs::exists(dir_ / "t" / "model.kwsq"));

  ASSERT_EQ(run("eval --checkpoint " + (dir_ / "t" / "model.ckpt").string() + kTiny + out("e")), 0);
  const auto conf = lines(dir_ / "e" / "confusion.csv");
  ASSERT_EQ(conf.size(), 3u);
  std::size_t total = 0;
  for (std::size_t r = 1; r < conf.size(); ++r) {
    const auto cells = split(conf[r]);
    ASSERT_EQ(cells.size(), 3u);
    std::size_t row = 0;
    for (std::size_t c = 1; c < cells.size(); ++c) row += std::stoul(cells[c]);
    EXPECT_EQ(row, 1u);  // 10 clips per class: 7 train, 2 validation, 1 test
    total += row;
  }
  const auto ev = lines(dir_ / "e" / "eval.csv");
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(split(ev[1])[1], std::to_string(total));

  // A 2-class model cannot be evaluated on a 3-class dataset.
  EXPECT_EQ(run("eval --checkpoint " + (dir_ / "t" / "model.ckpt").string() +
                " --dataset toy --toy-classes 3 --toy-per-class 10" + out("e2")),
            2);
}

TEST_F(Cli, TrainWithoutQuantizationReportsOff) {
  kwsnas::NetworkConfig cfg;
  cfg.base_channels = 8;
  cfg.num_classes = 2;
  std::ofstream(dir_ / "a.arch") << kwsnas::architecture_to_string(
      kwsnas::describe(cfg, std::vector<std::size_t>{1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
  ASSERT_EQ(run("train --quant-bits off --epochs 1" + kTiny + " --arch " + (dir_ / "a.arch").string() + out("t")), 0);
  const auto summary = lines(dir_ / "t" / "summary.csv");
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(split(summary[1])[0], "off");
}

TEST_F(Cli, CostScalesWithBits) {
  kwsnas::NetworkConfig cfg;
  const auto a = kwsnas::describe(cfg, std::vector<std::size_t>{3, 0, 5, 18, 0, 1, 7, 0, 0, 12, 2, 9});
  std::ofstream(dir_ / "a.arch") << kwsnas::architecture_to_string(a);
  const std::string arch = " --arch " + (dir_ / "a.arch").string();
  ASSERT_EQ(run("cost --quant-bits 1" + arch + out("c1")), 0);
  ASSERT_EQ(run("cost --quant-bits 8" + arch + out("c8")), 0);
  const auto r1 = split(lines(dir_ / "c1" / "cost.csv").at(1)), r8 = split(lines(dir_ / "c8" / "cost.csv").at(1));
  const auto c = kwsnas::model_cost(a);
  EXPECT_EQ(r1[1], std::to_string(c.ops));
  EXPECT_EQ(r1[2], std::to_string(c.weights));
  EXPECT_DOUBLE_EQ(std::stod(r8[4]) / std::stod(r1[4]), 8.0);
  EXPECT_DOUBLE_EQ(std::stod(r1[5]) - std::stod(r1[4]), 4.0 * static_cast<double>(c.exempt_params));
}

TEST_F(Cli, BitsweepRowsPerBitAndMethod) {
  kwsnas::NetworkConfig cfg;
  cfg.base_channels = 8;
  cfg.num_classes = 2;
  std::ofstream(dir_ / "a.arch") << kwsnas::architecture_to_string(
      kwsnas::describe(cfg, std::vector<std::size_t>{1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
  ASSERT_EQ(run("bitsweep --bits 1,4 --epochs 1" + kTiny + " --arch " + (dir_ / "a.arch").string() + out("b")), 0);
  const auto rows = lines(dir_ / "b" / "bitsweep.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "bits,method,accuracy,bytes");
  EXPECT_EQ(split(rows[1])[1], "ste");
  EXPECT_EQ(split(rows[2])[1], "post");
  EXPECT_EQ(split(rows[3])[0], "4");
  EXPECT_EQ(run("bitsweep --bits 0" + kTiny + " --arch " + (dir_ / "a.arch").string() + out("b")), 1);
}

TEST_F(Cli, FeaturesWritesCache) {
  ASSERT_EQ(run("features --num-mfcc 20" + kTiny + out("f")), 0);
  EXPECT_EQ(fs::file_size(dir_ / "f" / "features.f32"), 20u * 20 * 51 * 4);
  EXPECT_NE(slurp(dir_ / "f" / "features.manifest").find("num_mfcc 20\n"), std::string::npos);
}
