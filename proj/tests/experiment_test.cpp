// Copyright 2026 The fedbag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedbag/experiment.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "fedbag/checkpoint.hpp"

namespace fedbag {
namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny_config(const std::string& task, const std::string& extra = "") {
  return R"({
    "task": ")" + task + R"(",
    "alphas": [0, 0.1],
    "model": {"d_proj": 6, "d_attn": 4},
    "optimizer": {"lr": 0.01},
    "max_rounds": 4,
    "seed": 3,)" + extra + R"(
    "dataset": {"synth": {"cases_per_site": [20, 30], "d_in": 6, "bag_min": 3, "bag_max": 6,
                          "signal_strength": 3.0, "seed": 5}}
  })";
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, Defaults) {
  const auto c = parse_config(R"({"dataset": {"manifest": "m.csv"}})");
  EXPECT_EQ(c.task, Task::kClassification);
  EXPECT_DOUBLE_EQ(c.adam.lr, 2e-4);
  EXPECT_DOUBLE_EQ(c.adam.weight_decay, 1e-5);
  EXPECT_DOUBLE_EQ(c.beta, 0.15);
  EXPECT_EQ(c.early_stop.min_epochs, 35);
  EXPECT_EQ(c.early_stop.patience, 20);
  EXPECT_EQ(c.alphas, (std::vector<double>{0.0, 0.001, 0.01, 0.1, 1.0}));
  EXPECT_EQ(c.d_proj, 512);
  EXPECT_EQ(c.d_attn, 256);
  EXPECT_DOUBLE_EQ(c.forward.dropout, 0.25);
}

TEST(Config, NegativeAlphaNamed) {
  const auto msg = config_error(R"({"alphas": [0.1, -1], "dataset": {"manifest": "m.csv"}})");
  EXPECT_NE(msg.find("alphas[1]"), std::string::npos) << msg;
}

TEST(Config, ConflictingSources) {
  const auto msg = config_error(R"({"dataset": {"manifest": "m.csv", "synth": {}}})");
  EXPECT_NE(msg.find("mutually exclusive"), std::string::npos) << msg;
  EXPECT_NE(config_error("{}").find("dataset"), std::string::npos);
}

TEST(Config, AllProblemsReportedTogether) {
  const auto msg = config_error(
      R"({"alpha": -2, "scenario": "bogus", "optimizer": {"lr": "fast"}, "model": {"dropout": 1.5},
          "dataset": {"manifest": "m.csv"}})");
  EXPECT_NE(msg.find("alphas[0]"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown scenario 'bogus'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("optimizer.lr: wrong type"), std::string::npos) << msg;
  EXPECT_NE(msg.find("model.dropout"), std::string::npos) << msg;
}

TEST(Config, ParseErrorHasLineAndColumn) {
  const auto msg = config_error("{\n  \"task\": \"survival\",\n  oops\n}");
  EXPECT_NE(msg.find("<config>:3:"), std::string::npos) << msg;
}

TEST(Config, SynthSpecValidated) {
  const auto msg = config_error(R"({"dataset": {"synth": {"class_proportions": [0.5, 0.7]}}})");
  EXPECT_NE(msg.find("dataset.synth"), std::string::npos) << msg;
}

TEST(Config, JsonEchoRoundTrips) {
  const auto c = parse_config(tiny_config("survival"));
  const auto again = parse_config(config_to_json(c).dump());
  EXPECT_EQ(config_to_json(again), config_to_json(c));
}

TEST(Plan, RowExpansion) {
  auto c = parse_config(tiny_config("classification"));
  const auto rows = plan_rows(c, 3);
  ASSERT_EQ(rows.size(), 3u + 1u + 2u);
  EXPECT_EQ(rows[0].scenario, "single_site:0");
  EXPECT_EQ(rows[3].scenario, "centralized");
  EXPECT_EQ(*rows[5].alpha, 0.1);
  c.scenarios = {"single_site:7"};
  EXPECT_THROW(plan_rows(c, 3), ConfigError);
}

TEST(Percentile, WorkedExamples) {
  EXPECT_EQ(percentile_normalize(std::vector<double>{0.1, 0.5, 0.9}), (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(percentile_normalize(std::vector<double>{0.2, 0.2, 0.2}), (std::vector<double>{0.5, 0.5, 0.5}));
  EXPECT_EQ(percentile_normalize(std::vector<double>{0.7}), (std::vector<double>{0.5}));
  EXPECT_EQ(percentile_normalize(std::vector<double>{0.9, 0.1, 0.1, 0.5}),
            (std::vector<double>{1.0, 1.0 / 6, 1.0 / 6, 2.0 / 3}));
}

TEST(Run, ClassificationOutputs) {
  const fs::path out = fs::temp_directory_path() / "fedbag_exp_cls";
  fs::remove_all(out);
  auto c = parse_config(tiny_config("classification"));
  c.out = out;
  const auto rep = run(c);
  ASSERT_EQ(rep.rows.size(), 2u + 1u + 2u);
  const auto csv = read_file(out / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scenario,alpha,auc,auc_lo,auc_hi,error,bacc,f1,map,kappa");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_NE(csv.find("\nfederated,0.1,"), std::string::npos);
  for (const char* f : {"loss_curve.csv", "report.json", "roc.csv", "models/centralized.ckpt",
                        "models/single_site_1.ckpt", "models/federated_alpha0.1.ckpt"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto report = nlohmann::json::parse(read_file(out / "report.json"));
  EXPECT_EQ(report["rows"].size(), 5u);
  EXPECT_TRUE(report["rows"][4].contains("privacy"));
  EXPECT_EQ(load_checkpoint<double>(out / "models/centralized.ckpt").weights, rep.rows[2].training.weights);
}

TEST(Run, SurvivalColumns) {
  const fs::path out = fs::temp_directory_path() / "fedbag_exp_surv";
  fs::remove_all(out);
  auto c = parse_config(tiny_config("survival", R"( "scenarios": ["centralized", "federated"],)"));
  c.out = out;
  run(c);
  const auto csv = read_file(out / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scenario,alpha,c_index,logrank_p");
  EXPECT_TRUE(fs::exists(out / "km.csv"));
}

TEST(Run, Reproducible) {
  auto c = parse_config(tiny_config("survival", R"( "scenarios": ["federated"], "threads": 1,)"));
  const fs::path a = fs::temp_directory_path() / "fedbag_exp_a", b = fs::temp_directory_path() / "fedbag_exp_b";
  fs::remove_all(a);
  fs::remove_all(b);
  c.out = a;
  run(c);
  c.out = b;
  c.threads = 2;
  run(c);
  EXPECT_EQ(read_file(a / "metrics.csv"), read_file(b / "metrics.csv"));
  EXPECT_EQ(read_file(a / "loss_curve.csv"), read_file(b / "loss_curve.csv"));
  EXPECT_EQ(read_file(a / "models/federated_alpha0.1.ckpt"), read_file(b / "models/federated_alpha0.1.ckpt"));
}

TEST(Run, TaskMismatchWithManifest) {
  const fs::path dir = fs::temp_directory_path() / "fedbag_exp_manifest";
  fs::remove_all(dir);
  SynthSpec s;
  s.cases_per_site = {12};
  save_dataset(generate_synthetic(s).dataset, dir);
  ExperimentConfig c;
  c.task = Task::kSurvival;
  c.manifest = dir / "manifest.csv";
  EXPECT_THROW(materialize_dataset(c), ConfigError);
}

TEST(Attention, ExportSumsToOne) {
  SynthSpec s;
  s.cases_per_site = {15};
  s.d_in = 5;
  const auto ds = generate_synthetic(s).dataset;
  const auto w = init_weights<double>({5, 4, 3, 2}, 1);
  const fs::path out = fs::temp_directory_path() / "fedbag_attention.csv";
  const auto bags = ds.pooled(Split::kTrain);
  export_attention(w, bags, out);
  std::ifstream in(out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bag_id,instance,attention,percentile");
  std::map<std::string, double> sums;
  std::map<std::string, int> rows;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string id, inst, att, pct;
    std::getline(ss, id, ',');
    std::getline(ss, inst, ',');
    std::getline(ss, att, ',');
    std::getline(ss, pct, ',');
    sums[id] += std::stod(att);
    ++rows[id];
    EXPECT_GE(std::stod(pct), 0.0);
    EXPECT_LE(std::stod(pct), 1.0);
  }
  ASSERT_EQ(sums.size(), bags.size());
  for (const auto* b : bags) {
    EXPECT_NEAR(sums[b->bag_id], 1.0, 1e-9);
    EXPECT_EQ(rows[b->bag_id], b->instances());
  }
  EXPECT_THROW(export_attention(w, {}, out), InvalidArgument);
}

}  // namespace
}  // namespace fedbag
