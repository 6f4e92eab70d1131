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

// fedbag command-line runner.
//
//   fedbag run --config <path> [--scenario S] [--alpha A] [--task T] [--seed N] --out <dir>
//   fedbag synth --spec <path> --out <dir>
//   fedbag attention --checkpoint <path> --manifest <path> --out <file> [--split test]
//
// Exit codes: 0 success, 2 configuration error, 1 runtime error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fedbag/checkpoint.hpp"
#include "fedbag/data.hpp"
#include "fedbag/experiment.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

int cmd_run(const std::string& config_path, const std::optional<std::string>& scenario,
            const std::optional<double>& alpha, const std::optional<std::string>& task,
            const std::optional<std::uint64_t>& seed, const std::string& out) {
  fedbag::ExperimentConfig cfg;
  try {
    cfg = fedbag::validate_config(config_path);
    std::vector<std::string> problems;
    if (task) {
      try {
        cfg.task = fedbag::parse_task(*task);
        if (cfg.synth) cfg.synth->task = cfg.task;
      } catch (const std::exception& e) {
        problems.push_back(std::string("--task: ") + e.what());
      }
    }
    if (scenario) {
      cfg.scenarios = {*scenario};
      fedbag::check_scenario(*scenario, problems, "--scenario");
    }
    if (alpha) {
      if (!(*alpha >= 0.0)) problems.push_back("--alpha: alpha must be >= 0");
      cfg.alphas = {*alpha};
    }
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.out = out;
    if (!problems.empty()) throw fedbag::ConfigError(problems);
  } catch (const fedbag::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  try {
    fedbag::run(cfg, /*verbose=*/true);
    std::cerr << "[fedbag] wrote " << cfg.out.string() << "\n";
  } catch (const fedbag::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
  fedbag::SynthSpec spec;
  try {
    std::ifstream in(spec_path);
    if (!in) throw fedbag::ConfigError({spec_path + ": cannot read spec file"});
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw fedbag::ConfigError({spec_path + ": parse error: " + e.what()});
    }
    spec = fedbag::parse_synth_spec(j);
  } catch (const fedbag::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  try {
    const auto result = fedbag::generate_synthetic(spec);
    const auto manifest = fedbag::save_dataset(result.dataset, out);
    std::cerr << "[fedbag] wrote " << result.manifest.records.size() << " bags and " << manifest.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_attention(const std::string& checkpoint, const std::string& manifest, const std::string& out,
                  const std::string& split) {
  try {
    const auto ck = fedbag::load_checkpoint<double>(checkpoint);
    const auto ds = fedbag::load_dataset(manifest);
    std::vector<const fedbag::FeatureBag*> bags;
    if (split == "all") {
      for (auto sp : {fedbag::Split::kTrain, fedbag::Split::kVal, fedbag::Split::kTest}) {
        auto v = ds.pooled(sp);
        bags.insert(bags.end(), v.begin(), v.end());
      }
    } else {
      bags = ds.pooled(fedbag::parse_split(split));
    }
    fedbag::export_attention(ck.weights, bags, out);
    std::cerr << "[fedbag] wrote attention for " << bags.size() << " bags to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedbag: federated attention-MIL experiments on feature bags"};
  app.require_subcommand(1);

  std::string config_path, run_out;
  std::optional<std::string> scenario, task;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "train and evaluate the configured scenarios");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--scenario", scenario, "single_site[:<id>] | centralized | federated");
  run->add_option("--alpha", alpha, "noise level for federated runs");
  run->add_option("--task", task, "classification | survival");
  run->add_option("--seed", seed, "master seed");
  run->add_option("--out", run_out, "output directory");

  std::string spec_path, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-site cohort");
  synth->add_option("--spec", spec_path, "synthetic cohort spec (JSON)")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  std::string ckpt, manifest, att_out, split = "test";
  auto* att = app.add_subcommand("attention", "export per-instance attention scores");
  att->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  att->add_option("--manifest", manifest, "dataset manifest")->required();
  att->add_option("--out", att_out, "output CSV")->required();
  att->add_option("--split", split, "train | val | test | all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (*run) return cmd_run(config_path, scenario, alpha, task, seed, run_out);
  if (*synth) return cmd_synth(spec_path, synth_out);
  return cmd_attention(ckpt, manifest, att_out, split);
}
