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

#pragma once

// Experiment runner: JSON configuration, the scenario × noise-level sweep,
// and the files a run leaves behind.
//
//   <out>/metrics.csv      one row per scenario (and alpha for federated rows)
//   <out>/loss_curve.csv   per-round train/validation losses
//   <out>/roc.csv | km.csv curves for external plotting
//   <out>/report.json      config echo, per-round logs, final metrics
//   <out>/models/*.ckpt    best checkpoint of every row

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbag/checkpoint.hpp"
#include "fedbag/data.hpp"
#include "fedbag/federation.hpp"
#include "fedbag/metrics.hpp"

namespace fedbag {

using nlohmann::json;

/// Configuration problems, all collected before any compute starts.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "invalid configuration:";
    for (const auto& p : v) s += "\n  " + p;
    return s;
  }
  std::vector<std::string> problems_;
};

inline const std::vector<double> kDefaultAlphas = {0.0, 0.001, 0.01, 0.1, 1.0};

struct ExperimentConfig {
  Task task = Task::kClassification;
  std::vector<std::string> scenarios = {"single_site", "centralized", "federated"};
  std::vector<double> alphas = kDefaultAlphas;
  std::optional<int> d_in;  // taken from the dataset when absent
  int d_proj = 512;
  int d_attn = 256;
  ForwardOptions forward;
  AdamConfig adam;
  double beta = kDefaultBeta;
  bool reset_moments = false;
  EarlyStopConfig early_stop;
  int max_rounds = 200;
  double sensitivity = 1.0;
  std::vector<double> report_epsilons = {0.5, 1.0};
  std::optional<std::filesystem::path> manifest;
  std::optional<SynthSpec> synth;
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";
  int threads = 1;
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

class FieldReader {
 public:
  explicit FieldReader(std::vector<std::string>& problems) : problems_(problems) {}

  template <typename T>
  void get(const json& obj, const char* key, const std::string& path, T& dst) {
    if (!obj.contains(key)) return;
    try {
      dst = obj.at(key).get<T>();
    } catch (const json::exception&) {
      problems_.push_back(path + "." + key + ": wrong type");
    }
  }

  void problem(std::string s) { problems_.push_back(std::move(s)); }

 private:
  std::vector<std::string>& problems_;
};

inline SynthSpec parse_synth(const json& j, Task task, FieldReader& rd) {
  SynthSpec s;
  s.task = task;
  const std::string p = "dataset.synth";
  rd.get(j, "cases_per_site", p, s.cases_per_site);
  rd.get(j, "class_proportions", p, s.class_proportions);
  rd.get(j, "censored_fraction", p, s.censored_fraction);
  rd.get(j, "d_in", p, s.d_in);
  rd.get(j, "bag_min", p, s.bag_min);
  rd.get(j, "bag_max", p, s.bag_max);
  rd.get(j, "slides_min", p, s.slides_min);
  rd.get(j, "slides_max", p, s.slides_max);
  rd.get(j, "signal_fraction", p, s.signal_fraction);
  rd.get(j, "signal_strength", p, s.signal_strength);
  rd.get(j, "noise_std", p, s.noise_std);
  rd.get(j, "site_shift", p, s.site_shift);
  rd.get(j, "site_offsets", p, s.site_offsets);
  rd.get(j, "site_scales", p, s.site_scales);
  rd.get(j, "base_hazard", p, s.base_hazard);
  rd.get(j, "risk_effect", p, s.risk_effect);
  rd.get(j, "survival_bins", p, s.survival_bins);
  rd.get(j, "seed", p, s.seed);
  if (j.contains("fractions")) {
    std::vector<double> f;
    rd.get(j, "fractions", p, f);
    if (f.size() == 3) s.fractions = {f[0], f[1], f[2]};
    else rd.problem(p + ".fractions: expected [train, val, test]");
  }
  try {
    validate(s);
  } catch (const InvalidArgument& e) {
    rd.problem(p + ": " + e.what());
  }
  return s;
}

}  // namespace detail

inline json synth_to_json(const SynthSpec& s) {
  return json{{"task", to_string(s.task)},
              {"cases_per_site", s.cases_per_site},
              {"class_proportions", s.class_proportions},
              {"censored_fraction", s.censored_fraction},
              {"d_in", s.d_in},
              {"bag_min", s.bag_min},
              {"bag_max", s.bag_max},
              {"slides_min", s.slides_min},
              {"slides_max", s.slides_max},
              {"signal_fraction", s.signal_fraction},
              {"signal_strength", s.signal_strength},
              {"noise_std", s.noise_std},
              {"site_shift", s.site_shift},
              {"site_offsets", s.site_offsets},
              {"site_scales", s.site_scales},
              {"base_hazard", s.base_hazard},
              {"risk_effect", s.risk_effect},
              {"survival_bins", s.survival_bins},
              {"fractions", {s.fractions.train, s.fractions.val, s.fractions.test}},
              {"seed", s.seed}};
}

/// Reads a synthetic-cohort spec file (as used by `fedbag synth`).
inline SynthSpec parse_synth_spec(const json& j) {
  std::vector<std::string> problems;
  detail::FieldReader rd(problems);
  Task task = Task::kClassification;
  try {
    if (j.contains("task")) task = parse_task(j.at("task").get<std::string>());
  } catch (const std::exception& e) {
    problems.push_back(std::string("task: ") + e.what());
  }
  SynthSpec s = detail::parse_synth(j, task, rd);
  if (!problems.empty()) throw ConfigError(problems);
  return s;
}

inline void check_scenario(const std::string& s, std::vector<std::string>& problems, const std::string& path) {
  if (s == "centralized" || s == "federated" || s == "single_site") return;
  if (s.rfind("single_site:", 0) == 0) {
    const std::string id = s.substr(12);
    if (!id.empty() && std::all_of(id.begin(), id.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      return;
  }
  problems.push_back(path + ": unknown scenario '" + s + "'");
}

/// Builds and validates a config from JSON text. Every violated invariant is
/// reported at once; syntax errors carry line and column.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ConfigError({source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": parse error: " + e.what()});
  }
  std::vector<std::string> problems;
  if (!j.is_object()) throw ConfigError({"config root must be a JSON object"});
  detail::FieldReader rd(problems);
  ExperimentConfig c;

  if (j.contains("task")) {
    try {
      c.task = parse_task(j.at("task").get<std::string>());
    } catch (const std::exception&) {
      problems.push_back("task: must be \"classification\" or \"survival\"");
    }
  }
  if (j.contains("scenario")) {
    std::string s;
    rd.get(j, "scenario", "", s);
    c.scenarios = {s};
  }
  rd.get(j, "scenarios", "", c.scenarios);
  rd.get(j, "alphas", "", c.alphas);
  if (j.contains("alpha")) {
    double a = 0;
    rd.get(j, "alpha", "", a);
    c.alphas = {a};
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("d_in")) {
      int d = 0;
      rd.get(m, "d_in", "model", d);
      c.d_in = d;
    }
    rd.get(m, "d_proj", "model", c.d_proj);
    rd.get(m, "d_attn", "model", c.d_attn);
    rd.get(m, "dropout", "model", c.forward.dropout);
    rd.get(m, "projection_relu", "model", c.forward.projection_relu);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    rd.get(o, "lr", "optimizer", c.adam.lr);
    rd.get(o, "weight_decay", "optimizer", c.adam.weight_decay);
    rd.get(o, "beta1", "optimizer", c.adam.beta1);
    rd.get(o, "beta2", "optimizer", c.adam.beta2);
    rd.get(o, "eps", "optimizer", c.adam.eps);
    rd.get(o, "beta", "optimizer", c.beta);
    rd.get(o, "reset_moments", "optimizer", c.reset_moments);
  }
  if (j.contains("early_stopping")) {
    const auto& e = j.at("early_stopping");
    rd.get(e, "min_epochs", "early_stopping", c.early_stop.min_epochs);
    rd.get(e, "patience", "early_stopping", c.early_stop.patience);
  }
  rd.get(j, "max_rounds", "", c.max_rounds);
  if (j.contains("privacy")) {
    rd.get(j.at("privacy"), "sensitivity", "privacy", c.sensitivity);
    rd.get(j.at("privacy"), "report_epsilons", "privacy", c.report_epsilons);
  }
  rd.get(j, "seed", "", c.seed);
  rd.get(j, "threads", "", c.threads);
  if (j.contains("out")) {
    std::string o;
    rd.get(j, "out", "", o);
    c.out = o;
  }

  if (!j.contains("dataset")) {
    problems.push_back("dataset: exactly one of dataset.manifest or dataset.synth is required");
  } else {
    const auto& d = j.at("dataset");
    const bool has_manifest = d.contains("manifest"), has_synth = d.contains("synth");
    if (has_manifest && has_synth) problems.push_back("dataset: manifest and synth are mutually exclusive");
    else if (!has_manifest && !has_synth) problems.push_back("dataset: one of manifest or synth is required");
    if (has_manifest) {
      std::string mp;
      rd.get(d, "manifest", "dataset", mp);
      c.manifest = mp;
    }
    if (has_synth) c.synth = detail::parse_synth(d.at("synth"), c.task, rd);
  }

  // invariants
  for (std::size_t i = 0; i < c.alphas.size(); ++i)
    if (!(c.alphas[i] >= 0.0)) problems.push_back("alphas[" + std::to_string(i) + "]: alpha must be >= 0");
  if (c.scenarios.empty()) problems.push_back("scenarios: at least one scenario is required");
  for (std::size_t i = 0; i < c.scenarios.size(); ++i)
    check_scenario(c.scenarios[i], problems, "scenarios[" + std::to_string(i) + "]");
  if (c.d_in && *c.d_in < 1) problems.push_back("model.d_in: must be >= 1");
  if (c.d_proj < 1) problems.push_back("model.d_proj: must be >= 1");
  if (c.d_attn < 1) problems.push_back("model.d_attn: must be >= 1");
  if (!(c.forward.dropout >= 0.0 && c.forward.dropout < 1.0)) problems.push_back("model.dropout: must lie in [0, 1)");
  if (!(c.adam.lr >= 0.0)) problems.push_back("optimizer.lr: must be >= 0");
  if (!(c.adam.weight_decay >= 0.0)) problems.push_back("optimizer.weight_decay: must be >= 0");
  if (!(c.beta >= 0.0 && c.beta <= 1.0)) problems.push_back("optimizer.beta: must lie in [0, 1]");
  if (c.early_stop.min_epochs < 0) problems.push_back("early_stopping.min_epochs: must be >= 0");
  if (c.early_stop.patience < 1) problems.push_back("early_stopping.patience: must be >= 1");
  if (c.max_rounds < 0) problems.push_back("max_rounds: must be >= 0");
  if (!(c.sensitivity > 0.0)) problems.push_back("privacy.sensitivity: must be > 0");
  for (double e : c.report_epsilons)
    if (!(e > 0.0)) problems.push_back("privacy.report_epsilons: values must be > 0");
  if (c.threads < 1) problems.push_back("threads: must be >= 1");

  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

/// Reads and validates a config file. A relative dataset.manifest is taken
/// relative to the config file's directory.
inline ExperimentConfig validate_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot read config file"});
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str(), path.string());
  if (c.manifest && c.manifest->is_relative()) c.manifest = path.parent_path() / *c.manifest;
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json j{{"task", to_string(c.task)},
         {"scenarios", c.scenarios},
         {"alphas", c.alphas},
         {"model",
          {{"d_proj", c.d_proj}, {"d_attn", c.d_attn}, {"dropout", c.forward.dropout},
           {"projection_relu", c.forward.projection_relu}}},
         {"optimizer",
          {{"lr", c.adam.lr}, {"weight_decay", c.adam.weight_decay}, {"beta1", c.adam.beta1},
           {"beta2", c.adam.beta2}, {"eps", c.adam.eps}, {"beta", c.beta}, {"reset_moments", c.reset_moments}}},
         {"early_stopping", {{"min_epochs", c.early_stop.min_epochs}, {"patience", c.early_stop.patience}}},
         {"max_rounds", c.max_rounds},
         {"privacy", {{"sensitivity", c.sensitivity}, {"report_epsilons", c.report_epsilons}}},
         {"seed", c.seed},
         {"threads", c.threads}};
  if (c.d_in) j["model"]["d_in"] = *c.d_in;
  if (c.manifest) j["dataset"] = {{"manifest", c.manifest->string()}};
  if (c.synth) j["dataset"] = {{"synth", synth_to_json(*c.synth)}};
  return j;
}

// ---------------------------------------------------------------------------
// Running

struct ResultRow {
  std::string scenario;         // single_site:<id> | centralized | federated
  std::optional<double> alpha;  // federated rows only
  TrainResult training;
  std::optional<ClassificationReport> classification;
  std::optional<SurvivalReport> survival;
  std::vector<double> test_scores;  // positive-class probabilities or risks
};

struct RunReport {
  ExperimentConfig config;
  std::vector<ResultRow> rows;
};

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline std::string row_label(const ResultRow& r) {
  return r.alpha ? r.scenario + "_alpha" + format_number(*r.alpha) : r.scenario;
}

inline TrainConfig make_train_config(const ExperimentConfig& c, const Dataset& ds, double alpha) {
  TrainConfig t;
  t.task = c.task;
  t.dims = {c.d_in.value_or(ds.d_in), c.d_proj, c.d_attn, ds.n_out};
  t.forward = c.forward;
  t.adam = c.adam;
  t.beta = c.beta;
  t.early_stop = c.early_stop;
  t.max_rounds = c.max_rounds;
  t.privacy = {alpha, c.sensitivity, c.report_epsilons};
  t.seed = c.seed;
  t.reset_moments = c.reset_moments;
  t.threads = c.threads;
  return t;
}

/// Loads or generates the configured dataset.
inline Dataset materialize_dataset(const ExperimentConfig& c) {
  Dataset ds;
  if (c.manifest) ds = load_dataset(*c.manifest);
  else ds = generate_synthetic(*c.synth).dataset;
  if (ds.task != c.task) throw ConfigError({"task: config task does not match the dataset's task"});
  if (c.d_in && *c.d_in != ds.d_in) throw ConfigError({"model.d_in: does not match the dataset's feature width"});
  return ds;
}

/// Evaluates a trained model on the pooled test split.
inline void evaluate_row(ResultRow& row, const Dataset& ds, const TrainConfig& tc) {
  const auto test = ds.pooled(Split::kTest);
  require(!test.empty(), "evaluate: empty test split");
  if (ds.task == Task::kClassification) {
    const MatrixD probs = predict_probabilities(row.training.weights, test, tc.forward);
    std::vector<int> labels;
    for (const auto* b : test) labels.push_back(b->class_label);
    row.classification = classification_report(probs, labels);
    if (probs.cols() == 2) row.test_scores = column(probs, 1);
  } else {
    row.test_scores = predict_risks(row.training.weights, test, tc.forward);
    std::vector<double> times;
    std::vector<int> cens;
    for (const auto* b : test) {
      times.push_back(b->survival.time);
      cens.push_back(b->survival.censored);
    }
    row.survival = survival_report(row.test_scores, times, cens);
  }
}

struct PlannedRow {
  std::string scenario;
  std::optional<int> site;
  std::optional<double> alpha;
};

/// Expands scenarios: single_site → every site; federated → one row per alpha.
inline std::vector<PlannedRow> plan_rows(const ExperimentConfig& c, int n_sites) {
  std::vector<PlannedRow> out;
  for (const auto& s : c.scenarios) {
    if (s == "single_site") {
      for (int i = 0; i < n_sites; ++i) out.push_back({"single_site:" + std::to_string(i), i, std::nullopt});
    } else if (s.rfind("single_site:", 0) == 0) {
      const int id = std::stoi(s.substr(12));
      if (id >= n_sites) throw ConfigError({"scenario " + s + ": dataset has only " + std::to_string(n_sites) + " sites"});
      out.push_back({s, id, std::nullopt});
    } else if (s == "centralized") {
      out.push_back({s, std::nullopt, std::nullopt});
    } else {
      for (double a : c.alphas) out.push_back({s, std::nullopt, a});
    }
  }
  return out;
}

inline RunReport run_experiment(const ExperimentConfig& c, const Dataset& ds, bool verbose = false) {
  RunReport rep;
  rep.config = c;
  for (const auto& plan : plan_rows(c, ds.n_sites())) {
    ResultRow row;
    row.scenario = plan.scenario;
    row.alpha = plan.alpha;
    const TrainConfig tc = make_train_config(c, ds, plan.alpha.value_or(0.0));
    if (verbose) std::cerr << "[fedbag] training " << row_label(row) << "\n";
    if (plan.site) row.training = train_single_site(ds, *plan.site, tc);
    else if (plan.scenario == "centralized") row.training = train_centralized(ds, tc);
    else row.training = train_federated(ds, tc);
    evaluate_row(row, ds, tc);
    if (verbose)
      std::cerr << "[fedbag]   rounds=" << row.training.history.size() << " best_round=" << row.training.best_round
                << " val_loss=" << row.training.best_val_loss << "\n";
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

inline std::string metrics_csv(const RunReport& rep) {
  std::ostringstream os;
  const bool cls = rep.config.task == Task::kClassification;
  os << (cls ? "scenario,alpha,auc,auc_lo,auc_hi,error,bacc,f1,map,kappa\n" : "scenario,alpha,c_index,logrank_p\n");
  for (const auto& r : rep.rows) {
    os << r.scenario << ',' << (r.alpha ? format_number(*r.alpha) : "");
    if (cls) {
      const auto& m = *r.classification;
      for (double v : {m.auc, m.auc_lo, m.auc_hi, m.error, m.balanced_accuracy, m.f1, m.map, m.kappa})
        os << ',' << format_number(v);
    } else {
      os << ',' << format_number(r.survival->c_index) << ',' << format_number(r.survival->log_rank.p_value);
    }
    os << '\n';
  }
  return os.str();
}

inline std::string loss_curve_csv(const RunReport& rep) {
  std::ostringstream os;
  os << "row,round,site,train_loss,val_loss\n";
  for (const auto& r : rep.rows)
    for (const auto& log : r.training.history)
      for (std::size_t s = 0; s < log.site_train_loss.size(); ++s)
        os << row_label(r) << ',' << log.round << ',' << s << ',' << format_number(log.site_train_loss[s]) << ','
           << format_number(log.val_loss) << '\n';
  return os.str();
}

inline json round_log_json(const RoundLog& log) {
  json noise = json::array();
  for (const auto& sn : log.noise) {
    json tensors = json::array();
    for (const auto& t : sn.tensors) tensors.push_back({{"name", t.name}, {"eta", t.eta}, {"sigma", t.sigma}});
    noise.push_back({{"site", sn.site_id}, {"tensors", tensors}});
  }
  return {{"round", log.round}, {"site_train_loss", log.site_train_loss}, {"val_loss", log.val_loss},
          {"noise", noise}, {"seconds", log.seconds}};
}

inline json report_json(const RunReport& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows) {
    json row{{"scenario", r.scenario}, {"best_round", r.training.best_round},
             {"best_val_loss", r.training.best_val_loss}, {"stopped_early", r.training.stopped_early}};
    row["alpha"] = r.alpha ? json(*r.alpha) : json(nullptr);
    if (r.classification) {
      const auto& m = *r.classification;
      row["metrics"] = {{"auc", m.auc}, {"auc_ci", {m.auc_lo, m.auc_hi}}, {"error", m.error},
                        {"balanced_accuracy", m.balanced_accuracy}, {"f1", m.f1}, {"map", m.map},
                        {"kappa", m.kappa}, {"sensitivity", m.sensitivity}};
    }
    if (r.survival) {
      row["metrics"] = {{"c_index", r.survival->c_index}, {"logrank_statistic", r.survival->log_rank.statistic},
                        {"logrank_p", r.survival->log_rank.p_value}};
    }
    if (r.alpha && *r.alpha > 0.0 && !r.training.history.empty()) {
      // δ lower bounds implied by the last round's noise, per tensor and ε
      json bounds = json::array();
      for (double eps : rep.config.report_epsilons) {
        json per = json::object();
        for (const auto& t : r.training.history.back().noise.front().tensors)
          per[t.name] = t.sigma > 0 ? json(delta_bound(eps, t.sigma, rep.config.sensitivity)) : json(nullptr);
        bounds.push_back({{"epsilon", eps}, {"delta_min", per}});
      }
      row["privacy"] = bounds;
    }
    json hist = json::array();
    for (const auto& log : r.training.history) hist.push_back(round_log_json(log));
    row["history"] = hist;
    rows.push_back(row);
  }
  return {{"config", config_to_json(rep.config)}, {"rows", rows}};
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  auto out = io::open_out(p);
  out << s;
}

inline void write_outputs(const RunReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "metrics.csv", metrics_csv(rep));
  write_text(dir / "loss_curve.csv", loss_curve_csv(rep));
  write_text(dir / "report.json", report_json(rep).dump(2) + "\n");
  std::ostringstream curves;
  if (rep.config.task == Task::kSurvival) {
    curves << "row,group,time,survival,at_risk,events\n";
    for (const auto& r : rep.rows)
      for (int g = 0; g < 2; ++g)
        for (const auto& st : g == 0 ? r.survival->km_low : r.survival->km_high)
          curves << row_label(r) << ',' << (g ? "high" : "low") << ',' << format_number(st.time) << ','
                 << format_number(st.survival) << ',' << st.at_risk << ',' << st.events << '\n';
    write_text(dir / "km.csv", curves.str());
  } else {
    curves << "row,score\n";
    for (const auto& r : rep.rows)
      for (double s : r.test_scores) curves << row_label(r) << ',' << format_number(s) << '\n';
    write_text(dir / "roc.csv", curves.str());
  }
  for (const auto& r : rep.rows) {
    std::string name = row_label(r);
    std::replace(name.begin(), name.end(), ':', '_');
    save_checkpoint(dir / "models" / (name + ".ckpt"), r.training.weights);
  }
}

/// Full pipeline for one config: dataset, sweep, files.
inline RunReport run(const ExperimentConfig& c, bool verbose = false) {
  const Dataset ds = materialize_dataset(c);
  RunReport rep = run_experiment(c, ds, verbose);
  write_outputs(rep, c.out);
  return rep;
}

// ---------------------------------------------------------------------------
// Attention export

/// Per-bag rank normalisation: (#strictly below + (#ties - 1)/2) / (M - 1).
/// A single instance or a fully tied bag maps to 0.5.
inline std::vector<double> percentile_normalize(std::span<const double> scores) {
  const std::size_t M = scores.size();
  std::vector<double> out(M, 0.5);
  if (M < 2) return out;
  const auto ranks = detail::midranks(scores);
  for (std::size_t i = 0; i < M; ++i) out[i] = (ranks[i] - 1.0) / static_cast<double>(M - 1);
  return out;
}

/// Writes `bag_id,instance,attention,percentile` rows for every bag.
inline void export_attention(const Weights& w, std::span<const FeatureBag* const> bags,
                             const std::filesystem::path& out_path, const ForwardOptions& opt = {}) {
  if (bags.empty()) throw InvalidArgument("export_attention: empty bag set");
  std::ostringstream os;
  os << "bag_id,instance,attention,percentile\n";
  for (const FeatureBag* b : bags) {
    const auto tr = forward_bag(w, b->features, Mode::kEval, nullptr, opt);
    std::vector<double> a(tr.A.data(), tr.A.data() + tr.A.size());
    const auto pct = percentile_normalize(a);
    for (std::size_t m = 0; m < a.size(); ++m)
      os << b->bag_id << ',' << m << ',' << std::setprecision(17) << a[m] << ',' << pct[m] << '\n';
  }
  write_text(out_path, os.str());
}

}  // namespace fedbag
