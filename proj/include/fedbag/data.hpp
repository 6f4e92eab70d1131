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

// Feature bags, their on-disk formats, multi-site datasets and the
// synthetic cohort generator.
//
// Bag file:  "FBAG1" | u32 M | u32 d_in | M·d_in f32, little-endian, row-major.
// Manifest:  CSV `bag_id,site_id,split,task,label,censorship,time,path` with
//            paths relative to the manifest; survival cut points live in a
//            sidecar `<stem>.cuts.json` holding {"cuts":[t1,...]}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbag/binary_io.hpp"
#include "fedbag/common.hpp"
#include "fedbag/loss.hpp"
#include "fedbag/rng.hpp"

namespace fedbag {

enum class Task { kClassification, kSurvival };
enum class Split { kTrain, kVal, kTest };

inline std::string to_string(Task t) { return t == Task::kClassification ? "classification" : "survival"; }
inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    default: return "test";
  }
}
inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "survival") return Task::kSurvival;
  throw InvalidArgument("unknown task '" + s + "'");
}
inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw InvalidArgument("unknown split '" + s + "'");
}

struct FeatureBag {
  std::string bag_id;
  int site_id = 0;
  MatrixF features;  // M × d_in
  int class_label = 0;
  SurvivalLabel survival;

  Eigen::Index instances() const { return features.rows(); }
};

// ---------------------------------------------------------------------------
// Bag files

inline constexpr char kBagMagic[5] = {'F', 'B', 'A', 'G', '1'};

inline void save_bag(const MatrixF& features, const std::filesystem::path& path) {
  require(features.rows() >= 1, "save_bag: empty bag");
  auto out = io::open_out(path);
  out.write(kBagMagic, sizeof(kBagMagic));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.rows()));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index i = 0; i < features.size(); ++i) io::put_le<float>(out, features.data()[i]);
  if (!out) throw Error("save_bag: write failed: " + path.string());
}

inline MatrixF load_bag(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  char magic[5];
  if (!in.read(magic, 5) || !std::equal(magic, magic + 5, kBagMagic))
    throw FormatError("bad bag header (magic) in " + path.string());
  std::uint32_t m = 0, d = 0;
  if (!io::get_le(in, m) || !io::get_le(in, d)) throw FormatError("truncated bag header in " + path.string());
  if (m == 0 || d == 0) throw FormatError("bag header declares an empty matrix in " + path.string());
  const auto expected = std::uintmax_t{5 + 8} + std::uintmax_t{m} * d * 4;
  if (std::filesystem::file_size(path) != expected)
    throw FormatError("bag header/payload size mismatch in " + path.string());
  MatrixF x(m, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) io::get_le(in, x.data()[i]);
  if (!x.allFinite()) throw NonFiniteError("bag payload contains NaN/Inf in " + path.string());
  return x;
}

/// A patient's bag is the row-wise concatenation of all its slides.
inline MatrixF concatenate_slides(const std::vector<MatrixF>& slides) {
  require(!slides.empty(), "concatenate_slides: no slides");
  Eigen::Index rows = 0;
  for (const auto& s : slides) {
    require(s.cols() == slides.front().cols(), "concatenate_slides: slides differ in feature width");
    rows += s.rows();
  }
  MatrixF out(rows, slides.front().cols());
  Eigen::Index r = 0;
  for (const auto& s : slides) {
    out.middleRows(r, s.rows()) = s;
    r += s.rows();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Survival discretisation

/// Quantile by linear interpolation between order statistics (position q·(n-1)).
inline double quantile_linear(std::vector<double> v, double q) {
  require(!v.empty(), "quantile: empty input");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Discretization {
  std::vector<double> cuts;  // t_1..t_{R-1}
  std::vector<int> bins;
};

/// Bin r holds times in [t_r, t_{r+1}) with t_0 = 0 and t_R = ∞.
inline int assign_bin(double time, const std::vector<double>& cuts) {
  return static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), time) - cuts.begin());
}

inline std::vector<double> survival_cuts(const std::vector<double>& times, const std::vector<int>& censored,
                                         int R = 4) {
  require(times.size() == censored.size(), "discretize_survival: times/censorship length mismatch");
  require(R >= 2, "discretize_survival: need at least two bins");
  std::vector<double> events;
  for (std::size_t i = 0; i < times.size(); ++i) {
    require(times[i] >= 0.0, "discretize_survival: negative follow-up time");
    if (censored[i] == 0) events.push_back(times[i]);
  }
  if (events.size() < static_cast<std::size_t>(R))
    throw InvalidArgument("discretize_survival: fewer uncensored cases than bins");
  std::vector<double> cuts;
  for (int r = 1; r < R; ++r) cuts.push_back(quantile_linear(events, static_cast<double>(r) / R));
  for (std::size_t r = 1; r < cuts.size(); ++r)
    if (!(cuts[r] > cuts[r - 1])) throw InvalidArgument("discretize_survival: non-increasing cut points");
  if (!(cuts.front() > 0.0)) throw InvalidArgument("discretize_survival: non-increasing cut points");
  return cuts;
}

inline Discretization discretize_survival(const std::vector<double>& times, const std::vector<int>& censored,
                                          int R = 4) {
  Discretization d;
  d.cuts = survival_cuts(times, censored, R);
  for (double t : times) d.bins.push_back(assign_bin(t, d.cuts));
  return d;
}

// ---------------------------------------------------------------------------
// Stratified splitting

struct SplitFractions {
  double train = 0.7, val = 0.15, test = 0.15;
};

/// One bag's view for splitting. Bags sharing a patient_id are kept together;
/// the patient's stratum is taken from its first bag.
struct SplitCase {
  std::string patient_id;
  int site_id = 0;
  int stratum = 0;
};

/// Allocation of n items by largest remainder; ties go to train, then val.
inline std::array<int, 3> allocate_counts(int n, const SplitFractions& f) {
  const std::array<double, 3> target = {f.train * n, f.val * n, f.test * n};
  std::array<int, 3> out{};
  int used = 0;
  for (int k = 0; k < 3; ++k) {
    out[k] = static_cast<int>(std::floor(target[k] + 1e-9));
    used += out[k];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return (target[a] - out[a]) > (target[b] - out[b]) + 1e-12; });
  for (int k = 0; used < n; k = (k + 1) % 3, ++used) ++out[order[k]];
  return out;
}

inline std::vector<Split> stratified_split(const std::vector<SplitCase>& cases, int n_sites,
                                           const SplitFractions& fractions, std::uint64_t seed) {
  const double total = fractions.train + fractions.val + fractions.test;
  require(std::abs(total - 1.0) < 1e-9 && fractions.train >= 0 && fractions.val >= 0 && fractions.test >= 0,
          "stratified_split: fractions must be non-negative and sum to 1");
  // patients grouped by (site, stratum), in first-appearance order
  std::map<std::string, std::size_t> first_index;
  std::map<std::pair<int, int>, std::vector<std::string>> groups;
  std::vector<int> site_count(static_cast<std::size_t>(std::max(n_sites, 0)), 0);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    require(c.site_id >= 0 && c.site_id < n_sites, "stratified_split: site id out of range");
    ++site_count[static_cast<std::size_t>(c.site_id)];
    if (first_index.emplace(c.patient_id, i).second) groups[{c.site_id, c.stratum}].push_back(c.patient_id);
  }
  for (int s = 0; s < n_sites; ++s)
    if (site_count[static_cast<std::size_t>(s)] == 0)
      throw InvalidArgument("stratified_split: site " + std::to_string(s) + " has no cases");

  std::map<std::string, Split> assignment;
  for (auto& [key, patients] : groups) {
    Engine eng = make_engine(seed, "split", {static_cast<std::uint64_t>(key.first),
                                             static_cast<std::uint64_t>(key.second + 1000003)});
    std::shuffle(patients.begin(), patients.end(), eng);
    const auto counts = allocate_counts(static_cast<int>(patients.size()), fractions);
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s)
      for (int j = 0; j < counts[static_cast<std::size_t>(s)]; ++j) assignment[patients[k++]] = static_cast<Split>(s);
  }
  std::vector<Split> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(assignment.at(c.patient_id));
  return out;
}

// ---------------------------------------------------------------------------
// Datasets and manifests

struct ManifestRecord {
  std::string bag_id;
  int site_id = 0;
  Split split = Split::kTrain;
  Task task = Task::kClassification;
  int label = 0;  // class index or survival bin
  int censorship = 0;
  double time = 0.0;
  std::string path;  // relative to the manifest directory
};

struct DatasetManifest {
  Task task = Task::kClassification;
  std::vector<ManifestRecord> records;
  std::vector<double> cuts;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

struct SiteData {
  std::vector<FeatureBag> train, val, test;
};

struct Dataset {
  Task task = Task::kClassification;
  int n_out = 2;  // classes, or survival bins R
  int d_in = 0;
  std::vector<SiteData> sites;
  std::vector<double> cuts;

  int n_sites() const { return static_cast<int>(sites.size()); }

  std::vector<const FeatureBag*> pooled(Split split) const {
    std::vector<const FeatureBag*> out;
    for (const auto& s : sites) {
      const auto& v = split == Split::kTrain ? s.train : split == Split::kVal ? s.val : s.test;
      for (const auto& b : v) out.push_back(&b);
    }
    return out;
  }
};

inline std::filesystem::path cuts_sidecar_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".cuts.json");
  return p;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline constexpr const char* kManifestHeader = "bag_id,site_id,split,task,label,censorship,time,path";

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  auto out = io::open_out(path);
  out << kManifestHeader << '\n';
  for (const auto& r : m.records) {
    require(r.bag_id.find(',') == std::string::npos && r.path.find(',') == std::string::npos,
            "write_manifest: ids and paths must not contain commas");
    out << r.bag_id << ',' << r.site_id << ',' << to_string(r.split) << ',' << to_string(r.task) << ','
        << r.label << ',';
    if (r.task == Task::kSurvival) out << r.censorship << ',' << detail::format_double(r.time);
    else out << ',';
    out << ',' << r.path << '\n';
  }
  if (m.task == Task::kSurvival) {
    auto side = io::open_out(cuts_sidecar_path(path));
    side << nlohmann::json{{"cuts", m.cuts}}.dump() << '\n';
  }
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw ManifestError("manifest header mismatch in " + path.string());
  DatasetManifest m;
  bool first = true;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 8)
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": expected 8 columns");
    ManifestRecord r;
    try {
      r.bag_id = cells[0];
      r.site_id = std::stoi(cells[1]);
      r.split = parse_split(cells[2]);
      r.task = parse_task(cells[3]);
      r.label = std::stoi(cells[4]);
      if (r.task == Task::kSurvival) {
        r.censorship = std::stoi(cells[5]);
        r.time = std::stod(cells[6]);
      }
      r.path = cells[7];
    } catch (const std::exception& e) {
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (first) m.task = r.task;
    else if (r.task != m.task) throw ManifestError(path.string() + ": mixed tasks in one manifest");
    first = false;
    m.records.push_back(std::move(r));
  }
  if (m.task == Task::kSurvival) {
    const auto side = cuts_sidecar_path(path);
    auto sin = io::open_in(side);
    try {
      m.cuts = nlohmann::json::parse(sin).at("cuts").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError("bad cut-point sidecar " + side.string() + ": " + e.what());
    }
  }
  return m;
}

/// Checks manifest invariants; every problem is collected into one error.
inline void validate_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir) {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  std::vector<std::string> missing;
  for (const auto& r : m.records) {
    if (!seen.insert(r.bag_id).second) problems.push_back("duplicate bag_id " + r.bag_id);
    if (r.site_id < 0) problems.push_back("negative site_id for " + r.bag_id);
    if (r.label < 0) problems.push_back("negative label for " + r.bag_id);
    if (r.task == Task::kSurvival) {
      if (r.censorship != 0 && r.censorship != 1) problems.push_back("censorship not 0/1 for " + r.bag_id);
      if (!(r.time >= 0.0)) problems.push_back("negative time for " + r.bag_id);
      if (!m.cuts.empty() && r.label != assign_bin(r.time, m.cuts))
        problems.push_back("bin inconsistent with cut points for " + r.bag_id);
    }
    if (!std::filesystem::exists(base_dir / r.path)) missing.push_back(r.bag_id);
  }
  if (!missing.empty()) {
    std::string s = "manifest references absent bag files:";
    for (const auto& id : missing) s += " " + id;
    problems.push_back(s);
  }
  if (m.task == Task::kSurvival) {
    for (std::size_t i = 1; i < m.cuts.size(); ++i)
      if (!(m.cuts[i] > m.cuts[i - 1])) problems.push_back("non-increasing cut points");
  }
  if (!problems.empty()) {
    std::string msg = "invalid manifest:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ManifestError(msg);
  }
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  validate_manifest(m, base);
  Dataset ds;
  ds.task = m.task;
  ds.cuts = m.cuts;
  int max_site = -1, max_label = 0;
  for (const auto& r : m.records) {
    max_site = std::max(max_site, r.site_id);
    max_label = std::max(max_label, r.label);
  }
  ds.sites.resize(static_cast<std::size_t>(max_site + 1));
  ds.n_out = m.task == Task::kSurvival ? static_cast<int>(m.cuts.size()) + 1 : std::max(2, max_label + 1);
  for (const auto& r : m.records) {
    FeatureBag b;
    b.bag_id = r.bag_id;
    b.site_id = r.site_id;
    b.features = load_bag(base / r.path);
    if (ds.d_in == 0) ds.d_in = static_cast<int>(b.features.cols());
    if (b.features.cols() != ds.d_in)
      throw FormatError("feature width mismatch in " + (base / r.path).string());
    b.class_label = r.label;
    b.survival = {r.label, r.censorship, r.time};
    auto& site = ds.sites[static_cast<std::size_t>(r.site_id)];
    (r.split == Split::kTrain ? site.train : r.split == Split::kVal ? site.val : site.test).push_back(std::move(b));
  }
  return ds;
}

/// Writes every bag under `dir/bags/` plus `dir/manifest.csv`.
inline std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  DatasetManifest m;
  m.task = ds.task;
  m.cuts = ds.cuts;
  for (const auto& site : ds.sites) {
    for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
      const auto& v = sp == Split::kTrain ? site.train : sp == Split::kVal ? site.val : site.test;
      for (const auto& b : v) {
        ManifestRecord r;
        r.bag_id = b.bag_id;
        r.site_id = b.site_id;
        r.split = sp;
        r.task = ds.task;
        r.label = ds.task == Task::kSurvival ? b.survival.bin : b.class_label;
        r.censorship = b.survival.censored;
        r.time = b.survival.time;
        r.path = "bags/" + b.bag_id + ".fbag";
        save_bag(b.features, dir / r.path);
        m.records.push_back(std::move(r));
      }
    }
  }
  const auto manifest = dir / "manifest.csv";
  write_manifest(m, manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// Synthetic cohorts

struct SynthSpec {
  Task task = Task::kClassification;
  std::vector<int> cases_per_site = {100, 100};
  std::vector<double> class_proportions = {0.5, 0.5};  // classification
  double censored_fraction = 0.4;                      // survival
  int d_in = 16;
  int bag_min = 8, bag_max = 32;
  int slides_min = 1, slides_max = 1;  // survival: slides concatenated per patient
  double signal_fraction = 0.2;        // fraction of instances carrying the class signal
  double signal_strength = 1.0;        // norm of class directions
  double noise_std = 1.0;
  double site_shift = 0.0;             // norm of each site's random offset vector
  std::vector<std::vector<double>> site_offsets;  // explicit offsets override site_shift
  std::vector<double> site_scales;                // per-site multiplicative scale, default 1
  double base_hazard = 0.1;            // survival event-time rate at zero risk
  double risk_effect = 1.0;            // log-rate per unit latent risk
  int survival_bins = 4;
  SplitFractions fractions;
  std::uint64_t seed = 0;

  int n_sites() const { return static_cast<int>(cases_per_site.size()); }
};

inline void validate(const SynthSpec& s) {
  require(!s.cases_per_site.empty(), "synth: need at least one site");
  for (int n : s.cases_per_site) require(n >= 1, "synth: every site needs at least one case");
  require(s.d_in >= 1, "synth: d_in must be >= 1");
  require(s.bag_min >= 1 && s.bag_max >= s.bag_min, "synth: need 1 <= bag_min <= bag_max");
  require(s.slides_min >= 1 && s.slides_max >= s.slides_min, "synth: need 1 <= slides_min <= slides_max");
  require(s.signal_fraction >= 0.0 && s.signal_fraction <= 1.0, "synth: signal_fraction must lie in [0, 1]");
  require(s.noise_std >= 0.0, "synth: noise_std must be >= 0");
  if (s.task == Task::kClassification) {
    require(s.class_proportions.size() >= 2, "synth: need at least two classes");
    double tot = 0.0;
    for (double p : s.class_proportions) {
      require(p >= 0.0, "synth: class proportions must be non-negative");
      tot += p;
    }
    require(std::abs(tot - 1.0) < 1e-9, "synth: class proportions must sum to 1");
  } else {
    require(s.censored_fraction >= 0.0 && s.censored_fraction < 1.0, "synth: censored_fraction must lie in [0, 1)");
    require(s.base_hazard > 0.0, "synth: base_hazard must be positive");
    require(s.survival_bins >= 2, "synth: survival_bins must be >= 2");
  }
  if (!s.site_offsets.empty()) {
    require(static_cast<int>(s.site_offsets.size()) == s.n_sites(), "synth: one offset vector per site");
    for (const auto& o : s.site_offsets) require(static_cast<int>(o.size()) == s.d_in, "synth: offset width != d_in");
  }
  if (!s.site_scales.empty())
    require(static_cast<int>(s.site_scales.size()) == s.n_sites(), "synth: one scale per site");
}

/// Per-site domain-shift offsets actually used by the generator.
inline std::vector<Vector<double>> site_offsets(const SynthSpec& s) {
  std::vector<Vector<double>> out;
  for (int site = 0; site < s.n_sites(); ++site) {
    if (!s.site_offsets.empty()) {
      out.push_back(Eigen::Map<const Vector<double>>(s.site_offsets[site].data(), s.d_in));
      continue;
    }
    Engine eng = make_engine(s.seed, "site-offset", {static_cast<std::uint64_t>(site)});
    std::normal_distribution<double> n01;
    Vector<double> v(s.d_in);
    for (int j = 0; j < s.d_in; ++j) v(j) = n01(eng);
    const double norm = v.norm();
    out.push_back(norm > 0 ? Vector<double>(v * (s.site_shift / norm)) : Vector<double>::Zero(s.d_in));
  }
  return out;
}

/// Unit signal directions scaled by signal_strength, one per class (or one for survival risk).
inline std::vector<Vector<double>> signal_directions(const SynthSpec& s) {
  const int n = s.task == Task::kClassification ? static_cast<int>(s.class_proportions.size()) : 1;
  std::vector<Vector<double>> out;
  Engine eng = make_engine(s.seed, "directions");
  std::normal_distribution<double> n01;
  for (int c = 0; c < n; ++c) {
    Vector<double> v(s.d_in);
    for (int j = 0; j < s.d_in; ++j) v(j) = n01(eng);
    out.push_back(v * (s.signal_strength / v.norm()));
  }
  return out;
}

struct SynthResult {
  Dataset dataset;
  DatasetManifest manifest;  // paths filled as bags/<bag_id>.fbag
};

/// Generates a multi-site cohort, splits it per site and stratum, and (for
/// survival) discretises times with cut points from the training split.
inline SynthResult generate_synthetic(const SynthSpec& spec) {
  validate(spec);
  const auto offsets = site_offsets(spec);
  const auto dirs = signal_directions(spec);

  struct Raw {
    FeatureBag bag;
    double latent = 0.0;
  };
  std::vector<Raw> raws;

  for (int site = 0; site < spec.n_sites(); ++site) {
    const double scale = spec.site_scales.empty() ? 1.0 : spec.site_scales[site];
    for (int j = 0; j < spec.cases_per_site[site]; ++j) {
      Engine eng = make_engine(spec.seed, "bag", {static_cast<std::uint64_t>(site), static_cast<std::uint64_t>(j)});
      std::normal_distribution<double> n01;
      std::uniform_real_distribution<double> u01;
      Raw raw;
      FeatureBag& b = raw.bag;
      b.site_id = site;
      b.bag_id = "s" + std::to_string(site) + "_p" + std::to_string(j);

      Vector<double> signal;
      if (spec.task == Task::kClassification) {
        std::discrete_distribution<int> cls(spec.class_proportions.begin(), spec.class_proportions.end());
        b.class_label = cls(eng);
        signal = dirs[static_cast<std::size_t>(b.class_label)];
      } else {
        raw.latent = n01(eng);
        signal = dirs[0] * raw.latent;
        const double rate = spec.base_hazard * std::exp(spec.risk_effect * raw.latent);
        const double event_time = std::exponential_distribution<double>(rate)(eng);
        const bool censored = u01(eng) < spec.censored_fraction;
        b.survival.censored = censored ? 1 : 0;
        b.survival.time = censored ? u01(eng) * event_time : event_time;
      }

      const int n_slides = spec.task == Task::kSurvival
                               ? std::uniform_int_distribution<int>(spec.slides_min, spec.slides_max)(eng)
                               : 1;
      std::vector<MatrixF> slides;
      for (int sl = 0; sl < n_slides; ++sl) {
        const int M = std::uniform_int_distribution<int>(spec.bag_min, spec.bag_max)(eng);
        const int n_signal = std::max(1, static_cast<int>(std::lround(spec.signal_fraction * M)));
        MatrixF x(M, spec.d_in);
        for (int m = 0; m < M; ++m) {
          const bool carries = m < n_signal;
          for (int k = 0; k < spec.d_in; ++k) {
            double v = spec.noise_std * n01(eng);
            if (carries) v += signal(k);
            x(m, k) = static_cast<float>(scale * v + offsets[site](k));
          }
        }
        // signal instances are not always first
        std::vector<int> perm(M);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), eng);
        MatrixF shuffled(M, spec.d_in);
        for (int m = 0; m < M; ++m) shuffled.row(m) = x.row(perm[m]);
        slides.push_back(std::move(shuffled));
      }
      b.features = concatenate_slides(slides);
      raws.push_back(std::move(raw));
    }
  }

  // strata: class, or (provisional bin, censorship) with bins from all event times
  std::vector<SplitCase> cases;
  std::vector<double> provisional_cuts;
  if (spec.task == Task::kSurvival) {
    std::vector<double> times;
    std::vector<int> cens;
    for (const auto& r : raws) {
      times.push_back(r.bag.survival.time);
      cens.push_back(r.bag.survival.censored);
    }
    provisional_cuts = survival_cuts(times, cens, spec.survival_bins);
  }
  for (const auto& r : raws) {
    int stratum = r.bag.class_label;
    if (spec.task == Task::kSurvival)
      stratum = assign_bin(r.bag.survival.time, provisional_cuts) * 2 + r.bag.survival.censored;
    cases.push_back({r.bag.bag_id, r.bag.site_id, stratum});
  }
  const auto splits = stratified_split(cases, spec.n_sites(), spec.fractions, spec.seed);

  SynthResult out;
  Dataset& ds = out.dataset;
  ds.task = spec.task;
  ds.d_in = spec.d_in;
  ds.sites.resize(static_cast<std::size_t>(spec.n_sites()));
  if (spec.task == Task::kSurvival) {
    std::vector<double> times;
    std::vector<int> cens;
    for (std::size_t i = 0; i < raws.size(); ++i)
      if (splits[i] == Split::kTrain) {
        times.push_back(raws[i].bag.survival.time);
        cens.push_back(raws[i].bag.survival.censored);
      }
    ds.cuts = survival_cuts(times, cens, spec.survival_bins);
    ds.n_out = spec.survival_bins;
  } else {
    ds.n_out = static_cast<int>(spec.class_proportions.size());
  }

  out.manifest.task = spec.task;
  out.manifest.cuts = ds.cuts;
  for (std::size_t i = 0; i < raws.size(); ++i) {
    FeatureBag b = std::move(raws[i].bag);
    if (spec.task == Task::kSurvival) b.survival.bin = assign_bin(b.survival.time, ds.cuts);
    ManifestRecord r;
    r.bag_id = b.bag_id;
    r.site_id = b.site_id;
    r.split = splits[i];
    r.task = spec.task;
    r.label = spec.task == Task::kSurvival ? b.survival.bin : b.class_label;
    r.censorship = b.survival.censored;
    r.time = b.survival.time;
    r.path = "bags/" + b.bag_id + ".fbag";
    out.manifest.records.push_back(r);
    auto& site = ds.sites[static_cast<std::size_t>(b.site_id)];
    (splits[i] == Split::kTrain ? site.train : splits[i] == Split::kVal ? site.val : site.test)
        .push_back(std::move(b));
  }
  return out;
}

}  // namespace fedbag
