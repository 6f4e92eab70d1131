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

// Gaussian weight-perturbation mechanism.
//
// Each named tensor W receives i.i.d. N(0, (α·η_W)²) noise where η_W is the
// population standard deviation of W's entries before noise. The (ε, δ)
// bound is reported only; the mechanism is parameterised by α alone.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fedbag/common.hpp"
#include "fedbag/model.hpp"
#include "fedbag/rng.hpp"

namespace fedbag {

struct PrivacyConfig {
  double alpha = 0.0;
  double sensitivity = 1.0;  // Δ₂(f)
  std::vector<double> report_epsilons = {0.5, 1.0};

  bool valid() const { return alpha >= 0.0 && sensitivity > 0.0; }
};

struct TensorNoise {
  std::string name;
  double eta = 0.0;
  double sigma = 0.0;
};

struct NoiseReport {
  std::vector<TensorNoise> tensors;
  std::map<double, std::vector<double>> delta_bounds;  // ε -> δ_min per tensor (NaN when σ = 0)
};

/// Population standard deviation of a tensor's entries.
template <typename Derived>
double layer_eta(const Eigen::DenseBase<Derived>& w) {
  if (w.size() == 0) throw InvalidArgument("layer_eta: empty tensor");
  double mean = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) mean += static_cast<double>(w.derived().data()[i]);
  mean /= static_cast<double>(w.size());
  double ss = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double d = static_cast<double>(w.derived().data()[i]) - mean;
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(w.size()));
}

/// Lower bound on δ implied by σ for a given ε and L2 sensitivity.
/// Values >= 1 mean the bound is vacuous; they are returned unchanged.
inline double delta_bound(double epsilon, double sigma, double sensitivity = 1.0) {
  if (!(epsilon > 0.0) || !(sigma > 0.0) || !(sensitivity > 0.0))
    throw InvalidArgument("delta_bound: epsilon, sigma and sensitivity must be positive");
  return 1.25 * std::exp(-(epsilon * epsilon * sigma * sigma) / (2.0 * sensitivity * sensitivity));
}

/// Adds per-tensor Gaussian noise in place. Tensor `name` draws from
/// key.with(name), so the noise of one tensor never depends on another.
template <typename T>
NoiseReport perturb_weights_inplace(ModelWeights<T>& w, const PrivacyConfig& cfg, const StreamKey& key) {
  if (!cfg.valid()) throw InvalidArgument("perturb_weights: alpha must be >= 0 and sensitivity > 0");
  NoiseReport report;
  w.for_each([&](std::string_view name, auto& t) {
    const double eta = layer_eta(t);
    const double sigma = cfg.alpha * eta;
    report.tensors.push_back({std::string(name), eta, sigma});
    if (sigma == 0.0) return;
    Engine eng = make_engine(key.with(name));
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += static_cast<T>(noise(eng));
  });
  for (double eps : cfg.report_epsilons) {
    auto& row = report.delta_bounds[eps];
    for (const auto& tn : report.tensors)
      row.push_back(tn.sigma > 0.0 ? delta_bound(eps, tn.sigma, cfg.sensitivity) : std::nan(""));
  }
  return report;
}

template <typename T>
ModelWeights<T> perturb_weights(const ModelWeights<T>& w, const PrivacyConfig& cfg, const StreamKey& key,
                                NoiseReport* report = nullptr) {
  ModelWeights<T> out = w;
  NoiseReport r = perturb_weights_inplace(out, cfg, key);
  if (report) *report = std::move(r);
  return out;
}

}  // namespace fedbag
