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

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

#include "fedbag/common.hpp"
#include "fedbag/model.hpp"

namespace fedbag {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // coupled L2: added to the gradient
};

template <typename T>
struct AdamState {
  AdamConfig config;
  ModelWeights<T> m;
  ModelWeights<T> v;
  std::int64_t t = 0;

  static AdamState fresh(const ModelDims& dims, const AdamConfig& cfg = {}) {
    AdamState s;
    s.config = cfg;
    s.m = ModelWeights<T>::zeros(dims);
    s.v = ModelWeights<T>::zeros(dims);
    return s;
  }

  void reset_moments() {
    m = m.zeros_like();
    v = v.zeros_like();
    t = 0;
  }

  bool operator==(const AdamState& o) const { return t == o.t && m == o.m && v == o.v; }
};

/// One bias-corrected Adam update, in place.
template <typename T>
void adam_step(AdamState<T>& state, ModelWeights<T>& weights, const Gradients<T>& grads) {
  require(weights.shape_matches(grads) && weights.shape_matches(state.m),
          "adam_step: weights, gradients and optimizer state must be congruent");
  if (!grads.all_finite()) throw NonFiniteError("adam_step: non-finite gradient");

  const AdamConfig& c = state.config;
  state.t += 1;
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T bc1 = T(1) - std::pow(b1, static_cast<T>(state.t));
  const T bc2 = T(1) - std::pow(b2, static_cast<T>(state.t));
  const T lr = static_cast<T>(c.lr), wd = static_cast<T>(c.weight_decay), eps = static_cast<T>(c.eps);

  ModelWeights<T>::for_each_member([&](std::string_view, auto mp) {
    auto& w = weights.*mp;
    const auto& g = grads.*mp;
    auto& m = state.m.*mp;
    auto& v = state.v.*mp;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const T gi = g.data()[i] + wd * w.data()[i];
      T& mi = m.data()[i];
      T& vi = v.data()[i];
      mi = b1 * mi + (T(1) - b1) * gi;
      vi = b2 * vi + (T(1) - b2) * gi * gi;
      const T denom = std::sqrt(vi) / std::sqrt(bc2) + eps;
      w.data()[i] -= (lr / bc1) * mi / denom;
    }
  });
}

enum class StopDecision { kContinue, kStop };

struct EarlyStopConfig {
  int min_epochs = 35;
  int patience = 20;
};

/// Validation-loss early stopping with a minimum-epoch gate.
///
/// Epochs are 1-based. An epoch improves when its loss is strictly below
/// the best seen so far. Training stops at the first epoch e with
/// e >= min_epochs and at least `patience` epochs since the last improvement.
template <typename Snapshot>
class EarlyStopper {
 public:
  explicit EarlyStopper(EarlyStopConfig cfg = {}) : cfg_(cfg) {}

  StopDecision update(double val_loss, int epoch, const Snapshot& current) {
    if (std::isnan(val_loss)) throw NonFiniteError("early stopping: NaN validation loss");
    require(epoch > last_epoch_, "early stopping: epochs must be presented in increasing order");
    last_epoch_ = epoch;
    if (!best_checkpoint_ || val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
      best_checkpoint_ = current;
      epochs_since_improve_ = 0;
    } else {
      ++epochs_since_improve_;
    }
    if (epoch >= cfg_.min_epochs && epochs_since_improve_ >= cfg_.patience) return StopDecision::kStop;
    return StopDecision::kContinue;
  }

  double best_loss() const { return best_loss_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_since_improve() const { return epochs_since_improve_; }
  const std::optional<Snapshot>& best_checkpoint() const { return best_checkpoint_; }
  const EarlyStopConfig& config() const { return cfg_; }

 private:
  EarlyStopConfig cfg_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int epochs_since_improve_ = 0;
  int last_epoch_ = std::numeric_limits<int>::min();
  std::optional<Snapshot> best_checkpoint_;
};

}  // namespace fedbag
