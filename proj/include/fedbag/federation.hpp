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

// Federated averaging with a Gaussian weight mechanism.
//
// Round k:
//   1. every site runs one local epoch from the synchronized weights
//   2. every site perturbs a copy of its weights (noise drawn client-side)
//   3. the server averages the perturbed copies with weight 1/B, summing in
//      ascending site order
//   4. every site's weights are replaced by the average; Adam moments persist
//   5. the pooled validation loss of the global model drives early stopping
//
// Sites may train on separate threads. All randomness comes from named
// streams keyed by (seed, purpose, site, round), so results do not depend on
// the thread count.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedbag/data.hpp"
#include "fedbag/loss.hpp"
#include "fedbag/model.hpp"
#include "fedbag/optim.hpp"
#include "fedbag/privacy.hpp"
#include "fedbag/rng.hpp"

namespace fedbag {

using Weights = ModelWeights<double>;

struct TrainConfig {
  Task task = Task::kClassification;
  ModelDims dims;
  ForwardOptions forward;
  AdamConfig adam;
  double beta = kDefaultBeta;
  EarlyStopConfig early_stop;
  int max_rounds = 200;  // K
  PrivacyConfig privacy;
  std::uint64_t seed = 1;
  bool reset_moments = false;  // reset Adam moments after each synchronization
  int threads = 1;
  /// Called after every round with the synchronized global weights.
  std::function<void(int round, const Weights&)> on_round;
};

struct SiteNoise {
  int site_id = 0;
  std::vector<TensorNoise> tensors;
};

struct RoundLog {
  int round = 0;
  std::vector<double> site_train_loss;  // ascending site order
  double val_loss = 0.0;
  std::vector<SiteNoise> noise;
  double seconds = 0.0;
};

struct TrainResult {
  Weights weights;  // lowest pooled validation loss
  std::vector<RoundLog> history;
  int best_round = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

struct ClientSite {
  int site_id = 0;
  std::vector<const FeatureBag*> train;
  std::vector<const FeatureBag*> val;
  Weights weights;
  AdamState<double> optimizer;
};

/// Site failure annotated with its context.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------

struct BagLoss {
  double value = 0.0;
  Vector<double> dlogits;
};

inline BagLoss bag_loss(const Vector<double>& s, const FeatureBag& bag, Task task, double beta) {
  if (task == Task::kClassification) {
    auto l = cross_entropy(s, bag.class_label);
    return {l.value, std::move(l.grad)};
  }
  auto l = survival_loss(s, bag.survival, beta);
  return {l.value, std::move(l.grad)};
}

/// Mean eval-mode loss over bags.
inline double evaluate_loss(const Weights& w, std::span<const FeatureBag* const> bags, const TrainConfig& cfg) {
  require(!bags.empty(), "evaluate_loss: no bags");
  double total = 0.0;
  for (const FeatureBag* b : bags) {
    const auto tr = forward_bag(w, b->features, Mode::kEval, nullptr, cfg.forward);
    total += bag_loss(tr.s, *b, cfg.task, cfg.beta).value;
  }
  return total / static_cast<double>(bags.size());
}

/// One shuffled pass over the site's training bags with a per-bag Adam step.
/// Returns the mean training loss (measured before each bag's update).
inline double local_epoch(ClientSite& site, int round, const TrainConfig& cfg) {
  if (site.train.empty()) throw TrainingError("site " + std::to_string(site.site_id) + " has no training bags");
  std::vector<std::size_t> order(site.train.size());
  std::iota(order.begin(), order.end(), 0);
  Engine shuffle = make_engine(cfg.seed, "shuffle", {static_cast<std::uint64_t>(site.site_id),
                                                      static_cast<std::uint64_t>(round)});
  std::shuffle(order.begin(), order.end(), shuffle);
  Engine dropout = make_engine(cfg.seed, "dropout", {static_cast<std::uint64_t>(site.site_id),
                                                      static_cast<std::uint64_t>(round)});
  double total = 0.0;
  for (std::size_t idx : order) {
    const FeatureBag& bag = *site.train[idx];
    try {
      const auto tr = forward_bag(site.weights, bag.features, Mode::kTrain, &dropout, cfg.forward);
      const auto loss = bag_loss(tr.s, bag, cfg.task, cfg.beta);
      if (!std::isfinite(loss.value)) throw NonFiniteError("non-finite loss");
      total += loss.value;
      const auto grads = backward_bag(site.weights, tr, loss.dlogits);
      adam_step(site.optimizer, site.weights, grads);
    } catch (const std::exception& e) {
      throw TrainingError("bag " + bag.bag_id + ": " + e.what());
    }
  }
  return total / static_cast<double>(order.size());
}

inline StreamKey privacy_stream(std::uint64_t seed, int site_id, int round) {
  return StreamKey(seed).with("privacy").with(static_cast<std::uint64_t>(site_id)).with(static_cast<std::uint64_t>(round));
}

/// Mean of the perturbed client weights, summed in the given (ascending) order.
inline Weights aggregate(std::span<const Weights> clients, const PrivacyConfig& privacy,
                         std::span<const StreamKey> keys, std::vector<NoiseReport>* reports = nullptr) {
  require(!clients.empty(), "aggregate: need at least one client");
  require(keys.size() == clients.size(), "aggregate: one rng stream per client");
  for (const auto& c : clients)
    require(c.shape_matches(clients.front()), "aggregate: client weight shapes differ");
  Weights sum = clients.front().zeros_like();
  if (reports) reports->clear();
  for (std::size_t i = 0; i < clients.size(); ++i) {
    NoiseReport rep;
    const Weights noisy = perturb_weights(clients[i], privacy, keys[i], &rep);
    zip_tensors<double>(sum, noisy, [](std::string_view, auto& acc, const auto& x) { acc += x; });
    if (reports) reports->push_back(std::move(rep));
  }
  const double B = static_cast<double>(clients.size());
  sum.for_each([&](std::string_view, auto& t) { t /= B; });
  return sum;
}

inline void synchronize(const Weights& global, std::span<ClientSite> sites) {
  for (auto& s : sites) {
    require(s.weights.shape_matches(global), "synchronize: shape mismatch");
    s.weights = global;
  }
}

namespace detail {

inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::vector<const FeatureBag*> pointers(const std::vector<FeatureBag>& v) {
  std::vector<const FeatureBag*> out;
  for (const auto& b : v) out.push_back(&b);
  return out;
}

inline void validate(const TrainConfig& cfg) {
  require(cfg.dims.valid(), "train: invalid model dims");
  require(cfg.max_rounds >= 0, "train: max_rounds must be >= 0");
  require(cfg.privacy.valid(), "train: invalid privacy config");
  require(cfg.beta >= 0.0 && cfg.beta <= 1.0, "train: beta must lie in [0, 1]");
}

}  // namespace detail

/// Federated averaging over the given client sites.
inline TrainResult train_federated(std::vector<ClientSite> sites, const TrainConfig& cfg) {
  detail::validate(cfg);
  require(!sites.empty(), "train_federated: need at least one site");
  std::sort(sites.begin(), sites.end(), [](const auto& a, const auto& b) { return a.site_id < b.site_id; });

  const Weights init = init_weights<double>(cfg.dims, cfg.seed);
  std::vector<const FeatureBag*> pooled_val;
  for (auto& s : sites) {
    s.weights = init;
    s.optimizer = AdamState<double>::fresh(cfg.dims, cfg.adam);
    pooled_val.insert(pooled_val.end(), s.val.begin(), s.val.end());
  }
  TrainResult result;
  result.weights = init;
  if (cfg.max_rounds == 0) return result;
  require(!pooled_val.empty(), "train_federated: no validation bags for early stopping");

  EarlyStopper<Weights> stopper(cfg.early_stop);
  std::vector<StreamKey> keys;
  for (int k = 1; k <= cfg.max_rounds; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundLog log;
    log.round = k;
    log.site_train_loss.assign(sites.size(), 0.0);
    detail::parallel_for(sites.size(), cfg.threads, [&](std::size_t i) {
      try {
        log.site_train_loss[i] = local_epoch(sites[i], k, cfg);
      } catch (const std::exception& e) {
        throw TrainingError("round " + std::to_string(k) + ", site " + std::to_string(sites[i].site_id) + ": " +
                            e.what());
      }
    });

    std::vector<Weights> uploads;
    keys.clear();
    for (const auto& s : sites) {
      uploads.push_back(s.weights);
      keys.push_back(privacy_stream(cfg.seed, s.site_id, k));
    }
    std::vector<NoiseReport> reports;
    const Weights global = aggregate(uploads, cfg.privacy, keys, &reports);
    synchronize(global, sites);
    if (cfg.reset_moments)
      for (auto& s : sites) s.optimizer.reset_moments();
    for (std::size_t i = 0; i < sites.size(); ++i) log.noise.push_back({sites[i].site_id, reports[i].tensors});

    log.val_loss = evaluate_loss(global, pooled_val, cfg);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(std::move(log));
    if (cfg.on_round) cfg.on_round(k, global);
    if (stopper.update(result.history.back().val_loss, k, global) == StopDecision::kStop) {
      result.stopped_early = true;
      break;
    }
  }
  result.weights = *stopper.best_checkpoint();
  result.best_round = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  return result;
}

inline std::vector<ClientSite> make_sites(const Dataset& ds) {
  std::vector<ClientSite> sites;
  for (int i = 0; i < ds.n_sites(); ++i) {
    ClientSite s;
    s.site_id = i;
    s.train = detail::pointers(ds.sites[static_cast<std::size_t>(i)].train);
    s.val = detail::pointers(ds.sites[static_cast<std::size_t>(i)].val);
    sites.push_back(std::move(s));
  }
  return sites;
}

namespace detail {

// Plain single-model loop: no perturbation, aggregation or synchronization.
inline TrainResult train_local(int stream_site_id, std::vector<const FeatureBag*> train,
                               std::vector<const FeatureBag*> val, const TrainConfig& cfg) {
  validate(cfg);
  ClientSite site;
  site.site_id = stream_site_id;
  site.train = std::move(train);
  site.val = std::move(val);
  site.weights = init_weights<double>(cfg.dims, cfg.seed);
  site.optimizer = AdamState<double>::fresh(cfg.dims, cfg.adam);

  TrainResult result;
  result.weights = site.weights;
  if (cfg.max_rounds == 0) return result;
  require(!site.val.empty(), "train: no validation bags for early stopping");
  EarlyStopper<Weights> stopper(cfg.early_stop);
  for (int k = 1; k <= cfg.max_rounds; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundLog log;
    log.round = k;
    log.site_train_loss = {local_epoch(site, k, cfg)};
    log.val_loss = evaluate_loss(site.weights, site.val, cfg);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(std::move(log));
    if (cfg.on_round) cfg.on_round(k, site.weights);
    if (stopper.update(result.history.back().val_loss, k, site.weights) == StopDecision::kStop) {
      result.stopped_early = true;
      break;
    }
  }
  result.weights = *stopper.best_checkpoint();
  result.best_round = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  return result;
}

}  // namespace detail

/// Single model on the union of all sites' training data; streams use site id 0.
inline TrainResult train_centralized(const Dataset& ds, const TrainConfig& cfg) {
  return detail::train_local(0, ds.pooled(Split::kTrain), ds.pooled(Split::kVal), cfg);
}

/// Single model on one site's training and validation data.
inline TrainResult train_single_site(const Dataset& ds, int site_id, const TrainConfig& cfg) {
  if (site_id < 0 || site_id >= ds.n_sites()) throw InvalidArgument("unknown site_id " + std::to_string(site_id));
  const auto& s = ds.sites[static_cast<std::size_t>(site_id)];
  return detail::train_local(site_id, detail::pointers(s.train), detail::pointers(s.val), cfg);
}

inline TrainResult train_federated(const Dataset& ds, const TrainConfig& cfg) {
  return train_federated(make_sites(ds), cfg);
}

// ---------------------------------------------------------------------------
// Inference helpers

/// Softmax class probabilities, one row per bag.
inline MatrixD predict_probabilities(const Weights& w, std::span<const FeatureBag* const> bags,
                                     const ForwardOptions& opt = {}) {
  MatrixD out(static_cast<Eigen::Index>(bags.size()), w.dims().n_out);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const auto tr = forward_bag(w, bags[i]->features, Mode::kEval, nullptr, opt);
    const double mx = tr.s.maxCoeff();
    Vector<double> p = (tr.s.array() - mx).exp().matrix();
    out.row(static_cast<Eigen::Index>(i)) = (p / p.sum()).transpose();
  }
  return out;
}

inline std::vector<double> predict_risks(const Weights& w, std::span<const FeatureBag* const> bags,
                                         const ForwardOptions& opt = {}) {
  std::vector<double> out;
  for (const FeatureBag* b : bags) {
    const auto tr = forward_bag(w, b->features, Mode::kEval, nullptr, opt);
    out.push_back(risk_score(hazards(tr.s)));
  }
  return out;
}

}  // namespace fedbag
