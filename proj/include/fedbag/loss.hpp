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

// Bag-level losses: softmax cross-entropy for classification and the
// discrete-time hazard likelihood for right-censored survival.
//
// Survival indexing: labels Y live in {0..R-1}; S(r) = Π_{u<=r} (1 - h_u)
// with S(-1) = 1, so every likelihood term is defined for Y = 0.

#include <algorithm>
#include <cmath>
#include <string>

#include "fedbag/common.hpp"

namespace fedbag {

inline constexpr double kLogClamp = 1e-12;
inline constexpr double kDefaultBeta = 0.15;

struct SurvivalLabel {
  int bin = 0;          // Y
  int censored = 0;     // c, 1 = censored
  double time = 0.0;    // raw follow-up time
};

template <typename T>
struct LossValue {
  T value = 0;
  Vector<T> grad;  // dLoss/ds
};

template <typename T>
LossValue<T> cross_entropy(const Vector<T>& s, int label) {
  if (label < 0 || label >= s.size())
    throw InvalidArgument("cross_entropy: label " + std::to_string(label) + " out of range");
  const T mx = s.maxCoeff();
  const Vector<T> ex = (s.array() - mx).exp().matrix();
  const T sum = ex.sum();
  LossValue<T> out;
  out.value = std::log(sum) + mx - s(label);
  out.grad = ex / sum;
  out.grad(label) -= T(1);
  return out;
}

template <typename T>
Vector<T> hazards(const Vector<T>& s) {
  return (T(1) / (T(1) + (-s.array()).exp())).matrix();
}

/// Survival probabilities S(0..R-1); S(-1) = 1 is implicit.
template <typename T>
Vector<T> survival_curve(const Vector<T>& h) {
  Vector<T> surv(h.size());
  T acc = 1;
  for (Eigen::Index r = 0; r < h.size(); ++r) {
    acc *= (T(1) - h(r));
    surv(r) = acc;
  }
  return surv;
}

/// Probability mass P(T = r) = h_r S(r-1).
template <typename T>
Vector<T> event_probabilities(const Vector<T>& h) {
  Vector<T> p(h.size());
  T prev = 1;
  for (Eigen::Index r = 0; r < h.size(); ++r) {
    p(r) = h(r) * prev;
    prev *= (T(1) - h(r));
  }
  return p;
}

namespace detail {

// log(max(x, clamp)) and its derivative with respect to log x.
template <typename T>
struct ClampedLog {
  T value;
  bool active;  // false when the clamp cut the gradient
};

template <typename T>
ClampedLog<T> clamped_log(T x) {
  if (x < T(kLogClamp)) return {std::log(T(kLogClamp)), false};
  return {std::log(x), true};
}

// Pieces of the survival likelihood with gradients w.r.t. the logits.
template <typename T>
struct SurvivalTerms {
  T censored_term = 0;    // -c log S(Y)
  T uncensored_term = 0;  // -(1-c)[log S(Y-1) + log h_Y]
  Vector<T> grad_censored;
  Vector<T> grad_uncensored;
};

template <typename T>
SurvivalTerms<T> survival_terms(const Vector<T>& s, const SurvivalLabel& label) {
  const Eigen::Index R = s.size();
  if (label.bin < 0 || label.bin >= R)
    throw InvalidArgument("survival loss: bin " + std::to_string(label.bin) + " out of range");
  if (label.censored != 0 && label.censored != 1)
    throw InvalidArgument("survival loss: censorship flag must be 0 or 1");
  if (!s.allFinite()) throw NonFiniteError("survival loss: non-finite logits");

  const Vector<T> h = hazards(s);
  const Vector<T> surv = survival_curve(h);
  const int Y = label.bin;
  SurvivalTerms<T> out;
  out.grad_censored = Vector<T>::Zero(R);
  out.grad_uncensored = Vector<T>::Zero(R);

  // d log S(r) / d s_u = -h_u for u <= r; d log h_Y / d s_Y = 1 - h_Y.
  if (label.censored == 1) {
    const auto ls = clamped_log(surv(Y));
    out.censored_term = -ls.value;
    if (ls.active) out.grad_censored.head(Y + 1) = h.head(Y + 1);
  } else {
    T lsv = 0;
    if (Y > 0) {
      const auto ls = clamped_log(surv(Y - 1));
      lsv = ls.value;
      if (ls.active) out.grad_uncensored.head(Y) = h.head(Y);
    }
    const auto lh = clamped_log(h(Y));
    if (lh.active) out.grad_uncensored(Y) -= (T(1) - h(Y));
    out.uncensored_term = -lsv - lh.value;
  }
  return out;
}

}  // namespace detail

/// Negative log-likelihood of one (possibly censored) discrete survival label.
template <typename T>
LossValue<T> survival_nll(const Vector<T>& s, const SurvivalLabel& label) {
  const auto terms = detail::survival_terms(s, label);
  return {terms.censored_term + terms.uncensored_term, terms.grad_censored + terms.grad_uncensored};
}

/// (1-β)·NLL + β·(uncensored part of NLL).
template <typename T>
LossValue<T> survival_loss(const Vector<T>& s, const SurvivalLabel& label, double beta = kDefaultBeta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("survival_loss: beta must lie in [0, 1]");
  const auto terms = detail::survival_terms(s, label);
  const T b = static_cast<T>(beta);
  LossValue<T> out;
  out.value = (T(1) - b) * (terms.censored_term + terms.uncensored_term) + b * terms.uncensored_term;
  out.grad = (T(1) - b) * (terms.grad_censored + terms.grad_uncensored) + b * terms.grad_uncensored;
  return out;
}

/// Negative expected number of survived bins; larger means higher risk.
template <typename T>
T risk_score(const Vector<T>& h) {
  return -survival_curve(h).sum();
}

}  // namespace fedbag
