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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "fedbag/common.hpp"

namespace fedbag {

// ---------------------------------------------------------------------------
// ROC AUC and DeLong

namespace detail {

/// 1-based midranks (ties share the mean of their positions).
inline std::vector<double> midranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mid;
    i = j + 1;
  }
  return r;
}

inline void split_by_label(std::span<const double> scores, std::span<const int> labels, std::vector<double>& pos,
                           std::vector<double>& neg) {
  require(scores.size() == labels.size(), "auc: scores and labels differ in length");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, "auc: binary labels must be 0 or 1");
    (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  }
}

}  // namespace detail

/// Binary AUC = Mann–Whitney U / (n₊ n₋), ties counted one half.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  std::vector<double> pos, neg;
  detail::split_by_label(scores, labels, pos, neg);
  if (pos.empty() || neg.empty()) throw InvalidArgument("roc_auc: both classes must be present");
  std::vector<double> all(scores.begin(), scores.end());
  const auto r = detail::midranks(all);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) rank_sum += r[i];
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Flattens an N × C probability matrix into one-vs-rest (score, indicator) pairs.
inline void flatten_one_vs_rest(const MatrixD& probs, std::span<const int> labels, std::vector<double>& scores,
                                std::vector<int>& indicators) {
  require(static_cast<std::size_t>(probs.rows()) == labels.size(), "flatten: row count != label count");
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      scores.push_back(probs(i, c));
      indicators.push_back(labels[static_cast<std::size_t>(i)] == c ? 1 : 0);
    }
}

/// Micro-averaged AUC: binary uses the positive-class column; multiclass is
/// a single AUC over the flattened one-vs-rest pairs.
inline double roc_auc_micro(const MatrixD& probs, std::span<const int> labels) {
  if (probs.cols() == 2) {
    const std::vector<double> s = column(probs, 1);
    return roc_auc(s, labels);
  }
  std::vector<double> s;
  std::vector<int> y;
  flatten_one_vs_rest(probs, labels, s, y);
  return roc_auc(s, y);
}

struct AucInterval {
  double auc = 0.0;
  double variance = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// DeLong structural-components variance with a normal-approximation CI
/// clipped to [0, 1]. O(n log n) via midranks.
inline AucInterval delong_ci(std::span<const double> scores, std::span<const int> labels, double level = 0.95) {
  require(level > 0.0 && level < 1.0, "delong_ci: level must lie in (0, 1)");
  std::vector<double> pos, neg;
  detail::split_by_label(scores, labels, pos, neg);
  if (pos.size() < 2 || neg.size() < 2)
    throw InvalidArgument("delong_ci: each class needs at least two members");
  const double m = static_cast<double>(pos.size()), n = static_cast<double>(neg.size());

  std::vector<double> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  const auto r_all = detail::midranks(all);
  const auto r_pos = detail::midranks(pos);
  const auto r_neg = detail::midranks(neg);

  // V10_i: fraction of negatives below positive i; V01_j: fraction of positives above negative j
  std::vector<double> v10(pos.size()), v01(neg.size());
  for (std::size_t i = 0; i < pos.size(); ++i) v10[i] = (r_all[i] - r_pos[i]) / n;
  for (std::size_t j = 0; j < neg.size(); ++j) v01[j] = 1.0 - (r_all[pos.size() + j] - r_neg[j]) / m;

  AucInterval out;
  out.auc = std::accumulate(v10.begin(), v10.end(), 0.0) / m;
  auto sample_var = [](const std::vector<double>& v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
  };
  out.variance = sample_var(v10, out.auc) / m + sample_var(v01, out.auc) / n;
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
  const double half = z * std::sqrt(std::max(out.variance, 0.0));
  out.lo = std::clamp(out.auc - half, 0.0, 1.0);
  out.hi = std::clamp(out.auc + half, 0.0, 1.0);
  return out;
}

/// Average precision of a binary ranking (step interpolation, tied scores grouped).
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "average_precision: length mismatch");
  const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) throw InvalidArgument("average_precision: no positive labels");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double tp = 0, fp = 0, prev_recall = 0, ap = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = tp / n_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

// ---------------------------------------------------------------------------
// Classification report

struct ClassificationReport {
  double auc = 0, auc_lo = 0, auc_hi = 0;
  double error = 0;
  double balanced_accuracy = 0;
  double f1 = 0;
  double map = 0;
  double kappa = 0;
  std::vector<double> sensitivity;  // per-class recall
};

inline double cohen_kappa(const Matrix<double>& confusion) {
  const double n = confusion.sum();
  require(n > 0, "cohen_kappa: empty confusion matrix");
  const double po = confusion.trace() / n;
  double pe = 0;
  for (Eigen::Index k = 0; k < confusion.rows(); ++k) pe += confusion.row(k).sum() * confusion.col(k).sum();
  pe /= n * n;
  if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

inline ClassificationReport classification_report(const MatrixD& probs, std::span<const int> labels) {
  require(static_cast<std::size_t>(probs.rows()) == labels.size() && probs.rows() > 0,
          "classification_report: probability rows must match labels");
  const Eigen::Index C = probs.cols();
  require(C >= 2, "classification_report: need at least two classes");
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    require(std::abs(probs.row(i).sum() - 1.0) <= 1e-6, "classification_report: probability rows must sum to 1");
  for (int y : labels) require(y >= 0 && y < C, "classification_report: label out of range");

  Matrix<double> conf = Matrix<double>::Zero(C, C);  // rows = truth, cols = prediction
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index pred;
    probs.row(i).maxCoeff(&pred);
    conf(labels[static_cast<std::size_t>(i)], pred) += 1;
  }
  ClassificationReport rep;
  const double n = conf.sum();
  rep.error = 1.0 - conf.trace() / n;
  double recall_sum = 0;
  int present = 0;
  for (Eigen::Index k = 0; k < C; ++k) {
    const double support = conf.row(k).sum();
    const double recall = support > 0 ? conf(k, k) / support : 0.0;
    rep.sensitivity.push_back(recall);
    if (support > 0) {
      recall_sum += recall;
      ++present;
    }
  }
  rep.balanced_accuracy = recall_sum / present;
  rep.kappa = cohen_kappa(conf);

  std::vector<double> s;
  std::vector<int> y;
  if (C == 2) {
    const double tp = conf(1, 1), fp = conf(0, 1), fn = conf(1, 0);
    rep.f1 = (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    s = column(probs, 1);
    y.assign(labels.begin(), labels.end());
  } else {
    // micro F1 over single-label predictions equals accuracy
    rep.f1 = 1.0 - rep.error;
    flatten_one_vs_rest(probs, labels, s, y);
  }
  rep.map = average_precision(s, y);
  const bool both = std::count(y.begin(), y.end(), 1) >= 2 && std::count(y.begin(), y.end(), 0) >= 2;
  if (both) {
    const auto ci = delong_ci(s, y);
    rep.auc = ci.auc;
    rep.auc_lo = ci.lo;
    rep.auc_hi = ci.hi;
  } else {
    rep.auc = rep.auc_lo = rep.auc_hi = roc_auc(s, y);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Survival statistics

/// Harrell's concordance: (i, j) comparable iff t_i < t_j and i had the
/// event; concordant when risk_i > risk_j, risk ties count one half.
inline double c_index(std::span<const double> risks, std::span<const double> times, std::span<const int> censored) {
  require(risks.size() == times.size() && times.size() == censored.size(), "c_index: length mismatch");
  std::int64_t comparable = 0, twice_concordant = 0;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    if (censored[i] != 0) continue;
    for (std::size_t j = 0; j < risks.size(); ++j) {
      if (!(times[i] < times[j])) continue;
      ++comparable;
      if (risks[i] > risks[j]) twice_concordant += 2;
      else if (risks[i] == risks[j]) twice_concordant += 1;
    }
  }
  if (comparable == 0) throw InvalidArgument("c_index: no comparable pairs");
  return static_cast<double>(twice_concordant) / (2.0 * static_cast<double>(comparable));
}

/// Upper tail of the chi-square distribution, Q(df/2, x/2).
inline double chi_square_sf(double x, double df) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

struct LogRankResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double observed1 = 0.0;
  double expected1 = 0.0;
  double variance = 0.0;
};

/// Two-sample log-rank test (chi-square, 1 df). group values are 0/1.
inline LogRankResult log_rank(std::span<const double> times, std::span<const int> censored,
                              std::span<const int> group) {
  require(times.size() == censored.size() && times.size() == group.size(), "log_rank: length mismatch");
  const auto n1_total = std::count(group.begin(), group.end(), 1);
  if (n1_total == 0 || n1_total == static_cast<long>(group.size()))
    throw InvalidArgument("log_rank: both groups must be non-empty");
  if (std::count(censored.begin(), censored.end(), 0) == 0) throw InvalidArgument("log_rank: no events");

  std::vector<std::size_t> idx(times.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return times[a] < times[b]; });

  LogRankResult res;
  double at_risk = static_cast<double>(times.size());
  double at_risk1 = static_cast<double>(n1_total);
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    double d = 0, d1 = 0, leaving = 0, leaving1 = 0;
    while (j < idx.size() && times[idx[j]] == times[idx[i]]) {
      const auto k = idx[j];
      if (censored[k] == 0) {
        d += 1;
        if (group[k] == 1) d1 += 1;
      }
      leaving += 1;
      if (group[k] == 1) leaving1 += 1;
      ++j;
    }
    if (d > 0) {
      const double frac = at_risk1 / at_risk;
      res.observed1 += d1;
      res.expected1 += d * frac;
      if (at_risk > 1) res.variance += d * frac * (1 - frac) * (at_risk - d) / (at_risk - 1);
    }
    at_risk -= leaving;
    at_risk1 -= leaving1;
    i = j;
  }
  if (res.variance > 0) {
    const double diff = res.observed1 - res.expected1;
    res.statistic = diff * diff / res.variance;
    res.p_value = chi_square_sf(res.statistic, 1.0);
  }
  return res;
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// High-risk group (1) is risk > median; ties at the median go low (0).
inline std::vector<int> stratify_by_median(std::span<const double> risks) {
  require(risks.size() >= 2, "stratify_by_median: need at least two risks");
  const double med = median({risks.begin(), risks.end()});
  std::vector<int> g;
  g.reserve(risks.size());
  for (double r : risks) g.push_back(r > med ? 1 : 0);
  if (std::count(g.begin(), g.end(), 1) == 0) throw InvalidArgument("degenerate stratification");
  return g;
}

struct KmStep {
  double time = 0.0;
  double survival = 1.0;
  int at_risk = 0;
  int events = 0;
};

/// Kaplan–Meier product-limit estimate: one step per distinct event time,
/// preceded by the (0, 1.0) origin.
inline std::vector<KmStep> km_curve(std::span<const double> times, std::span<const int> censored) {
  require(times.size() == censored.size() && !times.empty(), "km_curve: need matching non-empty inputs");
  std::vector<std::size_t> idx(times.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return times[a] < times[b]; });
  std::vector<KmStep> out{{0.0, 1.0, static_cast<int>(times.size()), 0}};
  double s = 1.0;
  int at_risk = static_cast<int>(times.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    int d = 0;
    while (j < idx.size() && times[idx[j]] == times[idx[i]]) {
      if (censored[idx[j]] == 0) ++d;
      ++j;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / at_risk;
      out.push_back({times[idx[i]], s, at_risk, d});
    }
    at_risk -= static_cast<int>(j - i);
    i = j;
  }
  return out;
}

struct SurvivalReport {
  double c_index = 0.0;
  LogRankResult log_rank;
  std::vector<KmStep> km_low, km_high;
};

inline SurvivalReport survival_report(std::span<const double> risks, std::span<const double> times,
                                      std::span<const int> censored) {
  SurvivalReport rep;
  rep.c_index = c_index(risks, times, censored);
  const auto groups = stratify_by_median(risks);
  rep.log_rank = log_rank(times, censored, groups);
  for (int g = 0; g < 2; ++g) {
    std::vector<double> t;
    std::vector<int> c;
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i] == g) {
        t.push_back(times[i]);
        c.push_back(censored[i]);
      }
    (g == 0 ? rep.km_low : rep.km_high) = km_curve(t, c);
  }
  return rep;
}

}  // namespace fedbag
