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

#include "fedbag/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

namespace fedbag {
namespace {

struct Labeled {
  std::vector<double> s;
  std::vector<int> y;
};

// scores rounded to a coarse grid so that ties are common
Labeled random_labeled(int n, std::mt19937_64& eng, double shift = 0.5) {
  std::normal_distribution<double> n01;
  Labeled out;
  for (int i = 0; i < n; ++i) {
    const int y = i < 2 ? i : static_cast<int>(eng() % 2);
    out.y.push_back(y);
    out.s.push_back(std::round(4 * (n01(eng) + shift * y)) / 4);
  }
  return out;
}

TEST(RocAuc, WorkedExample) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.75);
  EXPECT_DOUBLE_EQ(oracle::auc_pairs(s, y), 0.75);
}

TEST(RocAuc, SeparatedAndTied) {
  const std::vector<int> y = {0, 0, 1, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{1, 2, 3, 4, 5}, y), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{5, 4, 3, 2, 1}, y), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>(5, 0.3), y), 0.5);
}

TEST(RocAuc, SingleClassRejected) {
  EXPECT_THROW(roc_auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), InvalidArgument);
}

TEST(RocAuc, EqualsPairwiseOracle) {
  std::mt19937_64 eng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = random_labeled(2 + static_cast<int>(eng() % 199), eng);
    EXPECT_EQ(roc_auc(d.s, d.y), oracle::auc_pairs(d.s, d.y)) << "rep " << rep;
  }
}

TEST(RocAuc, MicroAverageFlattensOneVsRest) {
  MatrixD p(3, 3);
  p << 0.7, 0.2, 0.1,  //
      0.1, 0.6, 0.3,   //
      0.3, 0.3, 0.4;
  const std::vector<int> y = {0, 1, 2};
  const std::vector<double> flat = {0.7, 0.2, 0.1, 0.1, 0.6, 0.3, 0.3, 0.3, 0.4};
  const std::vector<int> ind = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_DOUBLE_EQ(roc_auc_micro(p, y), oracle::auc_pairs(flat, ind));
}

TEST(DeLong, PerfectSeparationCollapses) {
  const std::vector<double> s = {0.1, 0.2, 0.3, 0.8, 0.9};
  const std::vector<int> y = {0, 0, 0, 1, 1};
  const auto ci = delong_ci(s, y);
  EXPECT_DOUBLE_EQ(ci.auc, 1.0);
  EXPECT_DOUBLE_EQ(ci.variance, 0.0);
  EXPECT_DOUBLE_EQ(ci.lo, 1.0);
  EXPECT_DOUBLE_EQ(ci.hi, 1.0);
}

TEST(DeLong, FastMatchesQuadratic) {
  std::mt19937_64 eng(2);
  for (int rep = 0; rep < 50; ++rep) {
    auto d = random_labeled(10 + static_cast<int>(eng() % 150), eng);
    d.y[2] = 0;
    d.y[3] = 1;
    const auto ci = delong_ci(d.s, d.y);
    EXPECT_NEAR(ci.variance, oracle::delong_variance_pairs(d.s, d.y), 1e-10);
    EXPECT_LE(ci.lo, ci.auc);
    EXPECT_LE(ci.auc, ci.hi);
    EXPECT_GE(ci.lo, 0.0);
    EXPECT_LE(ci.hi, 1.0);
  }
}

TEST(DeLong, VarianceMatchesBootstrap) {
  std::mt19937_64 eng(3);
  std::normal_distribution<double> n01;
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    y.push_back(i % 2);
    s.push_back(n01(eng) + 1.0 * (i % 2));
  }
  const double v = delong_ci(s, y).variance;
  const double boot = oracle::bootstrap_auc_variance(s, y, 2000, 4);
  EXPECT_NEAR(v / boot, 1.0, 0.15);
}

TEST(DeLong, WidthShrinksWithSampleSize) {
  std::mt19937_64 eng(5);
  std::normal_distribution<double> n01;
  auto width = [&](int n) {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < n; ++i) {
      y.push_back(i % 2);
      s.push_back(n01(eng) + (i % 2));
    }
    const auto ci = delong_ci(s, y);
    return ci.hi - ci.lo;
  };
  const double w100 = width(100), w1600 = width(1600);
  EXPECT_NEAR(w100 / w1600, 4.0, 1.0);
}

TEST(DeLong, DegenerateClassSizes) {
  EXPECT_THROW(delong_ci(std::vector<double>{1, 2, 3}, std::vector<int>{0, 0, 1}), InvalidArgument);
}

TEST(AveragePrecision, HandValues) {
  // ranking: 1 (pos), 0.8 (neg), 0.6 (pos) → (1 + 2/3) / 2
  EXPECT_NEAR(average_precision(std::vector<double>{1, 0.8, 0.6}, std::vector<int>{1, 0, 1}), (1 + 2.0 / 3) / 2,
              1e-15);
  EXPECT_DOUBLE_EQ(average_precision(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  // a fully tied ranking has precision equal to prevalence
  EXPECT_DOUBLE_EQ(average_precision(std::vector<double>(4, 0.5), std::vector<int>{1, 0, 0, 0}), 0.25);
}

MatrixD one_hot_probs(const std::vector<int>& pred, int C) {
  MatrixD p = MatrixD::Zero(static_cast<Eigen::Index>(pred.size()), C);
  for (std::size_t i = 0; i < pred.size(); ++i) p(static_cast<Eigen::Index>(i), pred[i]) = 1.0;
  return p;
}

TEST(Report, PerfectPredictions) {
  const std::vector<int> y = {0, 1, 2, 1, 0, 2};
  const auto r = classification_report(one_hot_probs(y, 3), y);
  EXPECT_DOUBLE_EQ(r.error, 0.0);
  EXPECT_DOUBLE_EQ(r.balanced_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 1.0);
  EXPECT_DOUBLE_EQ(r.kappa, 1.0);
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
  EXPECT_DOUBLE_EQ(r.map, 1.0);
}

TEST(Report, MajorityPredictor) {
  std::vector<int> y(100, 0);
  for (int i = 0; i < 10; ++i) y[i] = 1;
  MatrixD p(100, 2);
  for (int i = 0; i < 100; ++i) p.row(i) << 0.9, 0.1;
  const auto r = classification_report(p, y);
  EXPECT_DOUBLE_EQ(r.balanced_accuracy, 0.5);
  EXPECT_DOUBLE_EQ(r.kappa, 0.0);
  EXPECT_NEAR(r.error, 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(r.f1, 0.0);
  EXPECT_DOUBLE_EQ(r.auc, 0.5);
}

TEST(Report, KappaHandValue) {
  Matrix<double> conf(2, 2);
  conf << 20, 5, 10, 15;  // po = 0.7, pe = 0.5·0.6 + 0.5·0.4 = 0.5
  EXPECT_NEAR(cohen_kappa(conf), 0.4, 1e-15);
}

TEST(Report, KappaInvariantUnderRelabeling) {
  std::mt19937_64 eng(6);
  std::vector<int> y, pred;
  for (int i = 0; i < 60; ++i) {
    y.push_back(static_cast<int>(eng() % 3));
    pred.push_back(eng() % 3 == 0 ? static_cast<int>(eng() % 3) : y.back());
  }
  const std::array<int, 3> perm = {2, 0, 1};
  std::vector<int> y2, pred2;
  for (int i = 0; i < 60; ++i) {
    y2.push_back(perm[y[i]]);
    pred2.push_back(perm[pred[i]]);
  }
  const auto a = classification_report(one_hot_probs(pred, 3), y);
  const auto b = classification_report(one_hot_probs(pred2, 3), y2);
  EXPECT_NEAR(a.kappa, b.kappa, 1e-15);
  EXPECT_NEAR(a.balanced_accuracy, b.balanced_accuracy, 1e-15);
}

TEST(Report, OrderInvariant) {
  std::mt19937_64 eng(7);
  std::uniform_real_distribution<double> u;
  const int n = 80;
  MatrixD p(n, 2);
  std::vector<int> y;
  for (int i = 0; i < n; ++i) {
    y.push_back(i % 2);
    const double q = std::clamp(u(eng) * 0.7 + 0.3 * y.back(), 0.0, 1.0);
    p.row(i) << 1 - q, q;
  }
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), eng);
  MatrixD p2(n, 2);
  std::vector<int> y2;
  for (int i = 0; i < n; ++i) {
    p2.row(i) = p.row(idx[i]);
    y2.push_back(y[idx[i]]);
  }
  const auto a = classification_report(p, y), b = classification_report(p2, y2);
  EXPECT_DOUBLE_EQ(a.auc, b.auc);
  EXPECT_NEAR(a.auc_lo, b.auc_lo, 1e-12);
  EXPECT_DOUBLE_EQ(a.map, b.map);
  EXPECT_DOUBLE_EQ(a.kappa, b.kappa);
  EXPECT_DOUBLE_EQ(a.f1, b.f1);
}

TEST(Report, RejectsBadInput) {
  MatrixD p(2, 2);
  p << 0.5, 0.6, 0.5, 0.5;
  EXPECT_THROW(classification_report(p, std::vector<int>{0, 1}), InvalidArgument);
  p << 0.5, 0.5, 0.5, 0.5;
  EXPECT_THROW(classification_report(p, std::vector<int>{0}), InvalidArgument);
}

TEST(CIndex, WorkedExamples) {
  EXPECT_DOUBLE_EQ(c_index(std::vector<double>{2, 1}, std::vector<double>{1, 5}, std::vector<int>{0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(c_index(std::vector<double>{1, 2}, std::vector<double>{1, 5}, std::vector<int>{0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(c_index(std::vector<double>(4, 1.0), std::vector<double>{1, 2, 3, 4}, std::vector<int>(4, 0)),
                   0.5);
  EXPECT_THROW(c_index(std::vector<double>{1, 2}, std::vector<double>{1, 5}, std::vector<int>{1, 1}),
               InvalidArgument);
}

TEST(CIndex, EqualsPairwiseOracleAndIsRankInvariant) {
  std::mt19937_64 eng(8);
  std::normal_distribution<double> n01;
  std::exponential_distribution<double> ex(1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + static_cast<int>(eng() % 199);
    std::vector<double> r, t, r3;
    std::vector<int> c;
    for (int i = 0; i < n; ++i) {
      r.push_back(std::round(3 * n01(eng)) / 3);
      t.push_back(std::round(10 * ex(eng)) / 10);
      c.push_back(eng() % 3 == 0 ? 1 : 0);
    }
    c[0] = 0;
    t[0] = 0;
    t[1] = 1;
    for (double x : r) r3.push_back(std::exp(x) * 3 + 1);
    const double got = c_index(r, t, c);
    EXPECT_EQ(got, oracle::c_index_pairs(r, t, c)) << "rep " << rep;
    EXPECT_EQ(got, c_index(r3, t, c));
  }
}

TEST(LogRank, HandTable) {
  const std::vector<double> t = {1, 2, 3, 10, 20, 30};
  const std::vector<int> c(6, 0), g = {0, 0, 0, 1, 1, 1};
  const auto res = log_rank(t, c, g);
  // at times 1, 2, 3 group 1 has 3 of 6, 5, 4 at risk, then every later death is group 1
  const double e1 = 3.0 / 6 + 3.0 / 5 + 3.0 / 4 + 1 + 1 + 1;
  const double var = (3.0 / 6) * (3.0 / 6) + (3.0 / 5) * (2.0 / 5) + (3.0 / 4) * (1.0 / 4);
  EXPECT_NEAR(res.observed1, 3.0, 1e-15);
  EXPECT_NEAR(res.expected1, e1, 1e-12);
  EXPECT_NEAR(res.variance, var, 1e-12);
  EXPECT_NEAR(res.statistic, (3 - e1) * (3 - e1) / var, 1e-12);
  EXPECT_NEAR(res.statistic, oracle::log_rank_table(t, c, g), 1e-12);
  EXPECT_NEAR(res.p_value, std::erfc(std::sqrt(res.statistic / 2)), 1e-10);
}

TEST(LogRank, IdenticalGroups) {
  const std::vector<double> t = {1, 1, 2, 2, 3, 3};
  const std::vector<int> c = {0, 0, 1, 1, 0, 0}, g = {0, 1, 0, 1, 0, 1};
  const auto res = log_rank(t, c, g);
  EXPECT_NEAR(res.statistic, 0.0, 1e-15);
  EXPECT_NEAR(res.p_value, 1.0, 1e-15);
}

TEST(LogRank, SymmetricAndMatchesTable) {
  std::mt19937_64 eng(9);
  std::exponential_distribution<double> ex(1.0);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 10 + static_cast<int>(eng() % 60);
    std::vector<double> t;
    std::vector<int> c, g, flip;
    for (int i = 0; i < n; ++i) {
      g.push_back(i % 2);
      flip.push_back(1 - g.back());
      t.push_back(std::round(5 * ex(eng) * (g.back() ? 1.5 : 1.0)) / 5);
      c.push_back(eng() % 4 == 0 ? 1 : 0);
    }
    c[0] = 0;
    const auto a = log_rank(t, c, g), b = log_rank(t, c, flip);
    EXPECT_NEAR(a.statistic, b.statistic, 1e-10);
    EXPECT_NEAR(a.statistic, oracle::log_rank_table(t, c, g), 1e-10);
    EXPECT_GT(a.p_value, 0.0);
    EXPECT_LE(a.p_value, 1.0);
  }
}

TEST(LogRank, Errors) {
  EXPECT_THROW(log_rank(std::vector<double>{1, 2}, std::vector<int>{0, 0}, std::vector<int>{1, 1}), InvalidArgument);
  EXPECT_THROW(log_rank(std::vector<double>{1, 2}, std::vector<int>{1, 1}, std::vector<int>{0, 1}), InvalidArgument);
}

TEST(ChiSquare, KnownQuantiles) {
  EXPECT_NEAR(chi_square_sf(3.841458820694124, 1), 0.05, 1e-12);
  EXPECT_NEAR(chi_square_sf(6.634896601021214, 1), 0.01, 1e-12);
  EXPECT_NEAR(chi_square_sf(5.991464547107979, 2), 0.05, 1e-12);
  EXPECT_DOUBLE_EQ(chi_square_sf(0, 1), 1.0);
}

TEST(Median, Stratification) {
  EXPECT_EQ(stratify_by_median(std::vector<double>{1, 2, 3, 4}), (std::vector<int>{0, 0, 1, 1}));
  EXPECT_EQ(stratify_by_median(std::vector<double>{1, 2, 3}), (std::vector<int>{0, 0, 1}));
  EXPECT_EQ(stratify_by_median(std::vector<double>{4, 1, 3, 2}), (std::vector<int>{1, 0, 1, 0}));
  EXPECT_EQ(stratify_by_median(std::vector<double>{std::exp(4.0), std::exp(1.0), std::exp(3.0), std::exp(2.0)}),
            (std::vector<int>{1, 0, 1, 0}));
  try {
    stratify_by_median(std::vector<double>{2, 2, 2});
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate stratification"), std::string::npos);
  }
}

TEST(KaplanMeier, NoCensoring) {
  const auto km = km_curve(std::vector<double>{1, 2, 3, 4}, std::vector<int>(4, 0));
  ASSERT_EQ(km.size(), 5u);
  EXPECT_DOUBLE_EQ(km[0].survival, 1.0);
  EXPECT_DOUBLE_EQ(km[1].survival, 0.75);
  EXPECT_DOUBLE_EQ(km[2].survival, 0.5);
  EXPECT_DOUBLE_EQ(km[3].survival, 0.25);
  EXPECT_DOUBLE_EQ(km[4].survival, 0.0);
  EXPECT_DOUBLE_EQ(km[4].time, 4.0);
}

TEST(KaplanMeier, AllCensored) {
  const auto km = km_curve(std::vector<double>{1, 2, 3}, std::vector<int>(3, 1));
  ASSERT_EQ(km.size(), 1u);
  EXPECT_DOUBLE_EQ(km[0].survival, 1.0);
}

TEST(KaplanMeier, LateCensoringLeavesEarlierSteps) {
  const auto a = km_curve(std::vector<double>{1, 2, 3, 5}, std::vector<int>{0, 1, 0, 0});
  const auto b = km_curve(std::vector<double>{1, 2, 3, 9}, std::vector<int>{0, 1, 0, 1});
  ASSERT_GE(a.size(), 3u);
  ASSERT_EQ(b.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(a[i].survival, b[i].survival);
  EXPECT_DOUBLE_EQ(a[2].survival, 0.75 * 0.5);
}

TEST(SurvivalReport, GroupsAndCurves) {
  const std::vector<double> risk = {4, 3, 2, 1}, t = {1, 2, 3, 4};
  const std::vector<int> c(4, 0);
  const auto r = survival_report(risk, t, c);
  EXPECT_DOUBLE_EQ(r.c_index, 1.0);
  EXPECT_EQ(r.km_high.back().time, 2.0);
  EXPECT_EQ(r.km_low.back().time, 4.0);
  EXPECT_GT(r.log_rank.statistic, 0.0);
}

}  // namespace
}  // namespace fedbag
