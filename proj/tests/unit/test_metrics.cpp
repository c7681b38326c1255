/**
 * Copyright (C) 2026 The MMoEEx Lab Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *   http://www.apache.org/licenses/LICENSE-2.0
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <mmoeex/errors.hpp>
#include <mmoeex/log.hpp>
#include <mmoeex/metrics.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mmoeex;

namespace {

// P(s+ > s-) + P(s+ == s-) / 2 by enumerating every positive/negative pair.
double pair_count_auc(const std::vector<double> &s, const std::vector<double> &y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1.0 && y[j] == 0.0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

double confusion_kappa(const std::vector<int> &p, const std::vector<int> &t,
                       int classes) {
  std::vector<std::vector<double>> m(classes, std::vector<double>(classes, 0.0));
  for (std::size_t i = 0; i < p.size(); ++i)
    m[t[i]][p[i]] += 1.0;
  const double n = static_cast<double>(p.size());
  double diag = 0.0, chance = 0.0;
  for (int a = 0; a < classes; ++a) {
    diag += m[a][a];
    double row = 0.0, col = 0.0;
    for (int b = 0; b < classes; ++b) {
      row += m[a][b];
      col += m[b][a];
    }
    chance += row * col;
  }
  const double po = diag / n, pe = chance / (n * n);
  return (po - pe) / (1.0 - pe);
}

struct Instance {
  std::vector<double> scores, labels;
};

Instance random_instance(std::mt19937_64 &rng) {
  std::uniform_int_distribution<int> size(2, 20), coin(0, 1), level(0, 5);
  Instance in;
  const int n = size(rng);
  for (int i = 0; i < n; ++i) {
    // Few distinct levels so ties are common.
    in.scores.push_back(level(rng) * 0.25);
    in.labels.push_back(coin(rng));
  }
  in.labels[0] = 0.0;
  in.labels[1] = 1.0;
  return in;
}

const std::vector<double> kStl{88.95, 97.48, 87.23};
const std::vector<double> kSharedBottom{91.09, 97.98, 86.99};
const std::vector<double> kMmoe{90.86, 96.70, 86.33};
const std::vector<double> kMmoeex{92.51, 98.47, 87.19};

} // namespace

TEST(Metrics, AucMatchesPairCountingExactly) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const Instance in = random_instance(rng);
    EXPECT_EQ(roc_auc(in.scores, in.labels), pair_count_auc(in.scores, in.labels))
        << "instance " << i;
  }
}

TEST(Metrics, AucExamples) {
  const std::vector<double> y{0, 0, 1, 1};
  EXPECT_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{3, 3, 3, 3}, y), 0.5);
  const std::vector<double> s6{0.2, 0.9, 0.4, 0.4, 0.7, 0.1};
  const std::vector<double> y6{0, 1, 1, 0, 0, 1};
  // Pairs (pos, neg): wins 0.9>all = 3, 0.4 vs {0.2 win, 0.4 tie, 0.7 loss},
  // 0.1 loses all; (3 + 1.5 + 0) / 9.
  EXPECT_DOUBLE_EQ(roc_auc(s6, y6), 4.5 / 9.0);
}

TEST(Metrics, AucInvariances) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const Instance in = random_instance(rng);
    std::vector<double> warped, negated;
    for (double s : in.scores) {
      warped.push_back(std::exp(3.0 * s) + 7.0);
      negated.push_back(-s);
    }
    const double a = roc_auc(in.scores, in.labels);
    EXPECT_EQ(roc_auc(warped, in.labels), a);
    EXPECT_EQ(a + roc_auc(negated, in.labels), 1.0);
  }
}

TEST(Metrics, AucErrors) {
  const std::vector<double> s{0.1, 0.2};
  EXPECT_THROW(roc_auc(s, std::vector<double>{1, 1}), UndefinedMetricError);
  EXPECT_THROW(roc_auc(s, std::vector<double>{0, 2}), DomainError);
}

TEST(Metrics, KappaMatchesConfusionFormula) {
  // Hand-built 3-class table.
  const std::vector<int> truth{0, 0, 0, 1, 1, 1, 2, 2, 2, 2};
  const std::vector<int> pred{0, 0, 1, 1, 1, 2, 2, 2, 0, 2};
  EXPECT_NEAR(cohen_kappa(pred, truth), confusion_kappa(pred, truth, 3), 1e-12);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    std::uniform_int_distribution<int> c(0, 3);
    std::vector<int> p(30), t(30);
    for (int j = 0; j < 30; ++j) {
      t[j] = c(rng);
      p[j] = c(rng) == 0 ? c(rng) : t[j];
    }
    EXPECT_NEAR(cohen_kappa(p, t, 4), confusion_kappa(p, t, 4), 1e-12);
  }
}

TEST(Metrics, KappaProperties) {
  const std::vector<int> a{0, 1, 2, 2, 1, 0, 1};
  EXPECT_DOUBLE_EQ(cohen_kappa(a, a), 1.0);
  const std::vector<int> b{0, 2, 2, 1, 1, 0, 0};
  const int perm[3] = {2, 0, 1};
  std::vector<int> pa, pb;
  for (int v : a)
    pa.push_back(perm[v]);
  for (int v : b)
    pb.push_back(perm[v]);
  EXPECT_NEAR(cohen_kappa(pa, pb), cohen_kappa(a, b), 1e-15);

  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> c(0, 4);
  std::vector<int> p(10000), t(10000);
  for (int i = 0; i < 10000; ++i) {
    p[i] = c(rng);
    t[i] = c(rng);
  }
  EXPECT_LT(std::abs(cohen_kappa(p, t)), 0.05);
}

TEST(Metrics, KappaDegenerateIsZeroWithWarning) {
  int warnings = 0;
  auto old = set_warning_handler([&](const std::string &) { ++warnings; });
  const std::vector<int> same{1, 1, 1};
  EXPECT_EQ(cohen_kappa(same, same), 0.0);
  set_warning_handler(old);
  EXPECT_EQ(warnings, 1);
}

TEST(Metrics, DeltaOnCensusTable) {
  EXPECT_NEAR(delta_improvement(kStl, kMmoeex), 1.65, 0.02);
  EXPECT_NEAR(delta_improvement(kStl, kSharedBottom), 0.85, 0.05);
  // The MMoE row recomputes to about +0.105 rather than its printed -0.28.
  EXPECT_NEAR(delta_improvement(kStl, kMmoe), 0.105, 0.005);
  EXPECT_EQ(negative_transfer(kStl, kMmoeex), 1u);
  EXPECT_EQ(negative_transfer(kStl, kSharedBottom), 1u);
  EXPECT_EQ(negative_transfer(kStl, kStl), 0u);
  EXPECT_EQ(delta_improvement(kStl, kStl), 0.0);
}

TEST(Metrics, DeltaIsLinearInEachTask) {
  std::vector<double> mtl = kMmoeex;
  const double base = delta_improvement(kStl, mtl);
  mtl[1] += 1.0;
  const double one = delta_improvement(kStl, mtl);
  mtl[1] += 1.0;
  const double two = delta_improvement(kStl, mtl);
  EXPECT_NEAR(two - one, one - base, 1e-12);
  EXPECT_NEAR(one - base, 100.0 / 3.0 / kStl[1], 1e-12);
}

TEST(Metrics, ScoreTaskPerKind) {
  TaskLabels bin{{0, 1, 1, 0}, {1, 1, 1, 0}};
  const auto r = score_task(TaskSpec::binary("b"), std::vector<double>{0.1, 0.5, 0.2, 9.0}, bin);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.samples, 3u);

  TaskLabels mc{{0, 2, 1}, {1, 1, 1}};
  const std::vector<double> logits{5, 0, 0, 0, 0, 5, 0, 5, 0};
  EXPECT_DOUBLE_EQ(score_task(TaskSpec::multiclass("m", 3), logits, mc).value, 1.0);

  // Second label has one class only and is left out of the macro mean.
  TaskLabels ml{{0, 1, 1, 1, 0, 1}, {1, 1, 1, 1, 1, 1}};
  const std::vector<double> ml_logits{0.1, 0.0, 0.9, 0.3, 0.2, 0.4};
  int warnings = 0;
  auto old = set_warning_handler([&](const std::string &) { ++warnings; });
  const auto rm = score_task(TaskSpec::multilabel("p", 2), ml_logits, ml);
  EXPECT_EQ(rm.value, 1.0);

  TaskLabels one_class{{1, 1}, {1, 1}};
  const auto ru = score_task(TaskSpec::binary("u"), std::vector<double>{0.3, 0.4}, one_class);
  set_warning_handler(old);
  EXPECT_FALSE(ru.defined());
  EXPECT_GE(warnings, 1);
}

TEST(Metrics, ComparisonTable) {
  std::vector<TaskResult> stl, mtl;
  const char *names[3] = {"income", "marital", "education"};
  for (int k = 0; k < 3; ++k) {
    stl.push_back({names[k], MetricKind::auc, kStl[k], 100});
    mtl.push_back({names[2 - k], MetricKind::auc, kMmoeex[2 - k], 100});
  }
  const ComparisonRow row = compare_results("mmoeex", stl, mtl);
  EXPECT_EQ(row.values, kMmoeex);
  EXPECT_EQ(row.nt, 1u);
  EXPECT_NEAR(row.delta, delta_improvement(kStl, kMmoeex), 1e-15);

  ComparisonReport rep{{"income", "marital", "education"}, kStl, {row}};
  const std::string csv = rep.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,income,marital,education,delta_pct,nt");
  EXPECT_NE(csv.find("\nstl,88.950000000000003,"), std::string::npos) << csv;
  EXPECT_NE(csv.find(",1\n"), std::string::npos);

  mtl.pop_back();
  EXPECT_THROW(compare_results("short", stl, mtl), ContractError);
}
