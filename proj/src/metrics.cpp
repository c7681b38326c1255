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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace mmoeex {

double roc_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size())
    throw ShapeError("roc_auc: " + std::to_string(scores.size()) +
                     " scores for " + std::to_string(labels.size()) +
                     " labels");
  std::size_t pos = 0;
  for (double y : labels) {
    if (y != 0.0 && y != 1.0)
      throw DomainError("roc_auc: labels must be 0 or 1");
    pos += y == 1.0 ? 1 : 0;
  }
  const std::size_t n = labels.size(), neg = n - pos;
  if (pos == 0 || neg == 0)
    throw UndefinedMetricError("roc_auc: labels hold a single class");
  for (double s : scores)
    if (std::isnan(s))
      throw DomainError("roc_auc: NaN score");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the positive rank sum keeps midranks integral.
  double rank_sum_x2 = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]])
      ++j;
    const double midrank_x2 = static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1.0)
        rank_sum_x2 += midrank_x2;
    i = j + 1;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  const double u = rank_sum_x2 / 2.0 - p * (p + 1.0) / 2.0;
  return u / (p * q);
}

double cohen_kappa(std::span<const int> predicted, std::span<const int> truth,
                   std::size_t classes) {
  if (predicted.size() != truth.size())
    throw ShapeError("cohen_kappa: vectors differ in length");
  if (predicted.empty())
    throw UndefinedMetricError("cohen_kappa: no samples");
  if (classes == 0) {
    int hi = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      hi = std::max({hi, predicted[i], truth[i]});
    classes = static_cast<std::size_t>(hi) + 1;
  }
  std::vector<double> row(classes, 0.0), col(classes, 0.0);
  double agree = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int a = predicted[i], b = truth[i];
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= classes ||
        static_cast<std::size_t>(b) >= classes)
      throw DomainError("cohen_kappa: class index out of range");
    row[static_cast<std::size_t>(a)] += 1.0;
    col[static_cast<std::size_t>(b)] += 1.0;
    agree += a == b ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(truth.size());
  const double p_o = agree / n;
  double p_e = 0.0;
  for (std::size_t c = 0; c < classes; ++c)
    p_e += (row[c] / n) * (col[c] / n);
  if (p_e == 1.0) {
    warn("cohen_kappa: chance agreement is 1 (single class); reporting 0");
    return 0.0;
  }
  return (p_o - p_e) / (1.0 - p_e);
}

bool TaskResult::defined() const { return !std::isnan(value); }

TaskResult score_task(const TaskSpec &task, std::span<const double> logits,
                      const TaskLabels &labels) {
  const std::size_t width = task.output_dim();
  const std::size_t rows = labels.values.size() /
                           (task.kind == OutputKind::multilabel ? width : 1);
  if (logits.size() != rows * width)
    throw ShapeError("score_task: " + std::to_string(logits.size()) +
                     " logits for " + std::to_string(rows) + " rows of task '" +
                     task.name + "'");
  TaskResult r;
  r.task = task.name;
  r.metric = task.metric;
  r.value = std::numeric_limits<double>::quiet_NaN();

  auto undefined = [&](const std::string &why) {
    warn("task '" + task.name + "': metric undefined (" + why + ")");
    return r;
  };

  if (task.kind == OutputKind::multiclass) {
    std::vector<int> pred, truth;
    for (std::size_t i = 0; i < rows; ++i) {
      if (!labels.observed[i])
        continue;
      const double *z = logits.data() + i * width;
      pred.push_back(static_cast<int>(std::max_element(z, z + width) - z));
      truth.push_back(static_cast<int>(labels.values[i]));
    }
    r.samples = truth.size();
    if (truth.empty())
      return undefined("no observed labels");
    r.value = cohen_kappa(pred, truth, task.classes);
    return r;
  }

  if (task.kind == OutputKind::binary) {
    std::vector<double> s, y;
    for (std::size_t i = 0; i < rows; ++i)
      if (labels.observed[i]) {
        s.push_back(logits[i]);
        y.push_back(labels.values[i]);
      }
    r.samples = y.size();
    try {
      r.value = roc_auc(s, y);
    } catch (const UndefinedMetricError &e) {
      return undefined(e.what());
    }
    return r;
  }

  double total = 0.0;
  std::size_t defined_labels = 0;
  for (std::size_t l = 0; l < width; ++l) {
    std::vector<double> s, y;
    for (std::size_t i = 0; i < rows; ++i)
      if (labels.observed[i * width + l]) {
        s.push_back(logits[i * width + l]);
        y.push_back(labels.values[i * width + l]);
      }
    r.samples = std::max(r.samples, y.size());
    try {
      total += roc_auc(s, y);
      ++defined_labels;
    } catch (const UndefinedMetricError &) {
    }
  }
  if (defined_labels == 0)
    return undefined("every label slice holds a single class");
  r.value = total / static_cast<double>(defined_labels);
  return r;
}

namespace {

void check_pair(std::span<const double> stl, std::span<const double> mtl) {
  if (stl.size() != mtl.size())
    throw ContractError("comparison needs the same task set on both sides");
  if (stl.empty())
    throw ContractError("comparison needs at least one task");
}

} // namespace

double delta_improvement(std::span<const double> stl,
                         std::span<const double> mtl) {
  check_pair(stl, mtl);
  double sum = 0.0;
  for (std::size_t k = 0; k < stl.size(); ++k) {
    if (!(stl[k] > 0.0))
      throw DomainError("delta_improvement: STL values must be positive");
    sum += (mtl[k] - stl[k]) / stl[k];
  }
  return 100.0 * sum / static_cast<double>(stl.size());
}

std::size_t negative_transfer(std::span<const double> stl,
                              std::span<const double> mtl) {
  check_pair(stl, mtl);
  std::size_t n = 0;
  for (std::size_t k = 0; k < stl.size(); ++k)
    n += mtl[k] < stl[k] ? 1 : 0;
  return n;
}

ComparisonRow compare_results(const std::string &model,
                              std::span<const TaskResult> stl,
                              std::span<const TaskResult> mtl) {
  if (stl.size() != mtl.size())
    throw ContractError("model '" + model + "' reports " +
                        std::to_string(mtl.size()) + " tasks, baseline has " +
                        std::to_string(stl.size()));
  std::vector<double> base, values;
  for (const TaskResult &s : stl) {
    auto it = std::find_if(mtl.begin(), mtl.end(), [&](const TaskResult &m) {
      return m.task == s.task;
    });
    if (it == mtl.end())
      throw ContractError("model '" + model + "' has no result for task '" +
                          s.task + "'");
    if (!s.defined() || !it->defined())
      throw UndefinedMetricError("task '" + s.task +
                                 "' has an undefined metric; cannot compare");
    base.push_back(s.value);
    values.push_back(it->value);
  }
  ComparisonRow row;
  row.model = model;
  row.values = values;
  row.delta = delta_improvement(base, values);
  row.nt = negative_transfer(base, values);
  return row;
}

std::string ComparisonReport::to_csv() const {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string out = "model";
  for (const std::string &t : tasks)
    out += "," + t;
  out += ",delta_pct,nt\n";
  out += "stl";
  for (double v : stl)
    out += "," + fmt(v);
  out += ",0,0\n";
  for (const ComparisonRow &r : rows) {
    out += r.model;
    for (double v : r.values)
      out += "," + fmt(v);
    out += "," + fmt(r.delta) + "," + std::to_string(r.nt) + "\n";
  }
  return out;
}

} // namespace mmoeex
