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
 *
 * @file   metrics.hpp
 * @brief  ROC AUC, Cohen's kappa, task scoring, and STL-vs-MTL comparison
 *         statistics (average relative improvement and negative transfer).
 */
#pragma once

#include <mmoeex/data.hpp>
#include <mmoeex/task.hpp>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mmoeex {

/// Mann-Whitney AUC with midranks: P(s+ > s-) + P(s+ == s-) / 2.
/// Labels must be 0 or 1 with both classes present, otherwise
/// UndefinedMetricError (single class) or DomainError (other values).
double roc_auc(std::span<const double> scores, std::span<const double> labels);

/// (p_o - p_e) / (1 - p_e) over classes [0, classes). classes = 0 infers
/// max + 1. When p_e == 1 the score is defined as 0 and a warning is issued.
double cohen_kappa(std::span<const int> predicted, std::span<const int> truth,
                   std::size_t classes = 0);

struct TaskResult {
  std::string task;
  MetricKind metric = MetricKind::auc;
  /// NaN when the metric is undefined on the evaluated slice.
  double value = 0.0;
  std::size_t samples = 0;

  bool defined() const;
  bool operator==(const TaskResult &) const = default;
};

/// Scores a task from its logits. Rows of the logits follow the TaskLabels
/// layout; each row has task.output_dim() columns.
///   binary:     AUC of the logit over observed rows (per-step rows pooled)
///   multiclass: kappa of the argmax class
///   multilabel: macro AUC over labels whose slice holds both classes
/// An undefined metric yields value NaN with a warning.
TaskResult score_task(const TaskSpec &task, std::span<const double> logits,
                      const TaskLabels &labels);

/// Mean relative change in percent: 100 / K * sum_k (mtl_k - stl_k) / stl_k.
double delta_improvement(std::span<const double> stl,
                         std::span<const double> mtl);

/// Number of tasks with mtl_k < stl_k.
std::size_t negative_transfer(std::span<const double> stl,
                              std::span<const double> mtl);

struct ComparisonRow {
  std::string model;
  std::vector<double> values;
  double delta = 0.0;
  std::size_t nt = 0;
};

struct ComparisonReport {
  std::vector<std::string> tasks;
  std::vector<double> stl;
  std::vector<ComparisonRow> rows;

  /// Comma-separated table: model, one column per task, delta_pct, nt.
  /// The STL baseline is the first row.
  std::string to_csv() const;
};

/// Matches results by task name; ContractError when a task set differs.
ComparisonRow compare_results(const std::string &model,
                              std::span<const TaskResult> stl,
                              std::span<const TaskResult> mtl);

} // namespace mmoeex
