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
#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

namespace mmoeex {

enum class OutputKind { binary, multiclass, multilabel };
enum class Temporal { per_sequence, per_step, first_window };
enum class LossKind { bce, cross_entropy };
enum class MetricKind { auc, kappa };

/// Per-task metadata.
struct TaskSpec {
  std::string name;
  OutputKind kind = OutputKind::binary;
  /// C for multiclass, L for multilabel, ignored for binary.
  std::size_t classes = 1;
  Temporal temporal = Temporal::per_sequence;
  LossKind loss = LossKind::bce;
  double pos_weight = 1.0;
  MetricKind metric = MetricKind::auc;

  /// Width of the tower output layer.
  std::size_t output_dim() const;
  /// Throws ConfigError when the fields are inconsistent.
  void validate() const;

  static TaskSpec binary(std::string name, double pos_weight = 1.0,
                         Temporal temporal = Temporal::per_sequence);
  static TaskSpec multiclass(std::string name, std::size_t classes,
                             Temporal temporal = Temporal::per_sequence);
  static TaskSpec multilabel(std::string name, std::size_t labels,
                             double pos_weight = 1.0);

  bool operator==(const TaskSpec &) const = default;
};

std::string_view to_string(OutputKind v);
std::string_view to_string(Temporal v);
std::string_view to_string(LossKind v);
std::string_view to_string(MetricKind v);
OutputKind parse_output_kind(std::string_view s);
Temporal parse_temporal(std::string_view s);
LossKind parse_loss_kind(std::string_view s);
MetricKind parse_metric_kind(std::string_view s);

void to_json(nlohmann::json &j, const TaskSpec &t);
void from_json(const nlohmann::json &j, TaskSpec &t);

} // namespace mmoeex
