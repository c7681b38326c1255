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
#include <mmoeex/task.hpp>

#include <nlohmann/json.hpp>

namespace mmoeex {

std::size_t TaskSpec::output_dim() const {
  return kind == OutputKind::binary ? 1 : classes;
}

void TaskSpec::validate() const {
  if (name.empty())
    throw ConfigError("task without a name");
  if (!(pos_weight > 0.0))
    throw ConfigError("task '" + name + "': pos_weight must be positive");
  if (metric == MetricKind::kappa && kind != OutputKind::multiclass)
    throw ConfigError("task '" + name + "': kappa requires a multiclass task");
  if (kind == OutputKind::multiclass) {
    if (classes < 2)
      throw ConfigError("task '" + name + "': multiclass needs >= 2 classes");
    if (loss != LossKind::cross_entropy)
      throw ConfigError("task '" + name +
                        "': multiclass tasks use cross_entropy loss");
  } else if (loss != LossKind::bce) {
    throw ConfigError("task '" + name + "': binary/multilabel tasks use bce");
  }
  if (kind == OutputKind::multilabel && classes < 1)
    throw ConfigError("task '" + name + "': multilabel needs >= 1 label");
}

TaskSpec TaskSpec::binary(std::string name, double pos_weight,
                          Temporal temporal) {
  TaskSpec t;
  t.name = std::move(name);
  t.pos_weight = pos_weight;
  t.temporal = temporal;
  return t;
}

TaskSpec TaskSpec::multiclass(std::string name, std::size_t classes,
                              Temporal temporal) {
  TaskSpec t;
  t.name = std::move(name);
  t.kind = OutputKind::multiclass;
  t.classes = classes;
  t.temporal = temporal;
  t.loss = LossKind::cross_entropy;
  t.metric = MetricKind::kappa;
  return t;
}

TaskSpec TaskSpec::multilabel(std::string name, std::size_t labels,
                              double pos_weight) {
  TaskSpec t;
  t.name = std::move(name);
  t.kind = OutputKind::multilabel;
  t.classes = labels;
  t.pos_weight = pos_weight;
  return t;
}

std::string_view to_string(OutputKind v) {
  switch (v) {
  case OutputKind::binary: return "binary";
  case OutputKind::multiclass: return "multiclass";
  case OutputKind::multilabel: return "multilabel";
  }
  return "?";
}

std::string_view to_string(Temporal v) {
  switch (v) {
  case Temporal::per_sequence: return "per_sequence";
  case Temporal::per_step: return "per_step";
  case Temporal::first_window: return "first_window";
  }
  return "?";
}

std::string_view to_string(LossKind v) {
  return v == LossKind::bce ? "bce" : "cross_entropy";
}

std::string_view to_string(MetricKind v) {
  return v == MetricKind::auc ? "auc" : "kappa";
}

OutputKind parse_output_kind(std::string_view s) {
  if (s == "binary") return OutputKind::binary;
  if (s == "multiclass") return OutputKind::multiclass;
  if (s == "multilabel") return OutputKind::multilabel;
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

Temporal parse_temporal(std::string_view s) {
  if (s == "per_sequence") return Temporal::per_sequence;
  if (s == "per_step") return Temporal::per_step;
  if (s == "first_window") return Temporal::first_window;
  throw ConfigError("unknown temporal layout '" + std::string(s) + "'");
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "bce") return LossKind::bce;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

MetricKind parse_metric_kind(std::string_view s) {
  if (s == "auc") return MetricKind::auc;
  if (s == "kappa") return MetricKind::kappa;
  throw ConfigError("unknown metric '" + std::string(s) + "'");
}

void to_json(nlohmann::json &j, const TaskSpec &t) {
  j = nlohmann::json{{"name", t.name},
                     {"kind", to_string(t.kind)},
                     {"classes", t.classes},
                     {"temporal", to_string(t.temporal)},
                     {"loss", to_string(t.loss)},
                     {"pos_weight", t.pos_weight},
                     {"metric", to_string(t.metric)}};
}

void from_json(const nlohmann::json &j, TaskSpec &t) {
  t = TaskSpec{};
  t.name = j.at("name").get<std::string>();
  t.kind = parse_output_kind(j.value("kind", std::string("binary")));
  t.classes = j.value("classes", std::size_t{1});
  t.temporal = parse_temporal(j.value("temporal", std::string("per_sequence")));
  const bool multiclass = t.kind == OutputKind::multiclass;
  t.loss = parse_loss_kind(
      j.value("loss", std::string(multiclass ? "cross_entropy" : "bce")));
  t.pos_weight = j.value("pos_weight", 1.0);
  t.metric =
      parse_metric_kind(j.value("metric", std::string(multiclass ? "kappa" : "auc")));
  t.validate();
}

} // namespace mmoeex
