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
#include <mmoeex/model.hpp>

#include <nlohmann/json.hpp>

#include <random>

namespace mmoeex {

std::string_view to_string(ModelKind k) {
  switch (k) {
  case ModelKind::stl: return "stl";
  case ModelKind::shared_bottom: return "shared_bottom";
  case ModelKind::mmoe: return "mmoe";
  case ModelKind::mmoeex: return "mmoeex";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "stl") return ModelKind::stl;
  if (s == "shared_bottom") return ModelKind::shared_bottom;
  if (s == "mmoe") return ModelKind::mmoe;
  if (s == "mmoeex") return ModelKind::mmoeex;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

std::size_t ModelSpec::expert_count() const { return gated() ? experts : 1; }

bool ModelSpec::gated() const {
  return kind == ModelKind::mmoe || kind == ModelKind::mmoeex;
}

void ModelSpec::validate() const {
  if (tasks.empty())
    throw ConfigError("model has no tasks");
  for (const TaskSpec &t : tasks) {
    t.validate();
    if (t.kind == OutputKind::multilabel && t.temporal == Temporal::per_step)
      throw ConfigError("task '" + t.name +
                        "': multilabel towers cannot be per_step");
    if (!temporal && t.temporal != Temporal::per_sequence)
      throw ConfigError("task '" + t.name + "' is " +
                        std::string(to_string(t.temporal)) +
                        " but the input has no time axis");
  }
  expert.validate();
  if (experts < 1)
    throw ConfigError("model needs at least one expert");
  if (expert.temporal() && !temporal)
    throw ConfigError(std::string(to_string(expert.kind)) +
                      " experts need temporal input");
  if (window < 1)
    throw ConfigError("tower window must be >= 1");
  if (kind != ModelKind::mmoeex && (mask_mode != MaskMode::none || alpha != 0.0))
    throw ConfigError("alpha and mask_mode are only valid for mmoeex");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("alpha must lie in [0, 1]");
  if (kind == ModelKind::stl && tasks.size() != 1)
    throw ConfigError("an stl model holds exactly one task");
}

std::size_t parameter_count(const ModelSpec &spec) {
  std::size_t n = spec.expert_count() * parameter_count(spec.expert);
  for (const TaskSpec &t : spec.tasks) {
    TowerSpec tower;
    tower.input_dim = spec.expert.hidden_dim;
    tower.hidden = spec.tower_hidden;
    tower.output_dim = t.output_dim();
    n += parameter_count(tower);
  }
  if (spec.gated())
    n += spec.tasks.size() * spec.experts * spec.expert.input_dim;
  return n;
}

MultiTaskModel::MultiTaskModel(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec_.seed),
                    static_cast<std::uint32_t>(spec_.seed >> 32), 0x696e6974u};
  std::mt19937_64 rng(seq);

  const std::size_t count = spec_.expert_count();
  for (std::size_t e = 0; e < count; ++e)
    experts_.push_back(Expert::create(spec_.expert, params_, rng,
                                      "expert" + std::to_string(e)));
  for (std::size_t k = 0; k < spec_.tasks.size(); ++k) {
    TowerSpec tower;
    tower.task = k;
    tower.input_dim = spec_.expert.hidden_dim;
    tower.hidden = spec_.tower_hidden;
    tower.output_dim = spec_.tasks[k].output_dim();
    tower.temporal = spec_.tasks[k].temporal;
    tower.window = spec_.window;
    tower.activation = spec_.tower_activation;
    towers_.push_back(Tower::create(tower, params_, rng,
                                    "tower" + std::to_string(k)));
  }
  if (spec_.gated()) {
    for (std::size_t k = 0; k < spec_.tasks.size(); ++k)
      gates_.push_back(params_.add(
          "gate" + std::to_string(k) + ".weight",
          uniform_fan_in(count, spec_.expert.input_dim, rng)));
  }
  if (spec_.kind == ModelKind::mmoeex)
    mask_ = build_mask(spec_.tasks.size(), count, spec_.alpha, spec_.mask_mode,
                       spec_.seed);
  else
    mask_ = GateMask(spec_.tasks.size(), count);
}

Sequence MultiTaskModel::bind_inputs(Tape &tape, const Batch &batch) const {
  Sequence x;
  x.reserve(batch.inputs.size());
  for (const Tensor &step : batch.inputs)
    x.push_back(tape.constant(step));
  return x;
}

std::vector<Sequence>
MultiTaskModel::expert_outputs(std::span<const Var> params,
                               const Sequence &x) const {
  if (params.size() != params_.size())
    throw ContractError("model expects " + std::to_string(params_.size()) +
                        " bound parameters, got " +
                        std::to_string(params.size()));
  if (!spec_.temporal && x.size() != 1)
    throw ShapeError("tabular model given a sequence of " +
                     std::to_string(x.size()) + " steps");
  std::vector<Sequence> outs;
  outs.reserve(experts_.size());
  for (const Expert &e : experts_)
    outs.push_back(expert_forward(e, params, x));
  return outs;
}

Sequence MultiTaskModel::gate_weights(std::span<const Var> params,
                                      const Sequence &x,
                                      std::size_t task) const {
  if (!spec_.gated())
    throw ContractError("model has no gates");
  Sequence g;
  for (Var step : x)
    g.push_back(gate_forward(params[gates_.at(task)], step, mask_.row(task)));
  return g;
}

std::vector<Sequence> MultiTaskModel::forward(std::span<const Var> params,
                                              const Sequence &x) const {
  const std::vector<Sequence> outs = expert_outputs(params, x);
  std::vector<Sequence> logits(towers_.size());
  std::vector<Var> at_step(outs.size());
  for (std::size_t k = 0; k < towers_.size(); ++k) {
    for (std::size_t t : tower_steps(towers_[k].spec, x.size())) {
      Var f;
      if (spec_.gated()) {
        for (std::size_t e = 0; e < outs.size(); ++e)
          at_step[e] = outs[e][t];
        Var g = gate_forward(params[gates_[k]], x[t], mask_.row(k));
        f = mixture_forward(g, at_step);
      } else {
        f = outs[0][t];
      }
      logits[k].push_back(tower_head(towers_[k], params, f));
    }
  }
  return logits;
}

Var task_loss(const TaskSpec &task, const Sequence &logits,
              const TaskLabels &labels) {
  if (logits.empty())
    throw ShapeError("task '" + task.name + "' has no logits");
  Var z = logits.size() == 1 ? logits[0] : ad::concat(logits, 0);
  if (task.kind == OutputKind::multiclass) {
    if (labels.values.size() != z.rows())
      throw ShapeError("task '" + task.name + "': " +
                       std::to_string(labels.values.size()) +
                       " labels for logits " + ad::to_string(z.shape()));
    std::vector<int> targets(labels.values.size());
    for (std::size_t i = 0; i < targets.size(); ++i)
      targets[i] = labels.observed[i] ? static_cast<int>(labels.values[i]) : 0;
    return ad::cross_entropy(z, targets, labels.observed);
  }
  return ad::bce_with_logits(z, labels.values, task.pos_weight,
                             labels.observed);
}

TaskLossFn make_task_loss(const MultiTaskModel &model, const Batch &batch) {
  return [&model, &batch](Tape &tape, std::span<const Var> params) {
    const Sequence x = model.bind_inputs(tape, batch);
    const std::vector<Sequence> logits = model.forward(params, x);
    std::vector<Var> losses;
    losses.reserve(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k)
      losses.push_back(
          task_loss(model.spec().tasks[k], logits[k], batch.labels[k]));
    return losses;
  };
}

void to_json(nlohmann::json &j, const ModelSpec &s) {
  j = nlohmann::json{
      {"kind", to_string(s.kind)},
      {"tasks", s.tasks},
      {"expert",
       {{"kind", to_string(s.expert.kind)},
        {"input_dim", s.expert.input_dim},
        {"hidden_dim", s.expert.hidden_dim},
        {"activation", to_string(s.expert.activation)}}},
      {"experts", s.experts},
      {"tower_hidden", s.tower_hidden},
      {"tower_activation", to_string(s.tower_activation)},
      {"window", s.window},
      {"temporal", s.temporal},
      {"mask_mode", to_string(s.mask_mode)},
      {"alpha", s.alpha},
      {"seed", s.seed}};
}

void from_json(const nlohmann::json &j, ModelSpec &s) {
  s = ModelSpec{};
  s.kind = parse_model_kind(j.at("kind").get<std::string>());
  s.tasks = j.at("tasks").get<std::vector<TaskSpec>>();
  const auto &e = j.at("expert");
  s.expert.kind = parse_expert_kind(e.at("kind").get<std::string>());
  s.expert.input_dim = e.at("input_dim").get<std::size_t>();
  s.expert.hidden_dim = e.at("hidden_dim").get<std::size_t>();
  s.expert.activation =
      parse_activation(e.value("activation", std::string("relu")));
  s.experts = j.at("experts").get<std::size_t>();
  s.tower_hidden = j.at("tower_hidden").get<std::vector<std::size_t>>();
  s.tower_activation =
      parse_activation(j.value("tower_activation", std::string("none")));
  s.window = j.value("window", std::size_t{1});
  s.temporal = j.value("temporal", false);
  s.mask_mode = parse_mask_mode(j.value("mask_mode", std::string("none")));
  s.alpha = j.value("alpha", 0.0);
  s.seed = j.value("seed", std::uint64_t{0});
  s.validate();
}

} // namespace mmoeex
