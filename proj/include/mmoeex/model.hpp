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
 * @file   model.hpp
 * @brief  Multi-task model composition: experts -> per-task gates and
 *         mixtures -> towers.
 *
 * For temporal inputs the gates read the input at each step, so every step
 * gets its own mixture. Parameters are registered experts first, then towers,
 * then gates; a one-expert MMoE therefore shares its initial weights with the
 * shared-bottom model of the same seed.
 */
#pragma once

#include <mmoeex/data.hpp>
#include <mmoeex/experts.hpp>
#include <mmoeex/gating.hpp>
#include <mmoeex/task.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mmoeex {

enum class ModelKind { stl, shared_bottom, mmoe, mmoeex };

std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view s);

struct ModelSpec {
  ModelKind kind = ModelKind::mmoeex;
  std::vector<TaskSpec> tasks;
  ExpertSpec expert;
  std::size_t experts = 12;
  std::vector<std::size_t> tower_hidden{4};
  Activation tower_activation = Activation::none;
  /// Window of first_window towers.
  std::size_t window = 1;
  /// Input carries a time axis.
  bool temporal = false;
  MaskMode mask_mode = MaskMode::none;
  double alpha = 0.0;
  std::uint64_t seed = 0;

  /// Expert count actually instantiated (1 for shared-bottom and STL).
  std::size_t expert_count() const;
  bool gated() const;
  void validate() const;
  bool operator==(const ModelSpec &) const = default;
};

void to_json(nlohmann::json &j, const ModelSpec &s);
void from_json(const nlohmann::json &j, ModelSpec &s);

/// Closed-form learnable scalar count of a model built from `spec`.
std::size_t parameter_count(const ModelSpec &spec);

/// Shared-bottom, MMoE or MMoEEx network. STL is a set of single-task
/// shared-bottom models and is assembled by the experiment harness.
class MultiTaskModel {
public:
  explicit MultiTaskModel(ModelSpec spec);

  const ModelSpec &spec() const { return spec_; }
  ParameterSet &parameters() { return params_; }
  const ParameterSet &parameters() const { return params_; }
  const GateMask &mask() const { return mask_; }
  std::size_t task_count() const { return spec_.tasks.size(); }
  const std::vector<Expert> &experts() const { return experts_; }
  const std::vector<Tower> &towers() const { return towers_; }
  /// Parameter index of task k's gate weight [E x d]; only for gated models.
  std::size_t gate_param(std::size_t task) const { return gates_.at(task); }

  /// Binds a batch's per-step inputs as constants.
  Sequence bind_inputs(Tape &tape, const Batch &batch) const;
  /// Per-task logits; entry t of a task's sequence is [batch x output_dim]
  /// for the t-th step that task's tower reads.
  std::vector<Sequence> forward(std::span<const Var> params,
                                const Sequence &x) const;
  /// Output sequence of every expert.
  std::vector<Sequence> expert_outputs(std::span<const Var> params,
                                       const Sequence &x) const;
  /// Gate weights of task k at every step, [batch x E] each.
  Sequence gate_weights(std::span<const Var> params, const Sequence &x,
                        std::size_t task) const;

private:
  ModelSpec spec_;
  ParameterSet params_;
  GateMask mask_;
  std::vector<Expert> experts_;
  std::vector<Tower> towers_;
  std::vector<std::size_t> gates_;
};

/// Loss of one task from its logits and batch labels.
Var task_loss(const TaskSpec &task, const Sequence &logits,
              const TaskLabels &labels);

/// Per-task loss graph over a parameter binding.
using TaskLossFn =
    std::function<std::vector<Var>(Tape &, std::span<const Var>)>;

/// Loss builder for `model` on `batch`. Both must outlive the returned
/// function.
TaskLossFn make_task_loss(const MultiTaskModel &model, const Batch &batch);

} // namespace mmoeex
