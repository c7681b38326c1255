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
 * @file   optim.hpp
 * @brief  Optimizers, step-decay schedule, joint and MAML-MTL training steps,
 *         and best-epoch selection.
 *
 * Steps operate on a ParameterSet and a per-task loss builder, so they apply
 * equally to full models and to hand-built toy problems.
 */
#pragma once

#include <mmoeex/experts.hpp>
#include <mmoeex/model.hpp>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mmoeex {

/// Gradient-based update over every tensor of a ParameterSet, reading
/// Tensor::grad.
class Optimizer {
public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<Tensor> &params) = 0;

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr);
  double weight_decay() const { return weight_decay_; }

protected:
  Optimizer(double lr, double weight_decay);

  double lr_;
  double weight_decay_;
};

/// theta <- theta - lr * (grad + weight_decay * theta).
class GradientDescent final : public Optimizer {
public:
  explicit GradientDescent(double lr, double weight_decay = 0.0);
  void step(std::vector<Tensor> &params) override;
};

/// Adam with decoupled weight decay:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
class Adam final : public Optimizer {
public:
  explicit Adam(double lr = 1e-3, double weight_decay = 1e-3,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::vector<Tensor> &params) override;

  std::size_t step_count() const { return t_; }
  const std::vector<std::vector<double>> &first_moments() const { return m_; }
  const std::vector<std::vector<double>> &second_moments() const { return v_; }

private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// lr(epoch) = base_lr * factor^floor(epoch / interval).
struct StepDecaySchedule {
  double base_lr = 1e-3;
  double factor = 0.9;
  std::size_t interval = 10;

  double lr(std::size_t epoch) const;
};

struct MamlConfig {
  bool enabled = false;
  /// Step size of the temporary per-task update.
  double inner_lr = 1e-3;
  /// Permits MAML-MTL with more than kMamlTaskLimit tasks.
  bool allow_many_tasks = false;

  /// Enabled configs need inner_lr > 0 and respect the task limit.
  void validate(std::size_t tasks) const;
  /// ConfigError past kMamlTaskLimit tasks unless allow_many_tasks, which
  /// downgrades it to a warning.
  void check_task_limit(std::size_t tasks) const;
};

inline constexpr std::size_t kMamlTaskLimit = 64;

/// Where a step happens, for NaN diagnostics.
struct StepContext {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::vector<std::string> task_names;
};

/// Called inside maml_mtl_step after each task's re-evaluation, before the
/// outer update.
using MamlObserver = std::function<void(std::size_t task, const ParameterSet &)>;

/// Sum of task losses, one backward, one optimizer update. Returns the task
/// losses before the update.
std::vector<double> joint_step(ParameterSet &params, const TaskLossFn &loss,
                               Optimizer &optimizer, const StepContext &ctx);

/// First-order MAML-MTL step. For each task T: theta'_T = theta - inner_lr *
/// grad L_T(theta) over all parameters, then grad L_T(theta'_T) is
/// accumulated. The accumulated gradient is fed to the optimizer. Returns the
/// task losses at theta.
std::vector<double> maml_mtl_step(ParameterSet &params, const TaskLossFn &loss,
                                  Optimizer &optimizer, const MamlConfig &maml,
                                  const StepContext &ctx,
                                  const MamlObserver &observer = {});

/// Accumulated MAML-MTL gradient without applying it (one vector per
/// parameter tensor). inner_lr = 0 is allowed here and reduces to the sum of
/// per-task gradients at theta. Parameter values are left untouched; their grad
/// buffers are overwritten.
std::vector<std::vector<double>>
maml_accumulated_gradient(ParameterSet &params, const TaskLossFn &loss,
                          const MamlConfig &maml, const StepContext &ctx,
                          const MamlObserver &observer = {},
                          std::vector<double> *losses_at_theta = nullptr);

/// Index of the epoch with the largest sum of per-task validation metrics,
/// earliest on ties. NaN entries (undefined metrics) are left out of the sum.
std::size_t select_best(std::span<const std::vector<double>> history);

} // namespace mmoeex
