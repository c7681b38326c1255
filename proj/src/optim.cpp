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
#include <mmoeex/optim.hpp>

#include <cmath>
#include <limits>

namespace mmoeex {

Optimizer::Optimizer(double lr, double weight_decay)
    : lr_(lr), weight_decay_(weight_decay) {
  set_learning_rate(lr);
  if (!(weight_decay >= 0.0))
    throw ConfigError("weight decay must be non-negative");
}

void Optimizer::set_learning_rate(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw ConfigError("learning rate must be positive");
  lr_ = lr;
}

GradientDescent::GradientDescent(double lr, double weight_decay)
    : Optimizer(lr, weight_decay) {}

void GradientDescent::step(std::vector<Tensor> &params) {
  for (Tensor &p : params) {
    if (p.grad.size() != p.values.size())
      throw ContractError("parameter gradient buffer has the wrong size");
    for (std::size_t i = 0; i < p.values.size(); ++i)
      p.values[i] -= lr_ * (p.grad[i] + weight_decay_ * p.values[i]);
  }
}

Adam::Adam(double lr, double weight_decay, double beta1, double beta2,
           double eps)
    : Optimizer(lr, weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0))
    throw ConfigError("Adam epsilon must be positive");
}

void Adam::step(std::vector<Tensor> &params) {
  if (m_.empty()) {
    for (const Tensor &p : params) {
      m_.emplace_back(p.values.size(), 0.0);
      v_.emplace_back(p.values.size(), 0.0);
    }
  }
  if (m_.size() != params.size())
    throw ContractError("Adam state was built for a different parameter set");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor &p = params[k];
    auto &m = m_[k];
    auto &v = v_[k];
    if (m.size() != p.values.size() || p.grad.size() != p.values.size())
      throw ContractError("Adam moment shape differs from its parameter");
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      p.values[i] -= lr_ * (update + weight_decay_ * p.values[i]);
    }
  }
}

double StepDecaySchedule::lr(std::size_t epoch) const {
  if (interval == 0)
    throw ConfigError("decay interval must be >= 1");
  return base_lr * std::pow(factor, static_cast<double>(epoch / interval));
}

void MamlConfig::validate(std::size_t tasks) const {
  if (!enabled)
    return;
  if (!(inner_lr > 0.0))
    throw ConfigError("MAML inner learning rate must be positive");
  check_task_limit(tasks);
}

void MamlConfig::check_task_limit(std::size_t tasks) const {
  if (tasks <= kMamlTaskLimit)
    return;
  const std::string msg = "MAML-MTL with " + std::to_string(tasks) +
                          " tasks runs one extra forward/backward per task "
                          "per step and does not scale past " +
                          std::to_string(kMamlTaskLimit) + " tasks";
  if (!allow_many_tasks)
    throw ConfigError(msg + "; set allow_many_tasks to proceed");
  warn(msg);
}

namespace {

void check_finite(double loss, std::size_t task, const StepContext &ctx) {
  if (std::isfinite(loss))
    return;
  const std::string name = task < ctx.task_names.size()
                               ? ctx.task_names[task]
                               : "#" + std::to_string(task);
  throw NumericalError("non-finite loss " + std::to_string(loss) +
                       " at epoch " + std::to_string(ctx.epoch) + ", task " +
                       name + ", batch " + std::to_string(ctx.batch));
}

void check_finite_grads(const std::vector<Tensor> &params,
                        const StepContext &ctx) {
  for (const Tensor &p : params)
    for (double g : p.grad)
      if (!std::isfinite(g))
        throw NumericalError("non-finite gradient at epoch " +
                             std::to_string(ctx.epoch) + ", batch " +
                             std::to_string(ctx.batch));
}

} // namespace

std::vector<double> joint_step(ParameterSet &params, const TaskLossFn &loss,
                               Optimizer &optimizer, const StepContext &ctx) {
  params.zero_grad();
  Tape tape;
  const std::vector<Var> bound = params.bind(tape);
  const std::vector<Var> losses = loss(tape, bound);
  if (losses.empty())
    throw ContractError("loss builder returned no task losses");
  std::vector<double> values;
  values.reserve(losses.size());
  Var total = losses[0];
  for (std::size_t k = 0; k < losses.size(); ++k) {
    values.push_back(losses[k].item());
    check_finite(values.back(), k, ctx);
    if (k > 0)
      total = ad::add(total, losses[k]);
  }
  tape.backward(total);
  check_finite_grads(params.tensors(), ctx);
  optimizer.step(params.tensors());
  return values;
}

std::vector<std::vector<double>>
maml_accumulated_gradient(ParameterSet &params, const TaskLossFn &loss,
                          const MamlConfig &maml, const StepContext &ctx,
                          const MamlObserver &observer,
                          std::vector<double> *losses_at_theta) {
  std::vector<Tensor> &theta = params.tensors();
  std::vector<std::vector<double>> accumulated;
  accumulated.reserve(theta.size());
  for (const Tensor &p : theta)
    accumulated.emplace_back(p.values.size(), 0.0);

  Tape tape;
  params.zero_grad();
  const std::vector<Var> bound = params.bind(tape);
  const std::vector<Var> losses = loss(tape, bound);
  if (losses.empty())
    throw ContractError("loss builder returned no task losses");
  if (!(maml.inner_lr >= 0.0))
    throw ConfigError("MAML inner learning rate must be non-negative");
  maml.check_task_limit(losses.size());
  if (losses_at_theta) {
    losses_at_theta->clear();
    for (Var l : losses)
      losses_at_theta->push_back(l.item());
  }

  std::vector<Tensor> branch(theta.size());
  for (std::size_t k = 0; k < losses.size(); ++k) {
    check_finite(losses[k].item(), k, ctx);
    params.zero_grad();
    tape.backward(losses[k]);

    for (std::size_t i = 0; i < theta.size(); ++i) {
      branch[i].shape = theta[i].shape;
      branch[i].values.resize(theta[i].values.size());
      branch[i].grad.assign(theta[i].values.size(), 0.0);
      for (std::size_t j = 0; j < theta[i].values.size(); ++j)
        branch[i].values[j] =
            theta[i].values[j] - maml.inner_lr * theta[i].grad[j];
    }

    Tape inner;
    std::vector<Var> moved;
    moved.reserve(branch.size());
    for (Tensor &t : branch)
      moved.push_back(inner.leaf(t));
    const std::vector<Var> relosses = loss(inner, moved);
    if (relosses.size() != losses.size())
      throw ContractError("loss builder changed its task count");
    check_finite(relosses[k].item(), k, ctx);
    inner.backward(relosses[k]);
    for (std::size_t i = 0; i < branch.size(); ++i)
      for (std::size_t j = 0; j < branch[i].grad.size(); ++j)
        accumulated[i][j] += branch[i].grad[j];
    if (observer)
      observer(k, params);
  }
  return accumulated;
}

std::vector<double> maml_mtl_step(ParameterSet &params, const TaskLossFn &loss,
                                  Optimizer &optimizer, const MamlConfig &maml,
                                  const StepContext &ctx,
                                  const MamlObserver &observer) {
  if (!maml.enabled)
    throw ContractError("maml_mtl_step called with MAML disabled");
  if (!(maml.inner_lr > 0.0))
    throw ConfigError("MAML inner learning rate must be positive");
  std::vector<double> values;
  auto accumulated =
      maml_accumulated_gradient(params, loss, maml, ctx, observer, &values);
  std::vector<Tensor> &theta = params.tensors();
  for (std::size_t i = 0; i < theta.size(); ++i)
    theta[i].grad = std::move(accumulated[i]);
  check_finite_grads(theta, ctx);
  optimizer.step(theta);
  return values;
}

std::size_t select_best(std::span<const std::vector<double>> history) {
  if (history.empty())
    throw ContractError("select_best needs a non-empty history");
  std::size_t best = 0;
  double best_sum = -std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < history.size(); ++e) {
    double s = 0.0;
    for (double v : history[e])
      if (!std::isnan(v))
        s += v;
    if (s > best_sum) {
      best_sum = s;
      best = e;
    }
  }
  return best;
}

} // namespace mmoeex
