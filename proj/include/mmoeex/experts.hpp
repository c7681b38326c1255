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
 * @file   experts.hpp
 * @brief  Expert sub-networks (dense, vanilla RNN, GRU) and task towers.
 *
 * Sequences are time-major lists of [batch x dim] nodes. Tabular inputs are
 * sequences of length one that are flagged non-temporal by the caller.
 */
#pragma once

#include <mmoeex/autodiff.hpp>
#include <mmoeex/task.hpp>

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mmoeex {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using Sequence = std::vector<Var>;

enum class Activation { none, relu, tanh, sigmoid };
enum class ExpertKind { dense, rnn, gru };

std::string_view to_string(Activation a);
std::string_view to_string(ExpertKind k);
Activation parse_activation(std::string_view s);
ExpertKind parse_expert_kind(std::string_view s);

Var activate(Var x, Activation a);

/// Owns every learnable tensor of a model, in registration order.
class ParameterSet {
public:
  std::size_t add(std::string name, Tensor tensor);

  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  std::vector<Tensor> &tensors() { return tensors_; }
  const std::vector<Tensor> &tensors() const { return tensors_; }
  const std::vector<std::string> &names() const { return names_; }

  /// Differentiable binding: gradients flow into tensors()[i].grad.
  std::vector<Var> bind(Tape &tape);
  /// Value-only binding for evaluation.
  std::vector<Var> bind_constant(Tape &tape) const;
  void zero_grad();

private:
  std::vector<Tensor> tensors_;
  std::vector<std::string> names_;
};

/// Weight matrix [rows x cols] drawn from U(-1/sqrt(cols), 1/sqrt(cols)).
Tensor uniform_fan_in(std::size_t rows, std::size_t cols, std::mt19937_64 &rng);

struct ExpertSpec {
  ExpertKind kind = ExpertKind::dense;
  std::size_t input_dim = 1;
  std::size_t hidden_dim = 16;
  /// Output nonlinearity of dense experts; recurrent experts use tanh.
  Activation activation = Activation::relu;

  bool temporal() const { return kind != ExpertKind::dense; }
  void validate() const;
  bool operator==(const ExpertSpec &) const = default;
};

std::size_t parameter_count(const ExpertSpec &spec);

/// An expert's spec plus where its tensors sit in the owning ParameterSet.
struct Expert {
  ExpertSpec spec;
  std::size_t first_param = 0;

  static Expert create(const ExpertSpec &spec, ParameterSet &params,
                       std::mt19937_64 &rng, const std::string &prefix);
};

/// Dense expert on tabular input [batch x d] -> [batch x h]. Recurrent kinds
/// need a time axis and throw ShapeError here.
Var expert_forward(const Expert &expert, std::span<const Var> params, Var x);
/// Any expert kind on a sequence; dense experts apply per step, recurrent
/// experts run from h_{-1} = 0 and return the whole hidden sequence.
Sequence expert_forward(const Expert &expert, std::span<const Var> params,
                        const Sequence &x);

struct TowerSpec {
  std::size_t task = 0;
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 1;
  Temporal temporal = Temporal::per_sequence;
  /// Read position for first_window towers is step window - 1.
  std::size_t window = 1;
  /// Applied after each hidden layer, never after the output layer.
  Activation activation = Activation::none;

  bool operator==(const TowerSpec &) const = default;
};

std::size_t parameter_count(const TowerSpec &spec);

/// Step indices a tower reads from a sequence of length `steps`.
/// Throws DataError when a first_window tower sees fewer than `window` steps.
std::vector<std::size_t> tower_steps(const TowerSpec &spec, std::size_t steps);

struct Tower {
  TowerSpec spec;
  std::size_t first_param = 0;

  static Tower create(const TowerSpec &spec, ParameterSet &params,
                      std::mt19937_64 &rng, const std::string &prefix);
};

/// Applies the tower layers to one representation [batch x input_dim].
Var tower_head(const Tower &tower, std::span<const Var> params, Var f);
/// Logits per read step: all steps for per_step towers, one entry otherwise.
Sequence tower_forward(const Tower &tower, std::span<const Var> params,
                       const Sequence &f);

} // namespace mmoeex
