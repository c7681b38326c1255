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
 * @file   autodiff.hpp
 * @brief  Define-by-run reverse-mode differentiation over dense float64
 *         tensors.
 *
 * A Tape records every primitive evaluated on it. Parameters enter the tape
 * through Tape::leaf(), which remembers the source Tensor so that backward()
 * can accumulate gradients into it. Everything else is a constant or the
 * result of a primitive. The tape is meant to be thrown away after each
 * forward/backward pass.
 *
 * Tensors are row-major. Rank-2 tensors are [rows x cols]; rank-1 tensors are
 * treated as a single row where an operation needs a matrix view.
 */
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace mmoeex::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape &shape);
std::string to_string(const Shape &shape);

/// Shape-tagged value array with a gradient buffer of the same length.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  void zero_grad();
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
  Var() = default;

  Tape *tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape &shape() const;
  std::span<const double> values() const;
  std::span<const double> grad() const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;
  /// Value of a single-element tensor.
  double item() const;

private:
  friend class Tape;
  Var(Tape *tape, int id) : tape_(tape), id_(id) {}

  Tape *tape_ = nullptr;
  int id_ = -1;
};

class Tape {
public:
  /// Propagates the gradient of node `self` into its parents.
  using BackwardFn = std::function<void(Tape &, int self)>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  /// Differentiable input. backward() adds d(root)/d(leaf) into source.grad;
  /// source must outlive the tape.
  Var leaf(Tensor &source);
  /// Non-differentiable input.
  Var constant(Shape shape, std::vector<double> values);
  Var constant(const Tensor &value) { return constant(value.shape, value.values); }
  Var scalar(double value) { return constant(Shape{1}, {value}); }

  /// Records a primitive's output. `backward` may be empty when no parent
  /// requires a gradient.
  Var record(Shape shape, std::vector<double> values, std::vector<int> parents,
             BackwardFn backward);

  /// Reverse sweep from a scalar root. Node gradients from a previous sweep
  /// are cleared first; leaf sources accumulate.
  void backward(Var root);

  const Tensor &node(int id) const { return nodes_[id].tensor; }
  const Tensor &node(Var v) const { return nodes_[v.id()].tensor; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  /// Order in which the last backward() visited nodes.
  const std::vector<int> &last_visit_order() const { return visit_order_; }

  /// For primitives: gradient buffer of `id`, allocated and zero-filled on
  /// first touch during a backward sweep.
  std::vector<double> &grad_accumulator(int id);
  const std::vector<double> &grad_of(int id) const { return nodes_[id].tensor.grad; }

private:
  struct Node {
    Tensor tensor;
    std::vector<int> parents;
    BackwardFn backward;
    Tensor *source = nullptr;
    bool requires_grad = false;
    bool grad_live = false;
  };

  std::vector<Node> nodes_;
  std::vector<int> visit_order_;
};

// Primitives. All operands must live on the same tape.

/// [m x k] . [k x n] -> [m x n]
Var matmul(Var a, Var b);
/// x . W^T + b with x [m x in], W [out x in], b [out] (bias optional).
Var linear(Var x, Var weight, Var bias);
Var linear(Var x, Var weight);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// Row-wise softmax over the last axis. -inf logits map to exactly 0.
Var softmax(Var logits);
/// Replaces entries whose column is closed (mask[c] == 0) with -inf.
Var mask_columns(Var logits, std::span<const unsigned char> mask);
/// Concatenation along axis 0 (rows) or axis 1 (columns) of rank-2 tensors.
Var concat(std::span<const Var> parts, std::size_t axis);
Var sum(Var a);
Var mean(Var a);

/// Mean over observed elements of
///   -[pos_weight * y * log sigma(z) + (1 - y) * log(1 - sigma(z))].
/// `observed` may be empty (all observed). With nothing observed the result
/// is a constant 0.
Var bce_with_logits(Var logits, std::span<const double> targets,
                    double pos_weight,
                    std::span<const unsigned char> observed = {});
/// Mean negative log-softmax probability of the target class per row of
/// logits [n x C].
Var cross_entropy(Var logits, std::span<const int> targets,
                  std::span<const unsigned char> observed = {});

/// Builds a scalar graph from bound parameters.
using GraphBuilder = std::function<Var(Tape &, std::span<const Var>)>;

/// Central-difference check of backward() for every element of every
/// parameter. Returns max |g_ad - g_fd| / max(1, |g_ad| + |g_fd|).
/// Parameter values and gradients are restored on return.
double grad_check(const GraphBuilder &f, std::span<Tensor> params,
                  double eps = 1e-5);

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

} // namespace mmoeex::ad
