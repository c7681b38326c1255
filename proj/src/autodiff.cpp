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
#include <mmoeex/autodiff.hpp>
#include <mmoeex/errors.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mmoeex::ad {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

ConstMatrixMap as_matrix(const Tensor &t) {
  return ConstMatrixMap(t.values.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

MatrixMap as_matrix(std::vector<double> &buffer, std::size_t rows,
                    std::size_t cols) {
  return MatrixMap(buffer.data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

ConstMatrixMap as_matrix(const std::vector<double> &buffer, std::size_t rows,
                         std::size_t cols) {
  return ConstMatrixMap(buffer.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

Tape &same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid())
    throw ContractError("operand is not bound to a tape");
  if (a.tape() != b.tape())
    throw ContractError("operands live on different tapes");
  return *a.tape();
}

Tape &tape_of(Var a) {
  if (!a.valid())
    throw ContractError("operand is not bound to a tape");
  return *a.tape();
}

void require_rank2(Var v, const char *op) {
  if (v.shape().size() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     to_string(v.shape()));
}

void require_same_shape(Var a, Var b, const char *op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
}

bool any_requires(Tape &tape, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (v.valid() && tape.requires_grad(v))
      return true;
  return false;
}

template <class Fn> Var unary(Var a, Fn value_fn, Tape::BackwardFn backward) {
  Tape &tape = tape_of(a);
  const Tensor &in = tape.node(a);
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = value_fn(in.values[i]);
  if (!tape.requires_grad(a))
    backward = nullptr;
  return tape.record(in.shape, std::move(out), {a.id()}, std::move(backward));
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x) {
  if (x >= 0.0)
    return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

} // namespace

std::size_t shape_size(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), values(shape_size(shape), fill),
      grad(values.size(), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)), grad(values.size(), 0.0) {
  if (shape_size(shape) != values.size())
    throw ShapeError("tensor shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
}

std::size_t Tensor::rows() const {
  if (shape.empty())
    return 1;
  return shape.size() == 1 ? 1 : shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.empty())
    return 1;
  return shape.size() == 1 ? shape[0] : size() / shape[0];
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

const Shape &Var::shape() const { return tape_->node(id_).shape; }
std::span<const double> Var::values() const { return tape_->node(id_).values; }
std::span<const double> Var::grad() const { return tape_->node(id_).grad; }
std::size_t Var::size() const { return tape_->node(id_).size(); }
std::size_t Var::rows() const { return tape_->node(id_).rows(); }
std::size_t Var::cols() const { return tape_->node(id_).cols(); }

double Var::item() const {
  if (size() != 1)
    throw ContractError("item() on tensor of shape " + to_string(shape()));
  return values()[0];
}

Var Tape::leaf(Tensor &source) {
  if (source.grad.size() != source.values.size())
    source.grad.assign(source.values.size(), 0.0);
  Node node;
  node.tensor.shape = source.shape;
  node.tensor.values = source.values;
  node.source = &source;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size())
    throw ShapeError("constant shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  Node node;
  node.tensor.shape = std::move(shape);
  node.tensor.values = std::move(values);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Shape shape, std::vector<double> values,
                 std::vector<int> parents, BackwardFn backward) {
  Node node;
  node.tensor.shape = std::move(shape);
  node.tensor.values = std::move(values);
  node.requires_grad = static_cast<bool>(backward);
  node.parents = std::move(parents);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::vector<double> &Tape::grad_accumulator(int id) {
  Node &node = nodes_[id];
  if (!node.grad_live) {
    node.tensor.grad.assign(node.tensor.values.size(), 0.0);
    node.grad_live = true;
  }
  return node.tensor.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this)
    throw ContractError("backward: root belongs to another tape");
  if (nodes_[root.id()].tensor.size() != 1)
    throw ContractError("backward: root must be a scalar, got shape " +
                        to_string(nodes_[root.id()].tensor.shape));
  for (Node &node : nodes_) {
    if (node.grad_live) {
      std::fill(node.tensor.grad.begin(), node.tensor.grad.end(), 0.0);
      node.grad_live = false;
    }
  }
  visit_order_.clear();
  grad_accumulator(root.id())[0] = 1.0;

  for (int id = root.id(); id >= 0; --id) {
    Node &node = nodes_[id];
    if (!node.grad_live || !node.requires_grad)
      continue;
    visit_order_.push_back(id);
    if (node.backward)
      node.backward(*this, id);
    if (node.source != nullptr) {
      std::vector<double> &dst = node.source->grad;
      const std::vector<double> &g = nodes_[id].tensor.grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        dst[i] += g[i];
    }
  }
}

Var matmul(Var a, Var b) {
  Tape &tape = same_tape(a, b);
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) +
                     " . " + to_string(b.shape()));
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() =
      as_matrix(tape.node(a)) * as_matrix(tape.node(b));

  Tape::BackwardFn backward;
  if (any_requires(tape, {a, b})) {
    const int ia = a.id(), ib = b.id();
    backward = [ia, ib, m, k, n](Tape &t, int self) {
      const auto g = as_matrix(t.grad_of(self), m, n);
      if (t.requires_grad(ia))
        as_matrix(t.grad_accumulator(ia), m, k).noalias() +=
            g * as_matrix(t.node(ib)).transpose();
      if (t.requires_grad(ib))
        as_matrix(t.grad_accumulator(ib), k, n).noalias() +=
            as_matrix(t.node(ia)).transpose() * g;
    };
  }
  return tape.record({m, n}, std::move(out), {a.id(), b.id()},
                     std::move(backward));
}

Var linear(Var x, Var weight, Var bias) {
  Tape &tape = same_tape(x, weight);
  require_rank2(x, "linear");
  require_rank2(weight, "linear");
  const std::size_t m = x.rows(), in = x.cols(), out_dim = weight.rows();
  if (weight.cols() != in)
    throw ShapeError("linear: input " + to_string(x.shape()) +
                     " does not match weight " + to_string(weight.shape()));
  const bool has_bias = bias.valid();
  if (has_bias) {
    same_tape(x, bias);
    if (bias.size() != out_dim)
      throw ShapeError("linear: bias " + to_string(bias.shape()) +
                       " does not match weight " + to_string(weight.shape()));
  }

  std::vector<double> out(m * out_dim);
  auto y = as_matrix(out, m, out_dim);
  y.noalias() = as_matrix(tape.node(x)) * as_matrix(tape.node(weight)).transpose();
  if (has_bias) {
    const auto &b = tape.node(bias).values;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < out_dim; ++c)
        out[r * out_dim + c] += b[c];
  }

  Tape::BackwardFn backward;
  if (any_requires(tape, {x, weight, bias})) {
    const int ix = x.id(), iw = weight.id(), ib = has_bias ? bias.id() : -1;
    backward = [ix, iw, ib, m, in, out_dim](Tape &t, int self) {
      const auto g = as_matrix(t.grad_of(self), m, out_dim);
      if (t.requires_grad(ix))
        as_matrix(t.grad_accumulator(ix), m, in).noalias() +=
            g * as_matrix(t.node(iw));
      if (t.requires_grad(iw))
        as_matrix(t.grad_accumulator(iw), out_dim, in).noalias() +=
            g.transpose() * as_matrix(t.node(ix));
      if (ib >= 0 && t.requires_grad(ib)) {
        auto &gb = t.grad_accumulator(ib);
        const auto &gs = t.grad_of(self);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < out_dim; ++c)
            gb[c] += gs[r * out_dim + c];
      }
    };
  }
  std::vector<int> parents{x.id(), weight.id()};
  if (has_bias)
    parents.push_back(bias.id());
  return tape.record({m, out_dim}, std::move(out), std::move(parents),
                     std::move(backward));
}

Var linear(Var x, Var weight) { return linear(x, weight, Var()); }

namespace {

// Shared body of add/sub: out = a + sign * b.
Var add_signed(Var a, Var b, double sign, const char *op) {
  Tape &tape = same_tape(a, b);
  require_same_shape(a, b, op);
  const auto &av = tape.node(a).values;
  const auto &bv = tape.node(b).values;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] + sign * bv[i];
  Tape::BackwardFn backward;
  if (any_requires(tape, {a, b})) {
    const int ia = a.id(), ib = b.id();
    backward = [ia, ib, sign](Tape &t, int self) {
      const auto &g = t.grad_of(self);
      if (t.requires_grad(ia)) {
        auto &ga = t.grad_accumulator(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i];
      }
      if (t.requires_grad(ib)) {
        auto &gb = t.grad_accumulator(ib);
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[i] += sign * g[i];
      }
    };
  }
  return tape.record(tape.node(a).shape, std::move(out), {a.id(), b.id()},
                     std::move(backward));
}

} // namespace

Var add(Var a, Var b) { return add_signed(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_signed(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
  Tape &tape = same_tape(a, b);
  require_same_shape(a, b, "mul");
  const auto &av = tape.node(a).values;
  const auto &bv = tape.node(b).values;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] * bv[i];
  Tape::BackwardFn backward;
  if (any_requires(tape, {a, b})) {
    const int ia = a.id(), ib = b.id();
    backward = [ia, ib](Tape &t, int self) {
      const auto &g = t.grad_of(self);
      if (t.requires_grad(ia)) {
        auto &ga = t.grad_accumulator(ia);
        const auto &bv = t.node(ib).values;
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * bv[i];
      }
      if (t.requires_grad(ib)) {
        auto &gb = t.grad_accumulator(ib);
        const auto &av = t.node(ia).values;
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[i] += g[i] * av[i];
      }
    };
  }
  return tape.record(tape.node(a).shape, std::move(out), {a.id(), b.id()},
                     std::move(backward));
}

Var scale(Var a, double factor) {
  const int ia = a.id();
  return unary(
      a, [factor](double v) { return factor * v; },
      [ia, factor](Tape &t, int self) {
        const auto &g = t.grad_of(self);
        auto &ga = t.grad_accumulator(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += factor * g[i];
      });
}

Var relu(Var a) {
  const int ia = a.id();
  return unary(
      a, [](double v) { return v > 0.0 ? v : 0.0; },
      [ia](Tape &t, int self) {
        const auto &g = t.grad_of(self);
        const auto &x = t.node(ia).values;
        auto &ga = t.grad_accumulator(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0)
            ga[i] += g[i];
      });
}

Var sigmoid(Var a) {
  const int ia = a.id();
  return unary(a, stable_sigmoid, [ia](Tape &t, int self) {
    const auto &g = t.grad_of(self);
    const auto &y = t.node(self).values;
    auto &ga = t.grad_accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var a) {
  const int ia = a.id();
  return unary(
      a, [](double v) { return std::tanh(v); },
      [ia](Tape &t, int self) {
        const auto &g = t.grad_of(self);
        const auto &y = t.node(self).values;
        auto &ga = t.grad_accumulator(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * (1.0 - y[i] * y[i]);
      });
}

Var softmax(Var logits) {
  Tape &tape = tape_of(logits);
  const Tensor &in = tape.node(logits);
  if (in.size() == 0)
    throw ShapeError("softmax: empty input");
  const std::size_t rows = in.rows(), cols = in.cols();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double *x = in.values.data() + r * cols;
    double *y = out.data() + r * cols;
    const double peak = *std::max_element(x, x + cols);
    if (peak == kNegInf)
      throw DomainError("softmax: no admissible entries");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - peak);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c)
      y[c] /= total;
  }
  Tape::BackwardFn backward;
  if (tape.requires_grad(logits)) {
    const int ia = logits.id();
    backward = [ia, rows, cols](Tape &t, int self) {
      const auto &g = t.grad_of(self);
      const auto &y = t.node(self).values;
      auto &ga = t.grad_accumulator(ia);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
          dot += y[o + c] * g[o + c];
        for (std::size_t c = 0; c < cols; ++c)
          ga[o + c] += y[o + c] * (g[o + c] - dot);
      }
    };
  }
  return tape.record(in.shape, std::move(out), {logits.id()},
                     std::move(backward));
}

Var mask_columns(Var logits, std::span<const unsigned char> mask) {
  Tape &tape = tape_of(logits);
  const Tensor &in = tape.node(logits);
  const std::size_t rows = in.rows(), cols = in.cols();
  if (mask.size() != cols)
    throw ShapeError("mask_columns: mask of length " +
                     std::to_string(mask.size()) + " for logits " +
                     to_string(in.shape));
  std::vector<unsigned char> open(mask.begin(), mask.end());
  std::vector<double> out = in.values;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (!open[c])
        out[r * cols + c] = kNegInf;
  Tape::BackwardFn backward;
  if (tape.requires_grad(logits)) {
    const int ia = logits.id();
    backward = [ia, rows, cols, open = std::move(open)](Tape &t, int self) {
      const auto &g = t.grad_of(self);
      auto &ga = t.grad_accumulator(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          if (open[c])
            ga[r * cols + c] += g[r * cols + c];
    };
  }
  return tape.record(in.shape, std::move(out), {logits.id()},
                     std::move(backward));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty())
    throw ShapeError("concat: no inputs");
  if (axis > 1)
    throw ShapeError("concat: axis must be 0 or 1");
  Tape &tape = tape_of(parts[0]);
  const std::size_t ref_rows = parts[0].rows(), ref_cols = parts[0].cols();
  std::size_t total_rows = 0, total_cols = 0;
  bool needs_grad = false;
  std::vector<int> ids;
  for (Var p : parts) {
    same_tape(parts[0], p);
    if (axis == 0 && p.cols() != ref_cols)
      throw ShapeError("concat: column count differs, " +
                       to_string(parts[0].shape()) + " vs " +
                       to_string(p.shape()));
    if (axis == 1 && p.rows() != ref_rows)
      throw ShapeError("concat: row count differs, " +
                       to_string(parts[0].shape()) + " vs " +
                       to_string(p.shape()));
    total_rows += p.rows();
    total_cols += p.cols();
    needs_grad = needs_grad || tape.requires_grad(p);
    ids.push_back(p.id());
  }
  const std::size_t rows = axis == 0 ? total_rows : ref_rows;
  const std::size_t cols = axis == 0 ? ref_cols : total_cols;
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto &v = tape.node(p).values;
    if (axis == 0) {
      std::copy(v.begin(), v.end(), out.begin() + offset * cols);
      offset += p.rows();
    } else {
      const std::size_t pc = p.cols();
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(v.begin() + r * pc, pc, out.begin() + r * cols + offset);
      offset += pc;
    }
  }
  Tape::BackwardFn backward;
  if (needs_grad) {
    backward = [ids, axis, rows, cols](Tape &t, int self) {
      const auto &g = t.grad_of(self);
      std::size_t offset = 0;
      for (int id : ids) {
        const Tensor &p = t.node(id);
        const std::size_t pr = p.rows(), pc = p.cols();
        if (t.requires_grad(id)) {
          auto &gp = t.grad_accumulator(id);
          for (std::size_t r = 0; r < pr; ++r)
            for (std::size_t c = 0; c < pc; ++c)
              gp[r * pc + c] += axis == 0 ? g[(offset + r) * cols + c]
                                          : g[r * cols + offset + c];
        }
        offset += axis == 0 ? pr : pc;
      }
      (void)rows;
    };
  }
  return tape.record({rows, cols}, std::move(out), std::move(ids),
                     std::move(backward));
}

Var sum(Var a) {
  Tape &tape = tape_of(a);
  const auto &v = tape.node(a).values;
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  Tape::BackwardFn backward;
  if (tape.requires_grad(a)) {
    const int ia = a.id();
    backward = [ia](Tape &t, int self) {
      const double g = t.grad_of(self)[0];
      for (double &x : t.grad_accumulator(ia))
        x += g;
    };
  }
  return tape.record({1}, {total}, {a.id()}, std::move(backward));
}

Var mean(Var a) {
  if (a.size() == 0)
    throw ShapeError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var bce_with_logits(Var logits, std::span<const double> targets,
                    double pos_weight, std::span<const unsigned char> observed) {
  Tape &tape = tape_of(logits);
  const Tensor &z = tape.node(logits);
  if (targets.size() != z.size())
    throw ShapeError("bce_with_logits: " + std::to_string(targets.size()) +
                     " targets for logits " + to_string(z.shape));
  if (!observed.empty() && observed.size() != z.size())
    throw ShapeError("bce_with_logits: observation mask length differs");
  if (!(pos_weight > 0.0))
    throw DomainError("bce_with_logits: pos_weight must be positive");

  std::vector<unsigned char> seen(z.size(), 1);
  if (!observed.empty())
    seen.assign(observed.begin(), observed.end());
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!seen[i])
      continue;
    const double y = targets[i];
    if (y != 0.0 && y != 1.0)
      throw DomainError("bce_with_logits: non-binary target " +
                        std::to_string(y) + " at index " + std::to_string(i));
    const double weight = pos_weight * y + (1.0 - y);
    total += (1.0 - y) * z.values[i] + weight * softplus(-z.values[i]);
    ++count;
  }
  if (count == 0)
    return tape.scalar(0.0);

  Tape::BackwardFn backward;
  if (tape.requires_grad(logits)) {
    const int ia = logits.id();
    std::vector<double> y(targets.begin(), targets.end());
    backward = [ia, pos_weight, count, y = std::move(y),
                seen = std::move(seen)](Tape &t, int self) {
      const double g = t.grad_of(self)[0] / static_cast<double>(count);
      const auto &zv = t.node(ia).values;
      auto &ga = t.grad_accumulator(ia);
      for (std::size_t i = 0; i < zv.size(); ++i) {
        if (!seen[i])
          continue;
        const double weight = pos_weight * y[i] + (1.0 - y[i]);
        ga[i] += g * ((1.0 - y[i]) - weight * stable_sigmoid(-zv[i]));
      }
    };
  }
  return tape.record({1}, {total / static_cast<double>(count)}, {logits.id()},
                     std::move(backward));
}

Var cross_entropy(Var logits, std::span<const int> targets,
                  std::span<const unsigned char> observed) {
  Tape &tape = tape_of(logits);
  require_rank2(logits, "cross_entropy");
  const Tensor &z = tape.node(logits);
  const std::size_t n = z.rows(), classes = z.cols();
  if (targets.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + to_string(z.shape));
  if (!observed.empty() && observed.size() != n)
    throw ShapeError("cross_entropy: observation mask length differs");

  std::vector<unsigned char> seen(n, 1);
  if (!observed.empty())
    seen.assign(observed.begin(), observed.end());
  std::vector<double> probs(z.size());
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!seen[r])
      continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= classes)
      throw DomainError("cross_entropy: target " + std::to_string(targets[r]) +
                        " outside [0, " + std::to_string(classes) + ")");
    const double *row = z.values.data() + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c)
      denom += std::exp(row[c] - peak);
    const double log_denom = peak + std::log(denom);
    for (std::size_t c = 0; c < classes; ++c)
      probs[r * classes + c] = std::exp(row[c] - log_denom);
    total += log_denom - row[targets[r]];
    ++count;
  }
  if (count == 0)
    return tape.scalar(0.0);

  Tape::BackwardFn backward;
  if (tape.requires_grad(logits)) {
    const int ia = logits.id();
    std::vector<int> y(targets.begin(), targets.end());
    backward = [ia, n, classes, count, y = std::move(y),
                seen = std::move(seen),
                probs = std::move(probs)](Tape &t, int self) {
      const double g = t.grad_of(self)[0] / static_cast<double>(count);
      auto &ga = t.grad_accumulator(ia);
      for (std::size_t r = 0; r < n; ++r) {
        if (!seen[r])
          continue;
        for (std::size_t c = 0; c < classes; ++c)
          ga[r * classes + c] += g * probs[r * classes + c];
        ga[r * classes + y[r]] -= g;
      }
    };
  }
  return tape.record({1}, {total / static_cast<double>(count)}, {logits.id()},
                     std::move(backward));
}

double grad_check(const GraphBuilder &f, std::span<Tensor> params,
                  double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");

  std::vector<std::vector<double>> saved_grads;
  saved_grads.reserve(params.size());
  for (Tensor &p : params) {
    saved_grads.push_back(p.grad);
    p.zero_grad();
  }

  auto evaluate = [&](bool differentiate) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (Tensor &p : params)
      vars.push_back(tape.leaf(p));
    Var out = f(tape, vars);
    if (out.size() != 1)
      throw ContractError("grad_check: builder returned non-scalar shape " +
                          to_string(out.shape()));
    if (differentiate)
      tape.backward(out);
    return out.item();
  };

  evaluate(true);
  double worst = 0.0;
  for (Tensor &p : params) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double original = p.values[i];
      p.values[i] = original + eps;
      const double up = evaluate(false);
      p.values[i] = original - eps;
      const double down = evaluate(false);
      p.values[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p.grad[i];
      const double err = std::abs(analytic - numeric) /
                         std::max(1.0, std::abs(analytic) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k)
    params[k].grad = std::move(saved_grads[k]);
  return worst;
}

} // namespace mmoeex::ad
