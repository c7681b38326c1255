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
#include <mmoeex/experts.hpp>

#include <cmath>

namespace mmoeex {

std::string_view to_string(Activation a) {
  switch (a) {
  case Activation::none: return "none";
  case Activation::relu: return "relu";
  case Activation::tanh: return "tanh";
  case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

std::string_view to_string(ExpertKind k) {
  switch (k) {
  case ExpertKind::dense: return "dense";
  case ExpertKind::rnn: return "rnn";
  case ExpertKind::gru: return "gru";
  }
  return "?";
}

Activation parse_activation(std::string_view s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

ExpertKind parse_expert_kind(std::string_view s) {
  if (s == "dense") return ExpertKind::dense;
  if (s == "rnn") return ExpertKind::rnn;
  if (s == "gru") return ExpertKind::gru;
  throw ConfigError("unknown expert kind '" + std::string(s) + "'");
}

Var activate(Var x, Activation a) {
  switch (a) {
  case Activation::none: return x;
  case Activation::relu: return ad::relu(x);
  case Activation::tanh: return ad::tanh(x);
  case Activation::sigmoid: return ad::sigmoid(x);
  }
  return x;
}

std::size_t ParameterSet::add(std::string name, Tensor tensor) {
  tensor.zero_grad();
  tensors_.push_back(std::move(tensor));
  names_.push_back(std::move(name));
  return tensors_.size() - 1;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor &t : tensors_)
    n += t.size();
  return n;
}

std::vector<Var> ParameterSet::bind(Tape &tape) {
  std::vector<Var> vars;
  vars.reserve(tensors_.size());
  for (Tensor &t : tensors_)
    vars.push_back(tape.leaf(t));
  return vars;
}

std::vector<Var> ParameterSet::bind_constant(Tape &tape) const {
  std::vector<Var> vars;
  vars.reserve(tensors_.size());
  for (const Tensor &t : tensors_)
    vars.push_back(tape.constant(t));
  return vars;
}

void ParameterSet::zero_grad() {
  for (Tensor &t : tensors_)
    t.zero_grad();
}

Tensor uniform_fan_in(std::size_t rows, std::size_t cols,
                      std::mt19937_64 &rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t({rows, cols});
  for (double &v : t.values)
    v = dist(rng);
  return t;
}

void ExpertSpec::validate() const {
  if (input_dim < 1)
    throw ConfigError("expert input dimension must be >= 1");
  if (hidden_dim < 1)
    throw ConfigError("expert hidden dimension must be >= 1");
}

std::size_t parameter_count(const ExpertSpec &spec) {
  const std::size_t d = spec.input_dim, h = spec.hidden_dim;
  switch (spec.kind) {
  case ExpertKind::dense: return h * d + h;
  case ExpertKind::rnn: return h * d + h * h + h;
  case ExpertKind::gru: return 3 * (h * d + h * h + h);
  }
  return 0;
}

Expert Expert::create(const ExpertSpec &spec, ParameterSet &params,
                      std::mt19937_64 &rng, const std::string &prefix) {
  spec.validate();
  Expert e{spec, params.size()};
  const std::size_t d = spec.input_dim, h = spec.hidden_dim;
  switch (spec.kind) {
  case ExpertKind::dense:
    params.add(prefix + ".weight", uniform_fan_in(h, d, rng));
    params.add(prefix + ".bias", Tensor({h}));
    break;
  case ExpertKind::rnn:
    params.add(prefix + ".w_input", uniform_fan_in(h, d, rng));
    params.add(prefix + ".w_hidden", uniform_fan_in(h, h, rng));
    params.add(prefix + ".bias", Tensor({h}));
    break;
  case ExpertKind::gru:
    for (const char *gate : {"update", "reset", "candidate"}) {
      params.add(prefix + "." + gate + ".w_input", uniform_fan_in(h, d, rng));
      params.add(prefix + "." + gate + ".w_hidden", uniform_fan_in(h, h, rng));
      params.add(prefix + "." + gate + ".bias", Tensor({h}));
    }
    break;
  }
  return e;
}

namespace {

void check_input_width(const Expert &expert, Var x) {
  if (x.shape().size() != 2 || x.cols() != expert.spec.input_dim)
    throw ShapeError("expert expects [batch x " +
                     std::to_string(expert.spec.input_dim) + "] input, got " +
                     ad::to_string(x.shape()));
}

Var zero_state(Var like, std::size_t hidden) {
  return like.tape()->constant({like.rows(), hidden},
                               std::vector<double>(like.rows() * hidden, 0.0));
}

// h_t = tanh(W_x x_t + W_h h_{t-1} + b)
Var rnn_cell(std::span<const Var> p, Var x, Var h) {
  return ad::tanh(ad::add(ad::linear(x, p[0], p[2]), ad::linear(h, p[1])));
}

// z = sigma(W_z x + U_z h + b_z), r = sigma(W_r x + U_r h + b_r)
// n = tanh(W_n x + U_n (r * h) + b_n), h' = (1 - z) * n + z * h
Var gru_cell(std::span<const Var> p, Var x, Var h) {
  Var z = ad::sigmoid(ad::add(ad::linear(x, p[0], p[2]), ad::linear(h, p[1])));
  Var r = ad::sigmoid(ad::add(ad::linear(x, p[3], p[5]), ad::linear(h, p[4])));
  Var n = ad::tanh(
      ad::add(ad::linear(x, p[6], p[8]), ad::linear(ad::mul(r, h), p[7])));
  // (1 - z) * n + z * h == n + z * (h - n)
  return ad::add(n, ad::mul(z, ad::sub(h, n)));
}

} // namespace

Var expert_forward(const Expert &expert, std::span<const Var> params, Var x) {
  if (expert.spec.temporal())
    throw ShapeError(std::string(to_string(expert.spec.kind)) +
                     " expert needs a time axis, got " +
                     ad::to_string(x.shape()));
  check_input_width(expert, x);
  const auto p = params.subspan(expert.first_param, 2);
  return activate(ad::linear(x, p[0], p[1]), expert.spec.activation);
}

Sequence expert_forward(const Expert &expert, std::span<const Var> params,
                        const Sequence &x) {
  if (x.empty())
    throw ShapeError("expert_forward: empty sequence");
  Sequence out;
  out.reserve(x.size());
  switch (expert.spec.kind) {
  case ExpertKind::dense: {
    const auto p = params.subspan(expert.first_param, 2);
    for (Var step : x) {
      check_input_width(expert, step);
      out.push_back(activate(ad::linear(step, p[0], p[1]), expert.spec.activation));
    }
    break;
  }
  case ExpertKind::rnn: {
    const auto p = params.subspan(expert.first_param, 3);
    Var h = zero_state(x.front(), expert.spec.hidden_dim);
    for (Var step : x) {
      check_input_width(expert, step);
      h = rnn_cell(p, step, h);
      out.push_back(h);
    }
    break;
  }
  case ExpertKind::gru: {
    const auto p = params.subspan(expert.first_param, 9);
    Var h = zero_state(x.front(), expert.spec.hidden_dim);
    for (Var step : x) {
      check_input_width(expert, step);
      h = gru_cell(p, step, h);
      out.push_back(h);
    }
    break;
  }
  }
  return out;
}

std::size_t parameter_count(const TowerSpec &spec) {
  std::size_t n = 0, in = spec.input_dim;
  for (std::size_t w : spec.hidden) {
    n += in * w + w;
    in = w;
  }
  return n + in * spec.output_dim + spec.output_dim;
}

std::vector<std::size_t> tower_steps(const TowerSpec &spec, std::size_t steps) {
  if (steps == 0)
    throw DataError("tower input has no steps");
  switch (spec.temporal) {
  case Temporal::per_step: {
    std::vector<std::size_t> all(steps);
    for (std::size_t t = 0; t < steps; ++t)
      all[t] = t;
    return all;
  }
  case Temporal::per_sequence:
    return {steps - 1};
  case Temporal::first_window:
    if (spec.window < 1 || steps < spec.window)
      throw DataError("sequence of " + std::to_string(steps) +
                      " steps is shorter than the tower window " +
                      std::to_string(spec.window));
    return {spec.window - 1};
  }
  return {};
}

Tower Tower::create(const TowerSpec &spec, ParameterSet &params,
                    std::mt19937_64 &rng, const std::string &prefix) {
  if (spec.input_dim < 1 || spec.output_dim < 1)
    throw ConfigError("tower dimensions must be >= 1");
  Tower tower{spec, params.size()};
  std::size_t in = spec.input_dim;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    const std::size_t w = spec.hidden[i];
    if (w < 1)
      throw ConfigError("tower hidden width must be >= 1");
    const std::string layer = prefix + ".hidden" + std::to_string(i);
    params.add(layer + ".weight", uniform_fan_in(w, in, rng));
    params.add(layer + ".bias", Tensor({w}));
    in = w;
  }
  params.add(prefix + ".out.weight", uniform_fan_in(spec.output_dim, in, rng));
  params.add(prefix + ".out.bias", Tensor({spec.output_dim}));
  return tower;
}

Var tower_head(const Tower &tower, std::span<const Var> params, Var f) {
  const TowerSpec &spec = tower.spec;
  if (f.shape().size() != 2 || f.cols() != spec.input_dim)
    throw ShapeError("tower expects [batch x " + std::to_string(spec.input_dim) +
                     "] input, got " + ad::to_string(f.shape()));
  std::size_t p = tower.first_param;
  Var h = f;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i, p += 2)
    h = activate(ad::linear(h, params[p], params[p + 1]), spec.activation);
  return ad::linear(h, params[p], params[p + 1]);
}

Sequence tower_forward(const Tower &tower, std::span<const Var> params,
                       const Sequence &f) {
  Sequence logits;
  for (std::size_t t : tower_steps(tower.spec, f.size()))
    logits.push_back(tower_head(tower, params, f[t]));
  return logits;
}

} // namespace mmoeex
