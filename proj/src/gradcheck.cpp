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
#include <mmoeex/gradcheck.hpp>
#include <mmoeex/model.hpp>

#include <functional>
#include <random>

namespace mmoeex {

namespace {

using ad::GraphBuilder;
using ad::Shape;

struct Instance {
  std::vector<Tensor> params;
  GraphBuilder graph;
};

using Generator = std::function<Instance(std::mt19937_64 &)>;

Tensor random_tensor(Shape shape, std::mt19937_64 &rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Tensor t(std::move(shape));
  for (double &v : t.values)
    v = g(rng);
  return t;
}

std::size_t dim(std::mt19937_64 &rng, std::size_t lo = 1, std::size_t hi = 5) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Reduces a tensor-valued output to a scalar with a fixed random projection.
Var project(Tape &tape, Var out, const std::vector<double> &weights) {
  return ad::sum(ad::mul(out, tape.constant(out.shape(), weights)));
}

std::vector<double> random_weights(std::size_t n, std::mt19937_64 &rng) {
  return random_tensor({n}, rng).values;
}

/// Unary elementwise primitive on an [m x n] tensor.
Generator unary(std::function<Var(Var)> op) {
  return [op](std::mt19937_64 &rng) {
    const std::size_t m = dim(rng), n = dim(rng);
    Instance inst;
    inst.params.push_back(random_tensor({m, n}, rng));
    auto w = random_weights(m * n, rng);
    inst.graph = [op, w](Tape &tape, std::span<const Var> p) {
      return project(tape, op(p[0]), w);
    };
    return inst;
  };
}

Generator binary(std::function<Var(Var, Var)> op) {
  return [op](std::mt19937_64 &rng) {
    const std::size_t m = dim(rng), n = dim(rng);
    Instance inst;
    inst.params.push_back(random_tensor({m, n}, rng));
    inst.params.push_back(random_tensor({m, n}, rng));
    auto w = random_weights(m * n, rng);
    inst.graph = [op, w](Tape &tape, std::span<const Var> p) {
      return project(tape, op(p[0], p[1]), w);
    };
    return inst;
  };
}

Instance matmul_instance(std::mt19937_64 &rng) {
  const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
  Instance inst;
  inst.params.push_back(random_tensor({m, k}, rng));
  inst.params.push_back(random_tensor({k, n}, rng));
  auto w = random_weights(m * n, rng);
  inst.graph = [w](Tape &tape, std::span<const Var> p) {
    return project(tape, ad::matmul(p[0], p[1]), w);
  };
  return inst;
}

Instance linear_instance(std::mt19937_64 &rng, bool bias) {
  const std::size_t m = dim(rng), in = dim(rng), out = dim(rng);
  Instance inst;
  inst.params.push_back(random_tensor({m, in}, rng));
  inst.params.push_back(random_tensor({out, in}, rng));
  if (bias)
    inst.params.push_back(random_tensor({out}, rng));
  auto w = random_weights(m * out, rng);
  inst.graph = [w, bias](Tape &tape, std::span<const Var> p) {
    return project(tape, bias ? ad::linear(p[0], p[1], p[2])
                              : ad::linear(p[0], p[1]),
                   w);
  };
  return inst;
}

Instance masked_softmax_instance(std::mt19937_64 &rng) {
  const std::size_t m = dim(rng), n = dim(rng, 2, 6);
  std::vector<unsigned char> mask(n, 1);
  std::bernoulli_distribution close(0.4);
  for (std::size_t c = 0; c < n; ++c)
    mask[c] = close(rng) ? 0 : 1;
  mask[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1;
  Instance inst;
  inst.params.push_back(random_tensor({m, n}, rng));
  auto w = random_weights(m * n, rng);
  inst.graph = [w, mask](Tape &tape, std::span<const Var> p) {
    return project(tape, ad::softmax(ad::mask_columns(p[0], mask)), w);
  };
  return inst;
}

Instance concat_instance(std::mt19937_64 &rng, std::size_t axis) {
  const std::size_t parts = dim(rng, 1, 4), fixed = dim(rng);
  Instance inst;
  std::size_t total = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    const std::size_t v = dim(rng);
    total += v;
    inst.params.push_back(random_tensor(axis == 0 ? Shape{v, fixed}
                                                  : Shape{fixed, v},
                                        rng));
  }
  auto w = random_weights(total * fixed, rng);
  inst.graph = [w, axis](Tape &tape, std::span<const Var> p) {
    return project(tape, ad::concat(p, axis), w);
  };
  return inst;
}

Instance reduce_instance(std::mt19937_64 &rng, bool mean) {
  const std::size_t m = dim(rng), n = dim(rng);
  Instance inst;
  inst.params.push_back(random_tensor({m, n}, rng));
  inst.graph = [mean](Tape &, std::span<const Var> p) {
    return mean ? ad::mean(p[0]) : ad::sum(p[0]);
  };
  return inst;
}

Instance bce_instance(std::mt19937_64 &rng) {
  const std::size_t m = dim(rng, 1, 8), n = dim(rng, 1, 3);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> y(m * n);
  std::vector<unsigned char> observed(m * n);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = coin(rng) ? 1.0 : 0.0;
    observed[i] = coin(rng) || i == 0 ? 1 : 0;
  }
  const double pw = std::uniform_real_distribution<double>(0.2, 30.0)(rng);
  Instance inst;
  inst.params.push_back(random_tensor({m, n}, rng, 3.0));
  inst.graph = [y, observed, pw](Tape &, std::span<const Var> p) {
    return ad::bce_with_logits(p[0], y, pw, observed);
  };
  return inst;
}

Instance cross_entropy_instance(std::mt19937_64 &rng) {
  const std::size_t m = dim(rng, 1, 8), c = dim(rng, 2, 6);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(c) - 1);
  std::bernoulli_distribution coin(0.7);
  std::vector<int> y(m);
  std::vector<unsigned char> observed(m);
  for (std::size_t i = 0; i < m; ++i) {
    y[i] = cls(rng);
    observed[i] = coin(rng) || i == 0 ? 1 : 0;
  }
  Instance inst;
  inst.params.push_back(random_tensor({m, c}, rng, 2.0));
  inst.graph = [y, observed](Tape &, std::span<const Var> p) {
    return ad::cross_entropy(p[0], y, observed);
  };
  return inst;
}

Instance gate_mixture_instance(std::mt19937_64 &rng) {
  const std::size_t b = dim(rng), d = dim(rng), e = dim(rng, 2, 5), h = dim(rng);
  std::vector<unsigned char> mask(e, 1);
  std::bernoulli_distribution close(0.3);
  for (std::size_t i = 0; i < e; ++i)
    mask[i] = close(rng) ? 0 : 1;
  mask[0] = 1;
  Instance inst;
  inst.params.push_back(random_tensor({e, d}, rng));
  inst.params.push_back(random_tensor({b, d}, rng));
  for (std::size_t i = 0; i < e; ++i)
    inst.params.push_back(random_tensor({b, h}, rng));
  auto w = random_weights(b * h, rng);
  inst.graph = [w, mask](Tape &tape, std::span<const Var> p) {
    Var g = gate_forward(p[0], p[1], mask);
    return project(tape, mixture_forward(g, p.subspan(2)), w);
  };
  return inst;
}

Instance expert_instance(std::mt19937_64 &rng, ExpertKind kind) {
  ExpertSpec spec;
  spec.kind = kind;
  spec.input_dim = dim(rng, 1, 4);
  spec.hidden_dim = dim(rng, 1, 4);
  const std::size_t b = dim(rng, 1, 3), T = dim(rng, 1, 4);
  ParameterSet ps;
  const Expert expert = Expert::create(spec, ps, rng, "e");
  Instance inst;
  inst.params = ps.tensors();
  for (auto &t : inst.params)
    t = random_tensor(t.shape, rng);
  const std::size_t n = inst.params.size();
  for (std::size_t t = 0; t < T; ++t)
    inst.params.push_back(random_tensor({b, spec.input_dim}, rng));
  auto w = random_weights(b * spec.hidden_dim * T, rng);
  inst.graph = [expert, n, w](Tape &tape, std::span<const Var> p) {
    Sequence x(p.begin() + static_cast<std::ptrdiff_t>(n), p.end());
    const Sequence out = expert_forward(expert, p.first(n), x);
    return project(tape, ad::concat(out, 0), w);
  };
  return inst;
}

Instance tower_instance(std::mt19937_64 &rng) {
  TowerSpec spec;
  spec.input_dim = dim(rng);
  spec.hidden = {dim(rng)};
  spec.output_dim = dim(rng);
  spec.activation = Activation::tanh;
  const std::size_t b = dim(rng);
  ParameterSet ps;
  const Tower tower = Tower::create(spec, ps, rng, "t");
  Instance inst;
  inst.params = ps.tensors();
  for (auto &t : inst.params)
    t = random_tensor(t.shape, rng);
  const std::size_t n = inst.params.size();
  inst.params.push_back(random_tensor({b, spec.input_dim}, rng));
  auto w = random_weights(b * spec.output_dim, rng);
  inst.graph = [tower, n, w](Tape &tape, std::span<const Var> p) {
    return project(tape, tower_head(tower, p.first(n), p[n]), w);
  };
  return inst;
}

/// Holds the model, batch and loss of a full-graph instance.
struct ModelFixture {
  std::unique_ptr<MultiTaskModel> model;
  Batch batch;
};

Instance model_instance(std::mt19937_64 &rng, bool temporal,
                        std::shared_ptr<ModelFixture> &keep) {
  const std::uint64_t seed = rng();
  DatasetBundle data;
  ModelSpec spec;
  spec.kind = ModelKind::mmoeex;
  spec.experts = 4;
  spec.mask_mode = MaskMode::exclusivity;
  spec.alpha = 0.5;
  spec.seed = seed;
  spec.tower_activation = Activation::tanh;
  if (temporal) {
    TemporalSuiteOptions o;
    o.seed = seed;
    o.samples = 20;
    o.steps = 4;
    o.window = 2;
    o.features = 3;
    o.los_classes = 3;
    o.phenotypes = 2;
    data = gen_temporal_suite(o);
    spec.expert.kind = ExpertKind::gru;
    spec.expert.hidden_dim = 3;
    spec.window = 2;
    spec.temporal = true;
  } else {
    TabularSuiteOptions o;
    o.seed = seed;
    o.samples = 100;
    o.features = 5;
    o.tasks = 3;
    o.pos_weight = 3.0;
    data = gen_tabular_suite(o);
    spec.expert.kind = ExpertKind::dense;
    spec.expert.hidden_dim = 6;
  }
  spec.tasks = data.tasks;
  spec.expert.input_dim = data.features;
  keep = std::make_shared<ModelFixture>();
  keep->model = std::make_unique<MultiTaskModel>(spec);
  std::vector<std::size_t> rows(8);
  for (std::size_t i = 0; i < rows.size(); ++i)
    rows[i] = i;
  keep->batch = make_batch(data, rows);
  Instance inst;
  inst.params = keep->model->parameters().tensors();
  // Perturb gates so the softmax is away from uniform.
  for (auto &t : inst.params)
    for (double &v : t.values)
      v += std::normal_distribution<double>(0.0, 0.3)(rng);
  inst.graph = [fixture = keep](Tape &tape, std::span<const Var> p) {
    const auto losses = make_task_loss(*fixture->model, fixture->batch)(tape, p);
    Var total = losses[0];
    for (std::size_t k = 1; k < losses.size(); ++k)
      total = ad::add(total, losses[k]);
    return total;
  };
  return inst;
}

} // namespace

std::vector<GradCheckResult> gradcheck_suite(const GradCheckOptions &o) {
  const std::vector<std::pair<std::string, Generator>> primitives = {
      {"matmul", matmul_instance},
      {"linear", [](auto &r) { return linear_instance(r, false); }},
      {"linear_bias", [](auto &r) { return linear_instance(r, true); }},
      {"add", binary(ad::add)},
      {"sub", binary(ad::sub)},
      {"mul", binary(ad::mul)},
      {"scale", unary([](Var a) { return ad::scale(a, -1.7); })},
      {"relu", unary(ad::relu)},
      {"sigmoid", unary(ad::sigmoid)},
      {"tanh", unary(ad::tanh)},
      {"softmax", unary(ad::softmax)},
      {"masked_softmax", masked_softmax_instance},
      {"concat_rows", [](auto &r) { return concat_instance(r, 0); }},
      {"concat_cols", [](auto &r) { return concat_instance(r, 1); }},
      {"sum", [](auto &r) { return reduce_instance(r, false); }},
      {"mean", [](auto &r) { return reduce_instance(r, true); }},
      {"bce_with_logits", bce_instance},
      {"cross_entropy", cross_entropy_instance},
      {"gate_mixture", gate_mixture_instance},
      {"dense_expert", [](auto &r) { return expert_instance(r, ExpertKind::dense); }},
      {"rnn_expert", [](auto &r) { return expert_instance(r, ExpertKind::rnn); }},
      {"gru_expert", [](auto &r) { return expert_instance(r, ExpertKind::gru); }},
      {"tower", tower_instance},
  };

  std::seed_seq seq{static_cast<std::uint32_t>(o.seed),
                    static_cast<std::uint32_t>(o.seed >> 32), 0x67726164u};
  std::mt19937_64 rng(seq);
  std::vector<GradCheckResult> results;
  auto run = [&](const std::string &name, std::size_t count,
                 const std::function<Instance()> &make) {
    GradCheckResult r;
    r.name = name;
    r.instances = count;
    for (std::size_t i = 0; i < count; ++i) {
      Instance inst = make();
      r.max_error =
          std::max(r.max_error, ad::grad_check(inst.graph, inst.params, o.eps));
    }
    r.passed = r.max_error < o.tolerance;
    results.push_back(r);
  };
  for (const auto &[name, gen] : primitives)
    run(name, o.instances, [&] { return gen(rng); });
  std::shared_ptr<ModelFixture> keep;
  run("mmoeex_tabular_graph", o.model_instances,
      [&] { return model_instance(rng, false, keep); });
  run("mmoeex_temporal_graph", o.model_instances,
      [&] { return model_instance(rng, true, keep); });
  return results;
}

} // namespace mmoeex
