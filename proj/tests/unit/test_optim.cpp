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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <random>

using namespace mmoeex;

namespace {

// One scalar parameter; each task loss is 0.5 * c_k * theta^2.
struct Quadratic {
  ParameterSet params;
  std::vector<double> curvature;

  Quadratic(double theta, std::vector<double> c) : curvature(std::move(c)) {
    params.add("theta", Tensor({1}, {theta}));
  }

  TaskLossFn loss() const {
    return [c = curvature](Tape &, std::span<const Var> p) {
      std::vector<Var> out;
      for (double ck : c)
        out.push_back(ad::sum(ad::scale(ad::mul(p[0], p[0]), 0.5 * ck)));
      return out;
    };
  }
  double theta() const { return params.tensors()[0].values[0]; }
};

DatasetBundle tiny_tabular(std::uint64_t seed) {
  TabularSuiteOptions o;
  o.seed = seed;
  o.samples = 128;
  o.features = 5;
  o.tasks = 3;
  return gen_tabular_suite(o);
}

ModelSpec tiny_spec(const DatasetBundle &d, std::uint64_t seed) {
  ModelSpec s;
  s.kind = ModelKind::mmoeex;
  s.tasks = d.tasks;
  s.expert.input_dim = d.features;
  s.expert.hidden_dim = 4;
  s.experts = 4;
  s.mask_mode = MaskMode::exclusivity;
  s.alpha = 0.5;
  s.seed = seed;
  return s;
}

Batch rows_of(const DatasetBundle &d, std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return make_batch(d, rows);
}

std::vector<std::vector<double>> joint_gradient(ParameterSet &params,
                                                const TaskLossFn &loss) {
  params.zero_grad();
  Tape tape;
  auto vars = params.bind(tape);
  auto losses = loss(tape, vars);
  Var total = losses[0];
  for (std::size_t k = 1; k < losses.size(); ++k)
    total = ad::add(total, losses[k]);
  tape.backward(total);
  std::vector<std::vector<double>> g;
  for (const Tensor &t : params.tensors())
    g.push_back(t.grad);
  return g;
}

double max_abs_diff(const std::vector<std::vector<double>> &a,
                    const std::vector<std::vector<double>> &b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      m = std::max(m, std::abs(a[i][j] - b[i][j]));
  return m;
}

std::size_t value_hash(const ParameterSet &p) {
  std::size_t h = 0;
  for (const Tensor &t : p.tensors())
    for (double v : t.values)
      h = h * 1000003u ^ std::hash<double>{}(v);
  return h;
}

} // namespace

TEST(Optim, MamlQuadraticOracle) {
  Quadratic q(1.0, {1.0});
  GradientDescent sgd(0.1);
  MamlConfig maml{true, 0.1, false};
  auto g = maml_accumulated_gradient(q.params, q.loss(), maml, {});
  EXPECT_NEAR(g[0][0], 0.9, 1e-12);
  maml_mtl_step(q.params, q.loss(), sgd, maml, {});
  EXPECT_NEAR(q.theta(), 0.91, 1e-12);
}

TEST(Optim, MamlIdenticalTasksDoubleTheGradient) {
  Quadratic one(0.7, {2.0});
  Quadratic two(0.7, {2.0, 2.0});
  MamlConfig maml{true, 0.05, false};
  const auto g1 = maml_accumulated_gradient(one.params, one.loss(), maml, {});
  const auto g2 = maml_accumulated_gradient(two.params, two.loss(), maml, {});
  EXPECT_EQ(g2[0][0], 2.0 * g1[0][0]);
}

TEST(Optim, MamlZeroInnerRateIsJointGradient) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DatasetBundle d = tiny_tabular(seed);
    MultiTaskModel model(tiny_spec(d, seed));
    const Batch b = rows_of(d, 16);
    const TaskLossFn loss = make_task_loss(model, b);
    const auto joint = joint_gradient(model.parameters(), loss);
    MamlConfig maml{true, 0.0, false};
    const auto acc = maml_accumulated_gradient(model.parameters(), loss, maml, {});
    EXPECT_LE(max_abs_diff(joint, acc), 1e-12) << "seed " << seed;
  }
}

TEST(Optim, MamlZeroInnerRateStepMatchesJointStep) {
  const DatasetBundle d = tiny_tabular(1);
  MultiTaskModel a(tiny_spec(d, 1)), b(tiny_spec(d, 1));
  const Batch batch = rows_of(d, 16);
  Adam opt_a(0.01), opt_b(0.01);
  joint_step(a.parameters(), make_task_loss(a, batch), opt_a, {});
  auto g = maml_accumulated_gradient(b.parameters(), make_task_loss(b, batch),
                                     {true, 0.0, false}, {});
  for (std::size_t i = 0; i < g.size(); ++i)
    b.parameters().tensors()[i].grad = g[i];
  opt_b.step(b.parameters().tensors());
  std::vector<std::vector<double>> va, vb;
  for (const Tensor &t : a.parameters().tensors())
    va.push_back(t.values);
  for (const Tensor &t : b.parameters().tensors())
    vb.push_back(t.values);
  EXPECT_LE(max_abs_diff(va, vb), 1e-12);
}

TEST(Optim, MamlGradientIsTaskOrderIndependent) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const DatasetBundle d = tiny_tabular(seed);
    MultiTaskModel model(tiny_spec(d, seed));
    const Batch b = rows_of(d, 16);
    const TaskLossFn loss = make_task_loss(model, b);
    const TaskLossFn reversed = [&](Tape &t, std::span<const Var> p) {
      auto l = loss(t, p);
      std::reverse(l.begin(), l.end());
      return l;
    };
    MamlConfig maml{true, 0.05, false};
    const auto fwd = maml_accumulated_gradient(model.parameters(), loss, maml, {});
    const auto rev =
        maml_accumulated_gradient(model.parameters(), reversed, maml, {});
    EXPECT_LE(max_abs_diff(fwd, rev), 1e-10);
  }
}

TEST(Optim, MamlLeavesThetaUntouchedUntilUpdate) {
  const DatasetBundle d = tiny_tabular(2);
  MultiTaskModel model(tiny_spec(d, 2));
  const Batch b = rows_of(d, 16);
  const std::size_t before = value_hash(model.parameters());
  std::vector<std::size_t> seen;
  Adam opt(0.01);
  maml_mtl_step(model.parameters(), make_task_loss(model, b), opt,
                {true, 0.05, false}, {},
                [&](std::size_t task, const ParameterSet &p) {
                  seen.push_back(task);
                  EXPECT_EQ(value_hash(p), before);
                });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_NE(value_hash(model.parameters()), before);
}

TEST(Optim, MamlConfigValidation) {
  EXPECT_THROW((MamlConfig{true, 0.0, false}.validate(3)), ConfigError);
  EXPECT_NO_THROW((MamlConfig{false, 0.0, false}.validate(3)));
  EXPECT_THROW((MamlConfig{true, 0.1, false}.validate(65)), ConfigError);
  EXPECT_NO_THROW((MamlConfig{true, 0.1, false}.validate(64)));
  std::vector<std::string> warnings;
  auto old = set_warning_handler(
      [&](const std::string &m) { warnings.push_back(m); });
  EXPECT_NO_THROW((MamlConfig{true, 0.1, true}.validate(65)));
  set_warning_handler(old);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("scale"), std::string::npos);
  Quadratic q(1.0, {1.0});
  GradientDescent sgd(0.1);
  EXPECT_THROW(maml_mtl_step(q.params, q.loss(), sgd, {false, 0.1, false}, {}),
               ContractError);
}

TEST(Optim, AdamHandTrace) {
  // Reference recurrence evaluated separately for theta0 = 1, L = theta^2 / 2.
  const double expect[3] = {0.900000001, 0.8004122297123382, 0.701586274504415};
  ParameterSet p;
  p.add("theta", Tensor({1}, {1.0}));
  Adam adam(0.1, 0.0);
  for (int s = 0; s < 3; ++s) {
    Tensor &t = p.tensors()[0];
    t.grad = {t.values[0]};
    adam.step(p.tensors());
    EXPECT_NEAR(t.values[0], expect[s], 1e-15) << "step " << s + 1;
  }
  EXPECT_EQ(adam.step_count(), 3u);
}

TEST(Optim, DecoupledWeightDecay) {
  ParameterSet p;
  p.add("w", Tensor({1}, {2.0}));
  Adam adam(0.1, 0.5);
  p.tensors()[0].grad = {0.0};
  adam.step(p.tensors());
  // Zero gradient leaves the moments at zero; only decay moves theta.
  EXPECT_DOUBLE_EQ(p.tensors()[0].values[0], 2.0 - 0.1 * 0.5 * 2.0);
  EXPECT_EQ(adam.first_moments()[0][0], 0.0);
  GradientDescent sgd(0.1, 0.5);
  p.tensors()[0].values = {2.0};
  p.tensors()[0].grad = {1.0};
  sgd.step(p.tensors());
  EXPECT_DOUBLE_EQ(p.tensors()[0].values[0], 2.0 - 0.1 * (1.0 + 1.0));
  EXPECT_THROW(sgd.set_learning_rate(0.0), ConfigError);
}

TEST(Optim, StepDecaySchedule) {
  StepDecaySchedule s;
  EXPECT_DOUBLE_EQ(s.lr(0), 0.001);
  EXPECT_DOUBLE_EQ(s.lr(9), 0.001);
  EXPECT_DOUBLE_EQ(s.lr(10), 0.0009);
  EXPECT_NEAR(s.lr(25), 0.001 * 0.81, 1e-18);
}

TEST(Optim, SelectBest) {
  using H = std::vector<std::vector<double>>;
  EXPECT_EQ(select_best(H{{0.7, 0.8}}), 0u);
  EXPECT_EQ(select_best(H{{2.1}, {2.5}, {2.4}}), 1u);
  EXPECT_EQ(select_best(H{{2.5}, {2.5}}), 0u);
  const double nan = std::nan("");
  EXPECT_EQ(select_best(H{{0.5, 0.5}, {0.9, nan}, {0.6, 0.6}}), 2u);
}

TEST(Optim, ZeroModelGivesLn2PerBinaryTask) {
  const DatasetBundle d = tiny_tabular(0);
  MultiTaskModel model(tiny_spec(d, 0));
  for (Tensor &t : model.parameters().tensors())
    std::fill(t.values.begin(), t.values.end(), 0.0);
  const Batch b = rows_of(d, 32);
  GradientDescent sgd(0.1);
  const auto losses = joint_step(model.parameters(), make_task_loss(model, b),
                                 sgd, {});
  for (double l : losses)
    EXPECT_NEAR(l, std::log(2.0), 1e-15);
}

TEST(Optim, MaskedTaskContributesNothing) {
  DatasetBundle d = tiny_tabular(3);
  std::fill(d.labels[1].observed.begin(), d.labels[1].observed.end(), 0);
  MultiTaskModel model(tiny_spec(d, 3));
  const Batch b = rows_of(d, 16);
  const auto losses = joint_gradient(model.parameters(), make_task_loss(model, b));
  const Tower &tower = model.towers()[1];
  const std::size_t n = 2 * (tower.spec.hidden.size() + 1);
  for (std::size_t i = tower.first_param; i < tower.first_param + n; ++i)
    for (double g : model.parameters().tensors()[i].grad)
      EXPECT_EQ(g, 0.0) << model.parameters().names()[i];
  Tape tape;
  auto vars = model.parameters().bind_constant(tape);
  EXPECT_EQ(make_task_loss(model, b)(tape, vars)[1].item(), 0.0);
}

TEST(Optim, JointStepDecreasesConvexLoss) {
  Quadratic q(1.5, {1.0, 3.0});
  GradientDescent sgd(0.1);
  auto l0 = joint_step(q.params, q.loss(), sgd, {});
  auto l1 = joint_step(q.params, q.loss(), sgd, {});
  auto l2 = joint_step(q.params, q.loss(), sgd, {});
  const double s0 = l0[0] + l0[1], s1 = l1[0] + l1[1], s2 = l2[0] + l2[1];
  EXPECT_LT(s1, s0);
  EXPECT_LT(s2, s1);
  // theta shrinks by (1 - lr * sum c) per step.
  EXPECT_NEAR(q.theta(), 1.5 * std::pow(0.6, 3), 1e-15);
}

TEST(Optim, NonFiniteLossNamesEpochTaskAndBatch) {
  ParameterSet p;
  p.add("theta", Tensor({1}, {1.0}));
  const TaskLossFn loss = [](Tape &, std::span<const Var> v) {
    return std::vector<Var>{ad::sum(v[0]),
                            ad::sum(ad::scale(v[0], std::nan("")))};
  };
  GradientDescent sgd(0.1);
  StepContext ctx{4, 17, {"good", "broken"}};
  try {
    joint_step(p, loss, sgd, ctx);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError &e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("task broken"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 17"), std::string::npos) << msg;
  }
  EXPECT_EQ(p.tensors()[0].values[0], 1.0);
}
