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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mmoeex;

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

ExpertSpec spec_of(ExpertKind kind, std::size_t d, std::size_t h) {
  ExpertSpec s;
  s.kind = kind;
  s.input_dim = d;
  s.hidden_dim = h;
  return s;
}

} // namespace

TEST(Experts, ParameterCountMatchesAllocatedScalars) {
  std::mt19937_64 rng(1);
  for (ExpertKind kind : {ExpertKind::dense, ExpertKind::rnn, ExpertKind::gru}) {
    for (std::size_t d : {1u, 3u, 8u}) {
      for (std::size_t h : {1u, 4u, 16u}) {
        ParameterSet ps;
        Expert::create(spec_of(kind, d, h), ps, rng, "e");
        EXPECT_EQ(ps.scalar_count(), parameter_count(spec_of(kind, d, h)));
      }
    }
  }
  // Hand counts for d = 8, h = 16.
  EXPECT_EQ(parameter_count(spec_of(ExpertKind::dense, 8, 16)), 8u * 16 + 16);
  EXPECT_EQ(parameter_count(spec_of(ExpertKind::rnn, 8, 16)), 8u * 16 + 256 + 16);
  EXPECT_EQ(parameter_count(spec_of(ExpertKind::gru, 8, 16)), 3u * (128 + 256 + 16));
}

TEST(Experts, InitialisationIsFanInUniformWithZeroBias) {
  std::mt19937_64 rng(2);
  ParameterSet ps;
  Expert::create(spec_of(ExpertKind::dense, 25, 40), ps, rng, "e");
  const Tensor &w = ps.tensors()[0];
  const Tensor &b = ps.tensors()[1];
  for (double v : w.values)
    EXPECT_LE(std::abs(v), 1.0 / 5.0);
  for (double v : b.values)
    EXPECT_EQ(v, 0.0);
  EXPECT_EQ(ps.names()[0], "e.weight");
}

TEST(Experts, GruStepsMatchHandEvaluation) {
  // Scalar GRU (d = h = 1) so each gate is one multiply-add.
  std::mt19937_64 rng(3);
  ParameterSet ps;
  const Expert e = Expert::create(spec_of(ExpertKind::gru, 1, 1), ps, rng, "g");
  const double wz = 0.3, uz = -0.7, bz = 0.1;
  const double wr = -0.4, ur = 0.9, br = 0.2;
  const double wn = 1.1, un = 0.6, bn = -0.3;
  const double vals[9] = {wz, uz, bz, wr, ur, br, wn, un, bn};
  for (std::size_t i = 0; i < 9; ++i)
    ps.tensors()[i].values[0] = vals[i];

  const double x0 = 0.8, x1 = -1.5;
  Tape tape;
  auto params = ps.bind_constant(tape);
  Sequence x{tape.constant({1, 1}, {x0}), tape.constant({1, 1}, {x1})};
  const Sequence h = expert_forward(e, params, x);

  double hp = 0.0;
  double expect[2];
  const double xs[2] = {x0, x1};
  for (int t = 0; t < 2; ++t) {
    const double z = sig(wz * xs[t] + uz * hp + bz);
    const double r = sig(wr * xs[t] + ur * hp + br);
    const double n = std::tanh(wn * xs[t] + un * (r * hp) + bn);
    hp = (1.0 - z) * n + z * hp;
    expect[t] = hp;
  }
  EXPECT_NEAR(h[0].item(), expect[0], 1e-15);
  EXPECT_NEAR(h[1].item(), expect[1], 1e-15);
}

TEST(Experts, RnnStepMatchesHandEvaluation) {
  std::mt19937_64 rng(4);
  ParameterSet ps;
  const Expert e = Expert::create(spec_of(ExpertKind::rnn, 1, 1), ps, rng, "r");
  ps.tensors()[0].values[0] = 0.5;
  ps.tensors()[1].values[0] = -0.25;
  ps.tensors()[2].values[0] = 0.1;
  Tape tape;
  auto params = ps.bind_constant(tape);
  Sequence x{tape.constant({1, 1}, {2.0}), tape.constant({1, 1}, {1.0})};
  const Sequence h = expert_forward(e, params, x);
  const double h0 = std::tanh(0.5 * 2.0 + 0.1);
  const double h1 = std::tanh(0.5 * 1.0 - 0.25 * h0 + 0.1);
  EXPECT_NEAR(h[0].item(), h0, 1e-15);
  EXPECT_NEAR(h[1].item(), h1, 1e-15);
}

TEST(Experts, RecurrentOutputsAreCausal) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (ExpertKind kind : {ExpertKind::rnn, ExpertKind::gru}) {
    ParameterSet ps;
    const Expert e = Expert::create(spec_of(kind, 3, 4), ps, rng, "e");
    std::vector<std::vector<double>> steps(6, std::vector<double>(6));
    for (auto &s : steps)
      for (double &v : s)
        v = g(rng);
    auto run = [&](const std::vector<std::vector<double>> &xs) {
      Tape tape;
      auto params = ps.bind_constant(tape);
      Sequence x;
      for (const auto &s : xs)
        x.push_back(tape.constant({2, 3}, s));
      std::vector<std::vector<double>> out;
      for (Var h : expert_forward(e, params, x))
        out.emplace_back(h.values().begin(), h.values().end());
      return out;
    };
    const auto base = run(steps);
    auto changed = steps;
    for (std::size_t t = 3; t < changed.size(); ++t)
      for (double &v : changed[t])
        v += 5.0;
    const auto after = run(changed);
    for (std::size_t t = 0; t < 3; ++t)
      EXPECT_EQ(base[t], after[t]) << "step " << t;
    EXPECT_NE(base[3], after[3]);
  }
}

TEST(Experts, DenseExpertAppliesPerStep) {
  std::mt19937_64 rng(6);
  ParameterSet ps;
  const Expert e = Expert::create(spec_of(ExpertKind::dense, 2, 3), ps, rng, "d");
  Tape tape;
  auto params = ps.bind_constant(tape);
  Var a = tape.constant({1, 2}, {0.5, -1.0});
  Var b = tape.constant({1, 2}, {2.0, 0.25});
  const Sequence seq = expert_forward(e, params, Sequence{a, b});
  const Var single = expert_forward(e, params, b);
  EXPECT_EQ(std::vector<double>(seq[1].values().begin(), seq[1].values().end()),
            std::vector<double>(single.values().begin(), single.values().end()));
}

TEST(Experts, RecurrentExpertRejectsTabularInput) {
  std::mt19937_64 rng(7);
  ParameterSet ps;
  const Expert e = Expert::create(spec_of(ExpertKind::gru, 2, 3), ps, rng, "g");
  Tape tape;
  auto params = ps.bind_constant(tape);
  EXPECT_THROW(expert_forward(e, params, tape.constant({1, 2}, {0.0, 0.0})),
               ShapeError);
  EXPECT_THROW(expert_forward(e, params, tape.constant({1, 3}, {0, 0, 0})),
               ShapeError);
}

TEST(Experts, TowerStepSelection) {
  TowerSpec s;
  s.temporal = Temporal::per_step;
  EXPECT_EQ(tower_steps(s, 3), (std::vector<std::size_t>{0, 1, 2}));
  s.temporal = Temporal::per_sequence;
  EXPECT_EQ(tower_steps(s, 5), (std::vector<std::size_t>{4}));
  s.temporal = Temporal::first_window;
  s.window = 4;
  EXPECT_EQ(tower_steps(s, 5), (std::vector<std::size_t>{3}));
  EXPECT_THROW(tower_steps(s, 3), DataError);
}

TEST(Experts, TowerIsAffineStackWithoutActivation) {
  std::mt19937_64 rng(8);
  TowerSpec s;
  s.input_dim = 2;
  s.hidden = {3};
  s.output_dim = 1;
  ParameterSet ps;
  const Tower t = Tower::create(s, ps, rng, "t");
  EXPECT_EQ(ps.scalar_count(), parameter_count(s));
  EXPECT_EQ(parameter_count(s), 2u * 3 + 3 + 3 * 1 + 1);
  // Without an activation the tower is affine: f(a) + f(b) = f(a + b) + f(0).
  Tape tape;
  auto params = ps.bind_constant(tape);
  auto f = [&](double u, double v) {
    return tower_head(t, params, tape.constant({1, 2}, {u, v})).item();
  };
  EXPECT_NEAR(f(1, 2) + f(-3, 0.5), f(-2, 2.5) + f(0, 0), 1e-14);
}
