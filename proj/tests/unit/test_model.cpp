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
#include <mmoeex/model.hpp>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <random>

using namespace mmoeex;

namespace {

DatasetBundle small_tabular(std::uint64_t seed = 0) {
  TabularSuiteOptions o;
  o.seed = seed;
  o.samples = 200;
  o.features = 6;
  o.tasks = 3;
  return gen_tabular_suite(o);
}

DatasetBundle small_temporal(std::uint64_t seed = 0) {
  TemporalSuiteOptions o;
  o.seed = seed;
  o.samples = 40;
  o.steps = 6;
  o.window = 3;
  o.features = 4;
  o.los_classes = 4;
  o.phenotypes = 3;
  return gen_temporal_suite(o);
}

ModelSpec spec_for(const DatasetBundle &data, ModelKind kind, std::uint64_t seed) {
  ModelSpec s;
  s.kind = kind;
  s.tasks = data.tasks;
  s.expert.input_dim = data.features;
  s.expert.hidden_dim = 5;
  s.experts = 6;
  s.temporal = data.temporal;
  s.seed = seed;
  if (data.temporal) {
    s.expert.kind = ExpertKind::gru;
    s.window = 3;
  }
  return s;
}

std::vector<std::vector<double>> logits_of(const MultiTaskModel &m, const Batch &b) {
  Tape tape;
  auto params = m.parameters().bind_constant(tape);
  const auto out = m.forward(params, m.bind_inputs(tape, b));
  std::vector<std::vector<double>> flat;
  for (const Sequence &seq : out) {
    flat.emplace_back();
    for (Var v : seq)
      flat.back().insert(flat.back().end(), v.values().begin(), v.values().end());
  }
  return flat;
}

Batch first_rows(const DatasetBundle &data, std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i)
    rows[i] = i;
  return make_batch(data, rows);
}

} // namespace

TEST(Model, ParameterCountClosedForm) {
  ModelSpec s;
  s.kind = ModelKind::mmoeex;
  s.tasks = {TaskSpec::binary("a"), TaskSpec::binary("b"), TaskSpec::binary("c")};
  s.expert.input_dim = 8;
  s.expert.hidden_dim = 16;
  s.experts = 12;
  // 12 experts of 8*16+16, 3 towers of 16*4+4+4+1, 3 gates of 12*8.
  EXPECT_EQ(parameter_count(s), 12u * 144 + 3 * 73 + 3 * 96);
  EXPECT_EQ(MultiTaskModel(s).parameters().scalar_count(), parameter_count(s));

  s.kind = ModelKind::shared_bottom;
  EXPECT_EQ(parameter_count(s), 144u + 3 * 73);
  EXPECT_EQ(MultiTaskModel(s).parameters().scalar_count(), parameter_count(s));

  const DatasetBundle t = small_temporal();
  const ModelSpec ts = spec_for(t, ModelKind::mmoe, 1);
  EXPECT_EQ(MultiTaskModel(ts).parameters().scalar_count(), parameter_count(ts));
}

TEST(Model, ZeroAlphaMmoeexEqualsMmoeBitwise) {
  for (const DatasetBundle &data : {small_tabular(1), small_temporal(1)}) {
    ModelSpec a = spec_for(data, ModelKind::mmoe, 77);
    ModelSpec b = a;
    b.kind = ModelKind::mmoeex;
    b.mask_mode = MaskMode::exclusivity;
    const MultiTaskModel ma(a), mb(b);
    EXPECT_EQ(ma.parameters().tensors().size(), mb.parameters().tensors().size());
    for (std::size_t i = 0; i < ma.parameters().size(); ++i)
      EXPECT_EQ(ma.parameters().tensors()[i].values,
                mb.parameters().tensors()[i].values);
    const Batch batch = first_rows(data, 16);
    EXPECT_EQ(logits_of(ma, batch), logits_of(mb, batch));
  }
}

TEST(Model, SingleExpertMmoeEqualsSharedBottom) {
  const DatasetBundle data = small_tabular(2);
  ModelSpec a = spec_for(data, ModelKind::shared_bottom, 5);
  ModelSpec b = a;
  b.kind = ModelKind::mmoe;
  b.experts = 1;
  const MultiTaskModel ma(a), mb(b);
  const Batch batch = first_rows(data, 20);
  EXPECT_EQ(logits_of(ma, batch), logits_of(mb, batch));
}

TEST(Model, LogitShapesFollowTaskKinds) {
  const DatasetBundle data = small_temporal(3);
  const MultiTaskModel m(spec_for(data, ModelKind::mmoeex, 3));
  const Batch batch = first_rows(data, 5);
  const auto out = logits_of(m, batch);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].size(), 6u * 5);     // decomp: every step
  EXPECT_EQ(out[1].size(), 6u * 5 * 4); // los: every step, 4 classes
  EXPECT_EQ(out[2].size(), 5u);         // mortality: window step
  EXPECT_EQ(out[3].size(), 5u * 3);     // phenotype: 3 labels
}

TEST(Model, ClosedGateIsolatesExclusiveExpert) {
  std::mt19937_64 rng(11);
  for (int instance = 0; instance < 10; ++instance) {
    const DatasetBundle data =
        instance % 2 ? small_temporal(instance) : small_tabular(instance);
    ModelSpec s = spec_for(data, ModelKind::mmoeex, rng());
    s.mask_mode = MaskMode::exclusivity;
    s.alpha = 0.5;
    MultiTaskModel m(s);
    const Batch batch = first_rows(data, 12);
    const GateMask &mask = m.mask();
    for (std::size_t e = 0; e < m.experts().size(); ++e) {
      if (mask.column_degree(e) != 1)
        continue;
      for (std::size_t k = 0; k < m.task_count(); ++k) {
        if (mask.open(k, e))
          continue;
        ParameterSet &ps = m.parameters();
        ps.zero_grad();
        Tape tape;
        auto params = ps.bind(tape);
        const auto losses = make_task_loss(m, batch)(tape, params);
        tape.backward(losses[k]);
        const Expert &ex = m.experts()[e];
        const std::size_t count = ex.spec.kind == ExpertKind::gru ? 9 : 2;
        for (std::size_t p = ex.first_param; p < ex.first_param + count; ++p)
          for (double g : ps.tensors()[p].grad)
            ASSERT_EQ(g, 0.0) << "instance " << instance << " expert " << e
                              << " task " << k;
      }
    }
  }
}

TEST(Model, SpecValidation) {
  const DatasetBundle data = small_tabular();
  ModelSpec s = spec_for(data, ModelKind::mmoe, 0);
  s.alpha = 0.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = spec_for(data, ModelKind::stl, 0);
  EXPECT_THROW(s.validate(), ConfigError);
  s.tasks.resize(1);
  EXPECT_NO_THROW(s.validate());
  s = spec_for(data, ModelKind::mmoeex, 0);
  s.expert.kind = ExpertKind::rnn;
  EXPECT_THROW(s.validate(), ConfigError);
  s = spec_for(data, ModelKind::mmoeex, 0);
  s.tasks[0].temporal = Temporal::per_step;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Model, SpecJsonRoundTrip) {
  const DatasetBundle data = small_temporal();
  ModelSpec s = spec_for(data, ModelKind::mmoeex, 123);
  s.mask_mode = MaskMode::exclusion;
  s.alpha = 0.25;
  const nlohmann::json j = s;
  EXPECT_EQ(j.get<ModelSpec>(), s);
}
