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
#include <mmoeex/harness.hpp>
#include <mmoeex/log.hpp>
#include <mmoeex/optim.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace mmoeex {

using nlohmann::json;

namespace {

void check_keys(const json &j, std::initializer_list<const char *> allowed,
                const std::string &block) {
  if (!j.is_object())
    throw ConfigError("'" + block + "' must be an object");
  for (const auto &item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char *k) { return item.key() == k; });
    if (!known)
      throw ConfigError("unknown key '" + block + "." + item.key() + "'");
  }
}

template <typename T>
void read(const json &j, const char *key, T &out, const std::string &block) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null())
    return;
  try {
    out = it->get<T>();
  } catch (const json::exception &e) {
    throw ConfigError("'" + block + "." + key + "' has the wrong type: " +
                      e.what());
  }
}

std::string fmt17(double v) {
  if (std::isnan(v))
    return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TabularSuiteOptions tabular_options(const json &p) {
  check_keys(p, {"seed", "samples", "features", "tasks", "correlation", "noise",
                 "loading_jitter", "positive_rates", "pos_weight"},
             "dataset.params");
  TabularSuiteOptions o;
  const std::string b = "dataset.params";
  read(p, "seed", o.seed, b);
  read(p, "samples", o.samples, b);
  read(p, "features", o.features, b);
  read(p, "tasks", o.tasks, b);
  read(p, "correlation", o.correlation, b);
  read(p, "noise", o.noise, b);
  read(p, "loading_jitter", o.loading_jitter, b);
  read(p, "positive_rates", o.positive_rates, b);
  read(p, "pos_weight", o.pos_weight, b);
  return o;
}

TemporalSuiteOptions temporal_options(const json &p) {
  check_keys(p, {"seed", "samples", "steps", "features", "window",
                 "los_classes", "phenotypes", "noise", "feature_noise",
                 "decomp_pos_weight", "mortality_pos_weight",
                 "phenotype_pos_weight"},
             "dataset.params");
  TemporalSuiteOptions o;
  const std::string b = "dataset.params";
  read(p, "seed", o.seed, b);
  read(p, "samples", o.samples, b);
  read(p, "steps", o.steps, b);
  read(p, "features", o.features, b);
  read(p, "window", o.window, b);
  read(p, "los_classes", o.los_classes, b);
  read(p, "phenotypes", o.phenotypes, b);
  read(p, "noise", o.noise, b);
  read(p, "feature_noise", o.feature_noise, b);
  read(p, "decomp_pos_weight", o.decomp_pos_weight, b);
  read(p, "mortality_pos_weight", o.mortality_pos_weight, b);
  read(p, "phenotype_pos_weight", o.phenotype_pos_weight, b);
  return o;
}

ManyTaskSuiteOptions manytask_options(const json &p) {
  check_keys(p, {"seed", "samples", "features", "tasks", "min_positive_rate",
                 "max_positive_rate", "missing_rate", "noise", "pos_weight"},
             "dataset.params");
  ManyTaskSuiteOptions o;
  const std::string b = "dataset.params";
  read(p, "seed", o.seed, b);
  read(p, "samples", o.samples, b);
  read(p, "features", o.features, b);
  read(p, "tasks", o.tasks, b);
  read(p, "min_positive_rate", o.min_positive_rate, b);
  read(p, "max_positive_rate", o.max_positive_rate, b);
  read(p, "missing_rate", o.missing_rate, b);
  read(p, "noise", o.noise, b);
  read(p, "pos_weight", o.pos_weight, b);
  return o;
}

std::size_t dataset_window(const DatasetConfig &d) {
  if (d.generator == "temporal")
    return temporal_options(d.params).window;
  return 1;
}

} // namespace

void ExperimentConfig::validate() const {
  static const std::set<std::string> generators{"tabular", "temporal",
                                                "manytask", "file"};
  if (!generators.count(dataset.generator))
    throw ConfigError("unknown dataset generator '" + dataset.generator + "'");
  if (dataset.generator == "file" && dataset.path.empty())
    throw ConfigError("dataset.path is required for generator 'file'");
  if (dataset.generator == "tabular")
    tabular_options(dataset.params);
  else if (dataset.generator == "temporal")
    temporal_options(dataset.params);
  else if (dataset.generator == "manytask")
    manytask_options(dataset.params);

  if (model.kind != ModelKind::mmoeex &&
      (model.alpha != 0.0 || model.mask_mode != MaskMode::none))
    throw ConfigError("model.alpha and model.mask_mode are only valid for "
                      "mmoeex");
  if (!(model.alpha >= 0.0 && model.alpha <= 1.0))
    throw ConfigError("model.alpha must lie in [0, 1]");
  if (model.experts < 1)
    throw ConfigError("model.experts must be >= 1");
  if (model.hidden_dim < 1)
    throw ConfigError("model.hidden_dim must be >= 1");

  if (training.epochs < 1)
    throw ConfigError("training.epochs must be >= 1");
  if (training.batch_size < 1 || training.eval_chunk < 1)
    throw ConfigError("training.batch_size and eval_chunk must be >= 1");
  if (training.optimizer != "adam" && training.optimizer != "sgd")
    throw ConfigError("training.optimizer must be 'adam' or 'sgd'");
  if (!(training.lr > 0.0))
    throw ConfigError("training.lr must be positive");
  if (!(training.weight_decay >= 0.0))
    throw ConfigError("training.weight_decay must be non-negative");
  if (!(training.lr_decay > 0.0) || training.lr_decay_interval < 1)
    throw ConfigError("training.lr_decay must be positive and its interval "
                      ">= 1");
  if (training.maml && model.kind == ModelKind::stl)
    throw ConfigError("training.maml cannot be combined with model.kind stl");
  if (training.inner_lr && !(*training.inner_lr > 0.0))
    throw ConfigError("training.inner_lr must be positive");
  if (training.diversity_split != "test" &&
      training.diversity_split != "validation")
    throw ConfigError("training.diversity_split must be 'test' or "
                      "'validation'");
}

void to_json(json &j, const ExperimentConfig &c) {
  j = json{
      {"dataset",
       {{"generator", c.dataset.generator},
        {"params", c.dataset.params},
        {"path", c.dataset.path},
        {"schema", c.dataset.schema}}},
      {"model",
       {{"kind", to_string(c.model.kind)},
        {"experts", c.model.experts},
        {"expert", to_string(c.model.expert)},
        {"hidden_dim", c.model.hidden_dim},
        {"expert_activation", to_string(c.model.expert_activation)},
        {"tower_hidden", c.model.tower_hidden},
        {"tower_activation", to_string(c.model.tower_activation)},
        {"alpha", c.model.alpha},
        {"mask_mode", to_string(c.model.mask_mode)},
        {"window", c.model.window}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"optimizer", c.training.optimizer},
        {"lr", c.training.lr},
        {"weight_decay", c.training.weight_decay},
        {"lr_decay", c.training.lr_decay},
        {"lr_decay_interval", c.training.lr_decay_interval},
        {"maml", c.training.maml},
        {"inner_lr", c.training.inner_lr ? json(*c.training.inner_lr) : json()},
        {"allow_many_tasks", c.training.allow_many_tasks},
        {"seed", c.training.seed},
        {"diversity_split", c.training.diversity_split},
        {"eval_chunk", c.training.eval_chunk}}},
      {"output_dir", c.output_dir}};
}

void from_json(const json &j, ExperimentConfig &c) {
  c = ExperimentConfig{};
  check_keys(j, {"dataset", "model", "training", "output_dir"}, "config");
  if (auto it = j.find("dataset"); it != j.end()) {
    const json &d = *it;
    check_keys(d, {"generator", "params", "path", "schema"}, "dataset");
    read(d, "generator", c.dataset.generator, "dataset");
    if (d.contains("params") && !d["params"].is_null())
      c.dataset.params = d["params"];
    read(d, "path", c.dataset.path, "dataset");
    if (d.contains("schema"))
      c.dataset.schema = d["schema"];
  }
  if (auto it = j.find("model"); it != j.end()) {
    const json &m = *it;
    check_keys(m, {"kind", "experts", "expert", "hidden_dim",
                   "expert_activation", "tower_hidden", "tower_activation",
                   "alpha", "mask_mode", "window"},
               "model");
    std::string s;
    if (read(m, "kind", s, "model"), !s.empty())
      c.model.kind = parse_model_kind(s);
    read(m, "experts", c.model.experts, "model");
    s.clear();
    if (read(m, "expert", s, "model"), !s.empty())
      c.model.expert = parse_expert_kind(s);
    read(m, "hidden_dim", c.model.hidden_dim, "model");
    s.clear();
    if (read(m, "expert_activation", s, "model"), !s.empty())
      c.model.expert_activation = parse_activation(s);
    read(m, "tower_hidden", c.model.tower_hidden, "model");
    s.clear();
    if (read(m, "tower_activation", s, "model"), !s.empty())
      c.model.tower_activation = parse_activation(s);
    read(m, "alpha", c.model.alpha, "model");
    s.clear();
    if (read(m, "mask_mode", s, "model"), !s.empty())
      c.model.mask_mode = parse_mask_mode(s);
    read(m, "window", c.model.window, "model");
  }
  if (auto it = j.find("training"); it != j.end()) {
    const json &t = *it;
    const std::string b = "training";
    check_keys(t, {"epochs", "batch_size", "optimizer", "lr", "weight_decay",
                   "lr_decay", "lr_decay_interval", "maml", "inner_lr",
                   "allow_many_tasks", "seed", "diversity_split", "eval_chunk"},
               b);
    read(t, "epochs", c.training.epochs, b);
    read(t, "batch_size", c.training.batch_size, b);
    read(t, "optimizer", c.training.optimizer, b);
    read(t, "lr", c.training.lr, b);
    read(t, "weight_decay", c.training.weight_decay, b);
    read(t, "lr_decay", c.training.lr_decay, b);
    read(t, "lr_decay_interval", c.training.lr_decay_interval, b);
    read(t, "maml", c.training.maml, b);
    if (t.contains("inner_lr") && !t["inner_lr"].is_null()) {
      double v = 0.0;
      read(t, "inner_lr", v, b);
      c.training.inner_lr = v;
    }
    read(t, "allow_many_tasks", c.training.allow_many_tasks, b);
    read(t, "seed", c.training.seed, b);
    read(t, "diversity_split", c.training.diversity_split, b);
    read(t, "eval_chunk", c.training.eval_chunk, b);
  }
  read(j, "output_dir", c.output_dir, "config");
  c.validate();
}

void apply_override(json &config, const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded())
    value = text;
  json *node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty())
      throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object())
      *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::filesystem::path &path,
                             const std::vector<std::string> &overrides,
                             std::optional<std::uint64_t> seed) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in)
      throw ConfigError("cannot open config " + path.string());
    try {
      in >> j;
    } catch (const json::exception &e) {
      throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
  }
  for (const std::string &o : overrides)
    apply_override(j, o);
  if (seed)
    j["training"]["seed"] = *seed;
  return j.get<ExperimentConfig>();
}

DatasetBundle build_dataset(const DatasetConfig &config) {
  if (config.generator == "tabular")
    return gen_tabular_suite(tabular_options(config.params));
  if (config.generator == "temporal")
    return gen_temporal_suite(temporal_options(config.params));
  if (config.generator == "manytask")
    return gen_manytask_suite(manytask_options(config.params));
  if (config.generator == "file") {
    DelimitedSchema schema = config.schema.is_null()
                                 ? load_sidecar(config.path)
                                 : config.schema.get<DelimitedSchema>();
    return load_delimited(config.path, schema);
  }
  throw ConfigError("unknown dataset generator '" + config.generator + "'");
}

ModelSpec make_model_spec(const ExperimentConfig &config,
                          const DatasetBundle &data, std::size_t stl_task) {
  ModelSpec spec;
  spec.kind = config.model.kind;
  if (spec.kind == ModelKind::stl)
    spec.tasks = {data.tasks.at(stl_task)};
  else
    spec.tasks = data.tasks;
  spec.expert.kind = config.model.expert;
  spec.expert.input_dim = data.features;
  spec.expert.hidden_dim = config.model.hidden_dim;
  spec.expert.activation = config.model.expert_activation;
  spec.experts = config.model.experts;
  spec.tower_hidden = config.model.tower_hidden;
  spec.tower_activation = config.model.tower_activation;
  spec.window = config.model.window ? config.model.window
                                    : dataset_window(config.dataset);
  spec.temporal = data.temporal;
  spec.mask_mode = config.model.mask_mode;
  spec.alpha = config.model.alpha;
  spec.seed = config.training.seed + (spec.kind == ModelKind::stl ? stl_task : 0);
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Training

namespace {

/// One trainable model and the dataset tasks it serves.
struct Learner {
  std::unique_ptr<MultiTaskModel> model;
  std::unique_ptr<Optimizer> optimizer;
  std::vector<std::size_t> tasks;
  std::vector<Tensor> best;
  double best_sum = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

struct SplitOutputs {
  std::vector<std::vector<double>> logits;
  std::vector<TaskLabels> labels;
  std::vector<double> loss;
};

void append_logits(const Sequence &seq, std::vector<double> &out) {
  for (Var v : seq) {
    const auto vals = v.values();
    out.insert(out.end(), vals.begin(), vals.end());
  }
}

TaskLossFn learner_loss(const Learner &l, const Batch &batch) {
  return [&l, &batch](Tape &tape, std::span<const Var> params) {
    const Sequence x = l.model->bind_inputs(tape, batch);
    const auto logits = l.model->forward(params, x);
    std::vector<Var> losses;
    for (std::size_t i = 0; i < logits.size(); ++i)
      losses.push_back(task_loss(l.model->spec().tasks[i], logits[i],
                                 batch.labels[l.tasks[i]]));
    return losses;
  };
}

SplitOutputs evaluate(const Learner &l, const DatasetBundle &data,
                      const std::vector<std::size_t> &rows, std::size_t chunk) {
  SplitOutputs out;
  const std::size_t K = l.tasks.size();
  out.logits.resize(K);
  out.labels.resize(K);
  out.loss.assign(K, 0.0);
  if (rows.empty())
    return out;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t n = std::min(chunk, rows.size() - start);
    const Batch batch =
        make_batch(data, std::span(rows).subspan(start, n));
    Tape tape;
    const auto params = l.model->parameters().bind_constant(tape);
    const Sequence x = l.model->bind_inputs(tape, batch);
    const auto logits = l.model->forward(params, x);
    for (std::size_t i = 0; i < K; ++i) {
      const TaskLabels &lab = batch.labels[l.tasks[i]];
      const Var loss = task_loss(l.model->spec().tasks[i], logits[i], lab);
      out.loss[i] += loss.item() * static_cast<double>(n);
      append_logits(logits[i], out.logits[i]);
      out.labels[i].values.insert(out.labels[i].values.end(),
                                  lab.values.begin(), lab.values.end());
      out.labels[i].observed.insert(out.labels[i].observed.end(),
                                    lab.observed.begin(), lab.observed.end());
    }
  }
  for (double &v : out.loss)
    v /= static_cast<double>(rows.size());
  return out;
}

std::vector<Tensor> snapshot(const ParameterSet &p) {
  std::vector<Tensor> copy;
  for (const Tensor &t : p.tensors())
    copy.emplace_back(t.shape, t.values);
  return copy;
}

void restore(ParameterSet &p, const std::vector<Tensor> &from) {
  for (std::size_t i = 0; i < from.size(); ++i)
    p.tensors()[i].values = from[i].values;
}

std::unique_ptr<Optimizer> make_optimizer(const TrainingConfig &t) {
  if (t.optimizer == "sgd")
    return std::make_unique<GradientDescent>(t.lr, t.weight_decay);
  return std::make_unique<Adam>(t.lr, t.weight_decay);
}

/// Expert outputs flattened per expert, samples in row order; each sample
/// contributes its steps in order, hidden units innermost.
std::vector<std::vector<double>>
collect_expert_outputs(const MultiTaskModel &model, const DatasetBundle &data,
                       const std::vector<std::size_t> &rows, std::size_t chunk,
                       std::vector<std::vector<std::vector<double>>> *per_sample) {
  const std::size_t E = model.spec().expert_count();
  std::vector<std::vector<double>> outputs(E);
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t n = std::min(chunk, rows.size() - start);
    const Batch batch = make_batch(data, std::span(rows).subspan(start, n));
    Tape tape;
    const auto params = model.parameters().bind_constant(tape);
    const Sequence x = model.bind_inputs(tape, batch);
    const auto outs = model.expert_outputs(params, x);
    const std::size_t h = model.spec().expert.hidden_dim;
    for (std::size_t b = 0; b < n; ++b) {
      if (per_sample)
        per_sample->emplace_back(E);
      for (std::size_t e = 0; e < E; ++e) {
        for (Var step : outs[e]) {
          const auto v = step.values().subspan(b * h, h);
          outputs[e].insert(outputs[e].end(), v.begin(), v.end());
          if (per_sample)
            per_sample->back()[e].insert(per_sample->back()[e].end(), v.begin(),
                                         v.end());
        }
      }
    }
  }
  return outputs;
}

void write_text(const std::filesystem::path &path, const std::string &text) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << text;
  if (!out)
    throw IoError("failed writing " + path.string());
}

std::string history_csv(const RunRecord &r) {
  std::string s = "epoch,task,lr,train_loss,val_loss,val_metric\n";
  for (const EpochRecord &e : r.history)
    for (std::size_t k = 0; k < r.tasks.size(); ++k)
      s += std::to_string(e.epoch) + "," + r.tasks[k] + "," + fmt17(e.lr) +
           "," + fmt17(e.train_loss[k]) + "," + fmt17(e.val_loss[k]) + "," +
           fmt17(e.val_metric[k]) + "\n";
  return s;
}

std::string metrics_csv(const RunRecord &r) {
  std::string s = "task,metric,value,samples,best_epoch,status\n";
  for (std::size_t k = 0; k < r.test.size(); ++k) {
    const TaskResult &t = r.test[k];
    s += t.task + "," + std::string(to_string(t.metric)) + "," +
         fmt17(t.value) + "," + std::to_string(t.samples) + "," +
         std::to_string(r.best_epoch[k]) + "," +
         (t.defined() ? "ok" : "undefined") + "\n";
  }
  return s;
}

} // namespace

RunRecord run_experiment(const ExperimentConfig &config,
                         const RunOptions &options) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  RunRecord record;
  record.config = config;

  const DatasetBundle data = build_dataset(config.dataset);
  for (const TaskSpec &t : data.tasks)
    record.tasks.push_back(t.name);
  const std::size_t K = data.tasks.size();

  std::vector<Learner> learners;
  if (config.model.kind == ModelKind::stl) {
    for (std::size_t k = 0; k < K; ++k) {
      Learner l;
      l.model = std::make_unique<MultiTaskModel>(make_model_spec(config, data, k));
      l.tasks = {k};
      learners.push_back(std::move(l));
    }
  } else {
    Learner l;
    l.model = std::make_unique<MultiTaskModel>(make_model_spec(config, data));
    l.tasks.resize(K);
    std::iota(l.tasks.begin(), l.tasks.end(), std::size_t{0});
    learners.push_back(std::move(l));
  }
  for (Learner &l : learners) {
    l.optimizer = make_optimizer(config.training);
    l.best = snapshot(l.model->parameters());
  }
  if (config.model.kind != ModelKind::stl &&
      learners[0].model->spec().gated())
    record.mask = learners[0].model->mask();

  const TrainingConfig &tc = config.training;
  const StepDecaySchedule schedule{tc.lr, tc.lr_decay, tc.lr_decay_interval};
  MamlConfig maml;
  maml.enabled = tc.maml;
  maml.allow_many_tasks = tc.allow_many_tasks;
  if (maml.enabled)
    maml.validate(K);

  std::vector<std::string> names = record.tasks;
  std::vector<std::size_t> order = data.splits.train;
  if (order.empty())
    throw DataError("training split is empty");

  try {
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
      EpochRecord er;
      er.epoch = epoch;
      er.lr = schedule.lr(epoch);
      er.train_loss.assign(K, 0.0);
      er.val_loss.assign(K, std::numeric_limits<double>::quiet_NaN());
      er.val_metric.assign(K, std::numeric_limits<double>::quiet_NaN());
      for (Learner &l : learners)
        l.optimizer->set_learning_rate(er.lr);
      maml.inner_lr = tc.inner_lr.value_or(er.lr);

      std::seed_seq seq{static_cast<std::uint32_t>(tc.seed),
                        static_cast<std::uint32_t>(tc.seed >> 32), 0x73687566u,
                        static_cast<std::uint32_t>(epoch)};
      std::mt19937_64 rng(seq);
      std::vector<std::size_t> shuffled = order;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);

      std::size_t batches = 0;
      for (std::size_t start = 0; start < shuffled.size();
           start += tc.batch_size, ++batches) {
        const std::size_t n = std::min(tc.batch_size, shuffled.size() - start);
        const Batch batch =
            make_batch(data, std::span(shuffled).subspan(start, n));
        for (Learner &l : learners) {
          StepContext ctx{epoch, batches, {}};
          for (std::size_t t : l.tasks)
            ctx.task_names.push_back(names[t]);
          const TaskLossFn loss = learner_loss(l, batch);
          const std::vector<double> losses =
              maml.enabled
                  ? maml_mtl_step(l.model->parameters(), loss, *l.optimizer,
                                  maml, ctx)
                  : joint_step(l.model->parameters(), loss, *l.optimizer, ctx);
          for (std::size_t i = 0; i < l.tasks.size(); ++i)
            er.train_loss[l.tasks[i]] += losses[i];
        }
      }
      for (double &v : er.train_loss)
        v /= static_cast<double>(batches);

      for (Learner &l : learners) {
        const SplitOutputs val =
            evaluate(l, data, data.splits.validation, tc.eval_chunk);
        double sum = 0.0;
        for (std::size_t i = 0; i < l.tasks.size(); ++i) {
          const std::size_t k = l.tasks[i];
          er.val_loss[k] = val.loss[i];
          if (!data.splits.validation.empty()) {
            er.val_metric[k] =
                score_task(data.tasks[k], val.logits[i], val.labels[i]).value;
            if (!std::isnan(er.val_metric[k]))
              sum += er.val_metric[k];
          }
        }
        if (sum > l.best_sum) {
          l.best_sum = sum;
          l.best_epoch = epoch;
          l.best = snapshot(l.model->parameters());
        }
      }
      record.history.push_back(er);
      if (options.on_epoch)
        options.on_epoch(er);
    }
  } catch (const NumericalError &e) {
    record.error = e.what();
    record.complete = false;
    record.wall_seconds = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - started)
                              .count();
    if (options.write_outputs && !config.output_dir.empty()) {
      std::filesystem::create_directories(config.output_dir);
      const std::filesystem::path dir = config.output_dir;
      write_text(dir / "config.json", record.config.dump(2) + "\n");
      write_text(dir / "history.csv", history_csv(record));
      write_text(dir / "error.txt", record.error + "\n");
    }
    return record;
  }

  record.best_epoch.assign(K, 0);
  record.test.resize(K);
  for (Learner &l : learners) {
    restore(l.model->parameters(), l.best);
    const SplitOutputs test = evaluate(l, data, data.splits.test, tc.eval_chunk);
    for (std::size_t i = 0; i < l.tasks.size(); ++i) {
      const std::size_t k = l.tasks[i];
      record.best_epoch[k] = l.best_epoch;
      if (data.splits.test.empty()) {
        record.test[k] = TaskResult{names[k], data.tasks[k].metric,
                                    std::numeric_limits<double>::quiet_NaN(), 0};
      } else {
        record.test[k] = score_task(data.tasks[k], test.logits[i], test.labels[i]);
      }
    }
  }

  std::vector<std::vector<std::vector<double>>> per_sample;
  const MultiTaskModel &first = *learners[0].model;
  if (first.spec().gated()) {
    if (first.spec().expert_count() < 2) {
      warn("diversity needs at least two experts; skipped");
    } else {
      const auto &rows = tc.diversity_split == "test" ? data.splits.test
                                                      : data.splits.validation;
      if (rows.empty()) {
        warn("diversity split is empty; skipped");
      } else {
        const auto outputs = collect_expert_outputs(
            first, data, rows, tc.eval_chunk,
            options.dump_activations ? &per_sample : nullptr);
        record.diversity = diversity_report(outputs, rows.size());
      }
    }
  }
  record.complete = true;
  record.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - started)
                            .count();

  if (options.write_outputs) {
    if (config.output_dir.empty())
      throw ConfigError("output_dir is required to write run outputs");
    const std::filesystem::path dir = config.output_dir;
    std::filesystem::create_directories(dir);
    write_text(dir / "config.json", record.config.dump(2) + "\n");
    write_text(dir / "metrics.csv", metrics_csv(record));
    write_text(dir / "history.csv", history_csv(record));
    if (record.mask)
      write_text(dir / "mask.json", json(*record.mask).dump(2) + "\n");
    if (record.diversity)
      export_heatmap(*record.diversity, dir / "diversity.csv",
                     dir / "diversity_heatmap.txt");
    std::vector<std::string> pnames;
    std::vector<Tensor> ptensors;
    for (const Learner &l : learners) {
      const std::string prefix =
          config.model.kind == ModelKind::stl ? names[l.tasks[0]] + "/" : "";
      const ParameterSet &p = l.model->parameters();
      for (std::size_t i = 0; i < p.size(); ++i) {
        pnames.push_back(prefix + p.names()[i]);
        ptensors.push_back(p.tensors()[i]);
      }
    }
    save_parameters(pnames, ptensors, dir / "params.txt");
    if (options.dump_activations && !per_sample.empty())
      save_activation_dump(per_sample, dir / "activations.csv");
  }
  return record;
}

namespace {

std::vector<std::string> split_line(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep))
    out.push_back(cell);
  return out;
}

double parse_number(const std::string &cell, const std::string &where) {
  double v = 0.0;
  const char *first = cell.data(), *last = first + cell.size();
  const auto res = std::from_chars(first, last, v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != last)
    throw DataError(where + ": non-numeric value '" + cell + "'");
  return v;
}

} // namespace

RunRecord load_run(const std::filesystem::path &dir) {
  RunRecord r;
  {
    std::ifstream in(dir / "config.json");
    if (!in)
      throw IoError("cannot open " + (dir / "config.json").string());
    try {
      in >> r.config;
    } catch (const json::exception &e) {
      throw DataError("malformed " + (dir / "config.json").string() + ": " +
                      e.what());
    }
  }
  std::ifstream in(dir / "metrics.csv");
  if (!in)
    throw IoError("cannot open " + (dir / "metrics.csv").string() +
                  " (incomplete run?)");
  std::string line;
  std::getline(in, line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    const std::string where =
        (dir / "metrics.csv").string() + ": line " + std::to_string(line_no);
    const auto cells = split_line(line, ',');
    if (cells.size() != 6)
      throw DataError(where + ": expected 6 fields");
    TaskResult t;
    t.task = cells[0];
    t.metric = parse_metric_kind(cells[1]);
    t.value = parse_number(cells[2], where);
    t.samples = static_cast<std::size_t>(parse_number(cells[3], where));
    r.tasks.push_back(t.task);
    r.best_epoch.push_back(static_cast<std::size_t>(parse_number(cells[4], where)));
    r.test.push_back(t);
  }
  r.complete = true;
  return r;
}

std::string run_label(const RunRecord &record) {
  const json &m = record.config.at("model");
  std::string label = m.value("kind", std::string("?"));
  if (record.config.contains("training") &&
      record.config["training"].value("maml", false))
    label += "+maml";
  return label;
}

ComparisonReport compare_runs(const RunRecord &stl,
                              const std::vector<RunRecord> &mtl) {
  ComparisonReport report;
  report.tasks = stl.tasks;
  for (const TaskResult &t : stl.test)
    report.stl.push_back(t.value);
  for (const RunRecord &r : mtl)
    report.rows.push_back(compare_results(run_label(r), stl.test, r.test));
  return report;
}

void save_parameters(const std::vector<std::string> &names,
                     const std::vector<Tensor> &tensors,
                     const std::filesystem::path &path) {
  if (names.size() != tensors.size())
    throw ContractError("parameter names and tensors differ in count");
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    out << names[i] << '\t';
    for (std::size_t d = 0; d < tensors[i].shape.size(); ++d)
      out << (d ? "x" : "") << tensors[i].shape[d];
    out << '\t';
    for (std::size_t j = 0; j < tensors[i].values.size(); ++j)
      out << (j ? " " : "") << fmt17(tensors[i].values[j]);
    out << '\n';
  }
  if (!out)
    throw IoError("failed writing " + path.string());
}

void load_parameters(const std::filesystem::path &path,
                     std::vector<std::string> &names,
                     std::vector<Tensor> &tensors) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  names.clear();
  tensors.clear();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    const auto fields = split_line(line, '\t');
    if (fields.size() != 3)
      throw DataError(where + ": expected name, shape and values");
    ad::Shape shape;
    for (const std::string &d : split_line(fields[1], 'x'))
      shape.push_back(static_cast<std::size_t>(parse_number(d, where)));
    std::vector<double> values;
    for (const std::string &v : split_line(fields[2], ' '))
      values.push_back(parse_number(v, where));
    if (values.size() != ad::shape_size(shape))
      throw DataError(where + ": " + std::to_string(values.size()) +
                      " values for shape " + ad::to_string(shape));
    names.push_back(fields[0]);
    tensors.emplace_back(std::move(shape), std::move(values));
  }
}

} // namespace mmoeex
