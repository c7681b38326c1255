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
#include <mmoeex/data.hpp>
#include <mmoeex/errors.hpp>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace mmoeex {

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal(), p);
}

double normal_cdf(double x) {
  return boost::math::cdf(boost::math::normal(), x);
}

std::vector<double> random_unit(std::size_t n, std::mt19937_64 &rng) {
  std::normal_distribution<double> gauss;
  std::vector<double> v(n);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double &x : v) {
      x = gauss(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double &x : v)
    x /= norm;
  return v;
}

LabelArray empty_labels(const TaskSpec &task, std::size_t samples,
                        std::size_t steps) {
  LabelArray l;
  l.shape = label_shape(task, samples, steps);
  l.values.assign(ad::shape_size(l.shape), 0.0);
  l.observed.assign(l.values.size(), 1);
  return l;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

ad::Shape label_shape(const TaskSpec &task, std::size_t samples,
                      std::size_t steps) {
  if (task.kind == OutputKind::multilabel)
    return {samples, task.classes};
  if (task.temporal == Temporal::per_step)
    return {samples, steps};
  return {samples};
}

void DatasetBundle::validate() const {
  if (samples == 0 || features == 0 || steps == 0)
    throw DataError("dataset has an empty dimension");
  if (!temporal && steps != 1)
    throw DataError("tabular dataset must have exactly one step");
  if (x.size() != samples * steps * features)
    throw DataError("feature array holds " + std::to_string(x.size()) +
                    " values, expected " +
                    std::to_string(samples * steps * features));
  if (labels.size() != tasks.size())
    throw DataError("dataset has " + std::to_string(labels.size()) +
                    " label arrays for " + std::to_string(tasks.size()) +
                    " tasks");
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const TaskSpec &task = tasks[k];
    const LabelArray &l = labels[k];
    if (l.shape != label_shape(task, samples, steps) ||
        l.values.size() != ad::shape_size(l.shape) ||
        l.observed.size() != l.values.size())
      throw DataError("labels of task '" + task.name + "' have shape " +
                      ad::to_string(l.shape));
    for (std::size_t i = 0; i < l.values.size(); ++i) {
      if (!l.observed[i])
        continue;
      const double v = l.values[i];
      const bool ok =
          task.kind == OutputKind::multiclass
              ? (v >= 0.0 && v < static_cast<double>(task.classes) &&
                 v == std::floor(v))
              : (v == 0.0 || v == 1.0);
      if (!ok)
        throw DataError("task '" + task.name + "' has invalid label " +
                        format_double(v));
    }
  }
  std::vector<unsigned char> seen(samples, 0);
  for (const auto *part : {&splits.train, &splits.validation, &splits.test}) {
    for (std::size_t i : *part) {
      if (i >= samples || seen[i])
        throw DataError("splits are not a partition of the samples");
      seen[i] = 1;
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw DataError("splits do not cover every sample");
}

Splits make_splits(std::size_t samples, double train_frac, double val_frac,
                   std::uint64_t seed) {
  if (train_frac < 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0)
    throw ConfigError("split fractions must be non-negative and sum to <= 1");
  const auto n = static_cast<double>(samples);
  const auto train = static_cast<std::size_t>(std::llround(n * train_frac));
  const auto val = static_cast<std::size_t>(std::llround(n * val_frac));
  if (train + val > samples)
    throw ConfigError("split sizes exceed the sample count");
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = seeded(seed, 0x73706c74u);
  std::shuffle(order.begin(), order.end(), rng);
  Splits s;
  s.train.assign(order.begin(), order.begin() + train);
  s.validation.assign(order.begin() + train, order.begin() + train + val);
  s.test.assign(order.begin() + train + val, order.end());
  for (auto *part : {&s.train, &s.validation, &s.test})
    std::sort(part->begin(), part->end());
  return s;
}

Batch make_batch(const DatasetBundle &data, std::span<const std::size_t> rows) {
  Batch batch;
  batch.size = rows.size();
  batch.steps = data.steps;
  const std::size_t d = data.features, T = data.steps, B = rows.size();
  batch.inputs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    ad::Tensor step({B, d});
    for (std::size_t b = 0; b < B; ++b) {
      if (rows[b] >= data.samples)
        throw DataError("batch row " + std::to_string(rows[b]) +
                        " out of range");
      const double *src = data.x.data() + (rows[b] * T + t) * d;
      std::copy_n(src, d, step.values.begin() + b * d);
    }
    batch.inputs.push_back(std::move(step));
  }
  batch.labels.resize(data.tasks.size());
  for (std::size_t k = 0; k < data.tasks.size(); ++k) {
    const TaskSpec &task = data.tasks[k];
    const LabelArray &src = data.labels[k];
    TaskLabels &dst = batch.labels[k];
    if (task.kind == OutputKind::multilabel) {
      const std::size_t L = task.classes;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
          dst.values.push_back(src.values[rows[b] * L + l]);
          dst.observed.push_back(src.observed[rows[b] * L + l]);
        }
    } else if (task.temporal == Temporal::per_step) {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t b = 0; b < B; ++b) {
          dst.values.push_back(src.values[rows[b] * T + t]);
          dst.observed.push_back(src.observed[rows[b] * T + t]);
        }
    } else {
      for (std::size_t b = 0; b < B; ++b) {
        dst.values.push_back(src.values[rows[b]]);
        dst.observed.push_back(src.observed[rows[b]]);
      }
    }
  }
  return batch;
}

DatasetBundle gen_tabular_suite(const TabularSuiteOptions &o) {
  if (o.features < 2)
    throw ConfigError("tabular suite needs at least 2 features");
  if (o.samples < 100)
    throw ConfigError("tabular suite needs at least 100 samples");
  if (o.tasks < 1)
    throw ConfigError("tabular suite needs at least one task");
  if (!(o.correlation >= 0.0 && o.correlation <= 1.0))
    throw ConfigError("correlation must lie in [0, 1]");
  if (o.noise < 0.0 || o.loading_jitter < 0.0)
    throw ConfigError("noise and loading jitter must be non-negative");
  std::vector<double> rates = o.positive_rates;
  if (rates.empty())
    rates.assign(o.tasks, 0.5);
  if (rates.size() != o.tasks)
    throw ConfigError("need one positive rate per task");
  for (double r : rates)
    if (!(r > 0.0 && r < 1.0))
      throw ConfigError("positive rates must lie in (0, 1)");

  const std::size_t d = o.features, K = o.tasks, N = o.samples;
  // Latent coordinates double as features: a shared block followed by a
  // private block whose coordinates are dealt to tasks round-robin.
  const std::size_t shared_dims = (d + 1) / 2;
  const std::size_t private_dims = d - shared_dims;
  std::vector<std::vector<std::size_t>> private_of(K);
  if (private_dims >= K) {
    for (std::size_t j = 0; j < private_dims; ++j)
      private_of[j % K].push_back(shared_dims + j);
  } else {
    for (std::size_t k = 0; k < K; ++k)
      private_of[k].push_back(shared_dims + k % private_dims);
  }

  auto rng = seeded(o.seed, 0x74616275u);
  std::normal_distribution<double> gauss;
  const std::vector<double> common = random_unit(shared_dims, rng);
  std::vector<std::vector<double>> shared_w(K), private_w(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> w = common;
    const std::vector<double> delta = random_unit(shared_dims, rng);
    double norm = 0.0;
    for (std::size_t j = 0; j < shared_dims; ++j) {
      w[j] += o.loading_jitter * delta[j];
      norm += w[j] * w[j];
    }
    norm = std::sqrt(norm);
    for (double &v : w)
      v /= norm;
    shared_w[k] = std::move(w);
    private_w[k] = random_unit(private_of[k].size(), rng);
  }

  const double rho = o.correlation;
  const double mix_sd = std::sqrt(rho * rho + (1.0 - rho) * (1.0 - rho));
  const double total_sd = std::sqrt(1.0 + o.noise * o.noise);

  DatasetBundle data;
  data.samples = N;
  data.features = d;
  for (std::size_t k = 0; k < K; ++k)
    data.tasks.push_back(
        TaskSpec::binary("task" + std::to_string(k), o.pos_weight));
  data.x.resize(N * d);
  for (const TaskSpec &t : data.tasks)
    data.labels.push_back(empty_labels(t, N, 1));

  for (std::size_t n = 0; n < N; ++n) {
    double *x = data.x.data() + n * d;
    for (std::size_t j = 0; j < d; ++j)
      x[j] = gauss(rng);
    for (std::size_t k = 0; k < K; ++k) {
      double shared = 0.0, own = 0.0;
      for (std::size_t j = 0; j < shared_dims; ++j)
        shared += shared_w[k][j] * x[j];
      for (std::size_t j = 0; j < private_of[k].size(); ++j)
        own += private_w[k][j] * x[private_of[k][j]];
      const double score = (rho * shared + (1.0 - rho) * own) / mix_sd;
      data.latent["score/" + data.tasks[k].name].push_back(score);
      const double noisy = score + o.noise * gauss(rng);
      const double threshold = normal_quantile(1.0 - rates[k]) * total_sd;
      data.labels[k].values[n] = noisy > threshold ? 1.0 : 0.0;
    }
  }
  data.splits = make_splits(N, 0.66, 0.17, o.seed);
  data.validate();
  return data;
}

DatasetBundle gen_temporal_suite(const TemporalSuiteOptions &o) {
  if (o.samples < 10)
    throw ConfigError("temporal suite needs at least 10 samples");
  if (o.features < 1)
    throw ConfigError("temporal suite needs at least one feature");
  if (o.window < 1 || o.steps < o.window)
    throw ConfigError("temporal suite needs steps >= window >= 1");
  if (o.los_classes < 2 || o.phenotypes < 1)
    throw ConfigError("temporal suite needs >= 2 LOS classes and >= 1 "
                      "phenotype");
  if (o.noise < 0.0 || o.feature_noise < 0.0)
    throw ConfigError("noise levels must be non-negative");

  constexpr std::size_t kStatic = 3;   // static patient factors
  constexpr double kDrift = 0.3;       // per-step drift per unit severity
  constexpr double kStepSd = 0.5;      // random-walk innovation
  constexpr double kDecompThreshold = 1.3;
  constexpr double kMortalityThreshold = 0.9;
  constexpr double kPhenotypeThreshold = 0.8;

  const std::size_t N = o.samples, T = o.steps, d = o.features;
  const std::size_t C = o.los_classes, L = o.phenotypes;
  auto rng = seeded(o.seed, 0x74656d70u);
  std::normal_distribution<double> gauss;

  // Observation loadings: features see the walk increment and the static
  // factors, never the accumulated state itself.
  const std::size_t observed_dims = 1 + kStatic;
  std::vector<double> loading(d * observed_dims);
  for (double &a : loading)
    a = gauss(rng) / std::sqrt(static_cast<double>(observed_dims));
  std::vector<std::vector<double>> pheno_w(L);
  for (auto &w : pheno_w)
    w = random_unit(kStatic + 1, rng);

  DatasetBundle data;
  data.samples = N;
  data.steps = T;
  data.features = d;
  data.temporal = true;
  data.tasks = {
      TaskSpec::binary("decomp", o.decomp_pos_weight, Temporal::per_step),
      TaskSpec::multiclass("los", C, Temporal::per_step),
      TaskSpec::binary("mortality", o.mortality_pos_weight,
                       Temporal::first_window),
      TaskSpec::multilabel("phenotype", L, o.phenotype_pos_weight)};
  data.tasks[3].temporal = Temporal::per_sequence;
  for (const TaskSpec &t : data.tasks)
    data.labels.push_back(empty_labels(t, N, T));
  data.x.resize(N * T * d);
  auto &state_out = data.latent["state"];
  state_out.resize(N * T);

  std::vector<double> statics(kStatic), normalized(T);
  for (std::size_t n = 0; n < N; ++n) {
    const double severity = gauss(rng);
    for (double &q : statics)
      q = gauss(rng);
    double walk = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double increment = kDrift * severity + kStepSd * gauss(rng);
      walk += increment;
      const auto steps_so_far = static_cast<double>(t + 1);
      const double sd = std::sqrt(steps_so_far * steps_so_far * kDrift * kDrift +
                                  steps_so_far * kStepSd * kStepSd);
      normalized[t] = walk / sd;
      state_out[n * T + t] = normalized[t];

      double *x = data.x.data() + (n * T + t) * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double *a = loading.data() + j * observed_dims;
        double v = a[0] * increment / kStepSd;
        for (std::size_t s = 0; s < kStatic; ++s)
          v += a[1 + s] * statics[s];
        x[j] = v + o.feature_noise * gauss(rng);
      }

      const double u = normalized[t];
      data.labels[0].values[n * T + t] =
          u + o.noise * gauss(rng) > kDecompThreshold ? 1.0 : 0.0;
      // Acuity-bucket analog of remaining stay: quantile bucket of a
      // unit-variance mix of the state and the first static factor.
      const double acuity =
          (0.6 * u + 0.8 * statics[0] + o.noise * gauss(rng)) /
          std::sqrt(1.0 + o.noise * o.noise);
      const auto bucket = static_cast<std::size_t>(
          std::floor(static_cast<double>(C) * normal_cdf(acuity)));
      data.labels[1].values[n * T + t] =
          static_cast<double>(std::min(bucket, C - 1));
    }
    const double mortality = 0.5 * normalized[o.window - 1] + 0.5 * severity +
                             o.noise * gauss(rng);
    data.labels[2].values[n] = mortality > kMortalityThreshold ? 1.0 : 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      double score = pheno_w[l][kStatic] * severity;
      for (std::size_t s = 0; s < kStatic; ++s)
        score += pheno_w[l][s] * statics[s];
      data.labels[3].values[n * L + l] =
          score + o.noise * gauss(rng) > kPhenotypeThreshold ? 1.0 : 0.0;
    }
  }
  data.splits = make_splits(N, 0.70, 0.15, o.seed);
  data.validate();
  return data;
}

DatasetBundle gen_manytask_suite(const ManyTaskSuiteOptions &o) {
  if (o.tasks < 2)
    throw ConfigError("many-task suite needs at least 2 tasks");
  if (o.samples < 100 || o.features < 1)
    throw ConfigError("many-task suite needs >= 100 samples and >= 1 feature");
  if (!(o.min_positive_rate > 0.0 && o.min_positive_rate < o.max_positive_rate &&
        o.max_positive_rate < 1.0))
    throw ConfigError("positive-rate band must satisfy 0 < min < max < 1");
  if (!(o.missing_rate >= 0.0 && o.missing_rate < 1.0))
    throw ConfigError("missing rate must lie in [0, 1)");
  if (o.noise < 0.0)
    throw ConfigError("noise must be non-negative");

  constexpr double kShared = 0.8, kOwn = 0.6;
  const std::size_t N = o.samples, d = o.features, K = o.tasks;
  auto rng = seeded(o.seed, 0x6d616e79u);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unit;

  const std::vector<double> shared = random_unit(d, rng);
  std::vector<std::vector<double>> own(K);
  std::vector<double> mix_sd(K), threshold(K);
  // Targets stay away from the band edges so sampled rates land inside it.
  const double span = o.max_positive_rate - o.min_positive_rate;
  std::uniform_real_distribution<double> rate(o.min_positive_rate + 0.2 * span,
                                              o.max_positive_rate - 0.2 * span);
  const double total_sd = std::sqrt(1.0 + o.noise * o.noise);
  for (std::size_t k = 0; k < K; ++k) {
    own[k] = random_unit(d, rng);
    double cos = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      cos += shared[j] * own[k][j];
    mix_sd[k] = std::sqrt(kShared * kShared + kOwn * kOwn +
                          2.0 * kShared * kOwn * cos);
    threshold[k] = normal_quantile(1.0 - rate(rng)) * total_sd;
  }

  DatasetBundle data;
  data.samples = N;
  data.features = d;
  for (std::size_t k = 0; k < K; ++k)
    data.tasks.push_back(
        TaskSpec::binary("assay" + std::to_string(k), o.pos_weight));
  for (const TaskSpec &t : data.tasks)
    data.labels.push_back(empty_labels(t, N, 1));
  data.x.resize(N * d);

  for (std::size_t n = 0; n < N; ++n) {
    double *x = data.x.data() + n * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = gauss(rng);
      s += shared[j] * x[j];
    }
    for (std::size_t k = 0; k < K; ++k) {
      double u = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        u += own[k][j] * x[j];
      const double score = (kShared * s + kOwn * u) / mix_sd[k];
      data.labels[k].values[n] =
          score + o.noise * gauss(rng) > threshold[k] ? 1.0 : 0.0;
      if (o.missing_rate > 0.0 && unit(rng) < o.missing_rate) {
        data.labels[k].values[n] = 0.0;
        data.labels[k].observed[n] = 0;
      }
    }
  }
  data.splits = make_splits(N, 0.70, 0.15, o.seed);
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Delimited files

void to_json(nlohmann::json &j, const DelimitedSchema &s) {
  j = nlohmann::json{{"feature_columns", s.feature_columns},
                     {"tasks", s.tasks},
                     {"task_columns", s.task_columns},
                     {"multilabel_columns", s.multilabel_columns},
                     {"train_fraction", s.train_fraction},
                     {"validation_fraction", s.validation_fraction},
                     {"split_seed", s.split_seed}};
  if (s.split_column)
    j["split_column"] = *s.split_column;
  if (s.sequence_column)
    j["sequence_column"] = *s.sequence_column;
  if (s.step_column)
    j["step_column"] = *s.step_column;
}

void from_json(const nlohmann::json &j, DelimitedSchema &s) {
  s = DelimitedSchema{};
  s.feature_columns = j.at("feature_columns").get<std::vector<std::string>>();
  s.tasks = j.at("tasks").get<std::vector<TaskSpec>>();
  s.task_columns =
      j.value("task_columns", std::map<std::string, std::string>{});
  s.multilabel_columns = j.value(
      "multilabel_columns", std::map<std::string, std::vector<std::string>>{});
  if (j.contains("split_column"))
    s.split_column = j.at("split_column").get<std::string>();
  if (j.contains("sequence_column"))
    s.sequence_column = j.at("sequence_column").get<std::string>();
  if (j.contains("step_column"))
    s.step_column = j.at("step_column").get<std::string>();
  s.train_fraction = j.value("train_fraction", 0.66);
  s.validation_fraction = j.value("validation_fraction", 0.17);
  s.split_seed = j.value("split_seed", std::uint64_t{0});
}

namespace {

std::vector<std::string> split_fields(const std::string &line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ','))
    fields.push_back(field);
  if (!line.empty() && line.back() == ',')
    fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_double(const std::string &cell, double &out) {
  const char *first = cell.data();
  const char *last = first + cell.size();
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last && !cell.empty();
}

std::string line_prefix(std::size_t line) {
  return "line " + std::to_string(line) + ": ";
}

struct Row {
  std::size_t line;
  std::vector<std::string> fields;
};

} // namespace

DatasetBundle load_delimited(const std::filesystem::path &path,
                             const DelimitedSchema &schema) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line))
    throw DataError("line 1: missing header row in " + path.string());
  std::vector<std::string> header = split_fields(header_line);
  for (std::string &h : header)
    h = trim(h);
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i)
    column[header[i]] = i;
  auto find_column = [&](const std::string &name) {
    auto it = column.find(name);
    if (it == column.end())
      throw DataError("missing column '" + name + "' in " + path.string());
    return it->second;
  };

  std::vector<std::size_t> feature_idx;
  for (const std::string &f : schema.feature_columns)
    feature_idx.push_back(find_column(f));
  std::vector<std::vector<std::size_t>> task_idx(schema.tasks.size());
  for (std::size_t k = 0; k < schema.tasks.size(); ++k) {
    const TaskSpec &task = schema.tasks[k];
    task.validate();
    if (task.kind == OutputKind::multilabel) {
      auto it = schema.multilabel_columns.find(task.name);
      if (it == schema.multilabel_columns.end() ||
          it->second.size() != task.classes)
        throw ConfigError("schema lacks " + std::to_string(task.classes) +
                          " label columns for multilabel task '" + task.name +
                          "'");
      for (const std::string &c : it->second)
        task_idx[k].push_back(find_column(c));
    } else {
      auto it = schema.task_columns.find(task.name);
      task_idx[k].push_back(
          find_column(it == schema.task_columns.end() ? task.name : it->second));
    }
  }
  std::optional<std::size_t> split_idx, seq_idx, step_idx;
  if (schema.split_column)
    split_idx = find_column(*schema.split_column);
  if (schema.sequence_column || schema.step_column) {
    if (!schema.sequence_column || !schema.step_column)
      throw ConfigError("long-format files need both sequence and step columns");
    seq_idx = find_column(*schema.sequence_column);
    step_idx = find_column(*schema.step_column);
  }

  std::vector<Row> rows;
  std::string line;
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (trim(line).empty())
      continue;
    Row row{line_no, split_fields(line)};
    if (row.fields.size() != header.size())
      throw DataError(line_prefix(line_no) + "expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(row.fields.size()));
    for (std::string &f : row.fields)
      f = trim(f);
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw DataError("no data rows in " + path.string());

  // Group rows into samples. Tabular files have one row per sample.
  std::vector<std::vector<const Row *>> samples;
  if (seq_idx) {
    std::unordered_map<std::string, std::size_t> by_id;
    for (const Row &r : rows) {
      const std::string &id = r.fields[*seq_idx];
      auto [it, inserted] = by_id.emplace(id, samples.size());
      if (inserted)
        samples.emplace_back();
      samples[it->second].push_back(&r);
    }
  } else {
    for (const Row &r : rows)
      samples.push_back({&r});
  }
  const std::size_t N = samples.size();
  const std::size_t T = samples[0].size();
  for (auto &s : samples) {
    if (s.size() != T)
      throw DataError(line_prefix(s.front()->line) + "sequence has " +
                      std::to_string(s.size()) + " steps, expected " +
                      std::to_string(T));
    if (step_idx) {
      std::vector<const Row *> ordered(T, nullptr);
      for (const Row *r : s) {
        double step = 0.0;
        if (!parse_double(r->fields[*step_idx], step) || step < 0.0 ||
            step != std::floor(step) || step >= static_cast<double>(T) ||
            ordered[static_cast<std::size_t>(step)] != nullptr)
          throw DataError(line_prefix(r->line) + "invalid step index '" +
                          r->fields[*step_idx] + "'");
        ordered[static_cast<std::size_t>(step)] = r;
      }
      s = std::move(ordered);
    }
  }

  DatasetBundle data;
  data.tasks = schema.tasks;
  data.samples = N;
  data.steps = T;
  data.features = feature_idx.size();
  data.temporal = seq_idx.has_value();
  if (data.features == 0)
    throw ConfigError("schema declares no feature columns");
  data.x.resize(N * T * data.features);
  for (const TaskSpec &t : data.tasks)
    data.labels.push_back(empty_labels(t, N, T));

  auto read_label = [&](const Row &r, std::size_t k, std::size_t col,
                        std::size_t slot) {
    const TaskSpec &task = data.tasks[k];
    const std::string &cell = r.fields[col];
    LabelArray &dst = data.labels[k];
    if (cell.empty()) {
      dst.values[slot] = 0.0;
      dst.observed[slot] = 0;
      return;
    }
    double v = 0.0;
    const bool numeric = parse_double(cell, v);
    const bool ok = numeric && (task.kind == OutputKind::multiclass
                                    ? v >= 0.0 && v == std::floor(v) &&
                                          v < static_cast<double>(task.classes)
                                    : v == 0.0 || v == 1.0);
    if (!ok)
      throw DataError(line_prefix(r.line) + "unknown label value '" + cell +
                      "' for task '" + task.name + "'");
    dst.values[slot] = v;
    dst.observed[slot] = 1;
  };

  std::vector<int> split_tag(N, -1);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 0; t < T; ++t) {
      const Row &r = *samples[n][t];
      for (std::size_t j = 0; j < feature_idx.size(); ++j) {
        double v = 0.0;
        if (!parse_double(r.fields[feature_idx[j]], v))
          throw DataError(line_prefix(r.line) + "non-numeric value '" +
                          r.fields[feature_idx[j]] + "' in feature column '" +
                          schema.feature_columns[j] + "'");
        data.x[(n * T + t) * data.features + j] = v;
      }
      for (std::size_t k = 0; k < data.tasks.size(); ++k) {
        const TaskSpec &task = data.tasks[k];
        if (task.kind == OutputKind::multilabel) {
          if (t == 0)
            for (std::size_t l = 0; l < task.classes; ++l)
              read_label(r, k, task_idx[k][l], n * task.classes + l);
        } else if (task.temporal == Temporal::per_step) {
          read_label(r, k, task_idx[k][0], n * T + t);
        } else if (t == 0) {
          read_label(r, k, task_idx[k][0], n);
        }
      }
      if (split_idx && t == 0) {
        const std::string &tag = r.fields[*split_idx];
        if (tag == "train")
          split_tag[n] = 0;
        else if (tag == "validation" || tag == "val")
          split_tag[n] = 1;
        else if (tag == "test")
          split_tag[n] = 2;
        else
          throw DataError(line_prefix(r.line) + "unknown split '" + tag + "'");
      }
    }
  }

  if (split_idx) {
    for (std::size_t n = 0; n < N; ++n)
      (split_tag[n] == 0   ? data.splits.train
       : split_tag[n] == 1 ? data.splits.validation
                           : data.splits.test)
          .push_back(n);
  } else {
    data.splits = make_splits(N, schema.train_fraction,
                              schema.validation_fraction, schema.split_seed);
  }
  data.validate();
  return data;
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path &path) {
  return std::filesystem::path(path.string() + ".json");
}

} // namespace

DelimitedSchema save_delimited(const DatasetBundle &data,
                               const std::filesystem::path &path) {
  data.validate();
  DelimitedSchema schema;
  schema.tasks = data.tasks;
  for (std::size_t j = 0; j < data.features; ++j)
    schema.feature_columns.push_back("f" + std::to_string(j));
  for (const TaskSpec &t : data.tasks) {
    if (t.kind == OutputKind::multilabel) {
      auto &cols = schema.multilabel_columns[t.name];
      for (std::size_t l = 0; l < t.classes; ++l)
        cols.push_back(t.name + "_" + std::to_string(l));
    } else {
      schema.task_columns[t.name] = t.name;
    }
  }
  schema.split_column = "split";
  if (data.temporal) {
    schema.sequence_column = "sequence";
    schema.step_column = "step";
  }

  std::vector<const char *> tag(data.samples, "train");
  for (std::size_t i : data.splits.validation)
    tag[i] = "validation";
  for (std::size_t i : data.splits.test)
    tag[i] = "test";

  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  std::vector<std::string> header;
  if (data.temporal) {
    header.push_back("sequence");
    header.push_back("step");
  }
  header.insert(header.end(), schema.feature_columns.begin(),
                schema.feature_columns.end());
  for (const TaskSpec &t : data.tasks) {
    if (t.kind == OutputKind::multilabel)
      for (const std::string &c : schema.multilabel_columns[t.name])
        header.push_back(c);
    else
      header.push_back(t.name);
  }
  header.push_back("split");
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << header[i];
  out << '\n';

  auto label_cell = [&](std::size_t k, std::size_t slot) {
    const LabelArray &l = data.labels[k];
    return l.observed[slot] ? format_double(l.values[slot]) : std::string();
  };
  const std::size_t T = data.steps, d = data.features;
  for (std::size_t n = 0; n < data.samples; ++n) {
    for (std::size_t t = 0; t < T; ++t) {
      std::string line;
      if (data.temporal)
        line += std::to_string(n) + "," + std::to_string(t) + ",";
      for (std::size_t j = 0; j < d; ++j)
        line += format_double(data.x[(n * T + t) * d + j]) + ",";
      for (std::size_t k = 0; k < data.tasks.size(); ++k) {
        const TaskSpec &task = data.tasks[k];
        if (task.kind == OutputKind::multilabel) {
          for (std::size_t l = 0; l < task.classes; ++l)
            line += label_cell(k, n * task.classes + l) + ",";
        } else if (task.temporal == Temporal::per_step) {
          line += label_cell(k, n * T + t) + ",";
        } else {
          line += label_cell(k, n) + ",";
        }
      }
      line += tag[n];
      out << line << '\n';
    }
  }
  if (!out)
    throw IoError("failed writing " + path.string());

  nlohmann::json side = schema;
  side["splits"] = {{"train", data.splits.train},
                    {"validation", data.splits.validation},
                    {"test", data.splits.test}};
  std::ofstream sc(sidecar_path(path));
  if (!sc)
    throw IoError("cannot write " + sidecar_path(path).string());
  sc << side.dump(2) << '\n';
  return schema;
}

DelimitedSchema load_sidecar(const std::filesystem::path &path) {
  std::ifstream in(sidecar_path(path));
  if (!in)
    throw IoError("cannot open " + sidecar_path(path).string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw DataError("malformed sidecar " + sidecar_path(path).string() + ": " +
                    e.what());
  }
  return j.get<DelimitedSchema>();
}

} // namespace mmoeex
