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
 * @file   harness.hpp
 * @brief  Experiment runner: configuration, dataset construction, model zoo,
 *         training and evaluation loops, run records and output files.
 *
 * Configuration precedence, lowest to highest: built-in defaults, config
 * file, dotted-key overrides, explicit seed.
 */
#pragma once

#include <mmoeex/data.hpp>
#include <mmoeex/diversity.hpp>
#include <mmoeex/experts.hpp>
#include <mmoeex/gating.hpp>
#include <mmoeex/metrics.hpp>
#include <mmoeex/model.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mmoeex {

struct DatasetConfig {
  /// tabular | temporal | manytask | file
  std::string generator = "tabular";
  /// Generator options, keyed like the *SuiteOptions fields.
  nlohmann::json params = nlohmann::json::object();
  /// Delimited file for generator "file"; its schema comes from the
  /// `<path>.json` sidecar unless `schema` is given.
  std::string path;
  nlohmann::json schema;
};

struct ModelConfig {
  ModelKind kind = ModelKind::mmoeex;
  std::size_t experts = 12;
  ExpertKind expert = ExpertKind::dense;
  std::size_t hidden_dim = 16;
  Activation expert_activation = Activation::relu;
  std::vector<std::size_t> tower_hidden{4};
  Activation tower_activation = Activation::none;
  double alpha = 0.0;
  MaskMode mask_mode = MaskMode::none;
  /// Window of first_window towers; 0 takes the dataset's window.
  std::size_t window = 0;
};

struct TrainingConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  /// adam | sgd
  std::string optimizer = "adam";
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double lr_decay = 0.9;
  std::size_t lr_decay_interval = 10;
  bool maml = false;
  /// MAML temporary-update step size; unset means the outer lr.
  std::optional<double> inner_lr;
  bool allow_many_tasks = false;
  std::uint64_t seed = 0;
  /// Split used for the diversity report: test | validation.
  std::string diversity_split = "test";
  /// Rows per forward pass during evaluation.
  std::size_t eval_chunk = 1024;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainingConfig training;
  std::string output_dir;

  /// Cross-field checks; ConfigError on failure.
  void validate() const;
};

void to_json(nlohmann::json &j, const ExperimentConfig &c);
/// Missing keys take their defaults; unknown keys are a ConfigError.
void from_json(const nlohmann::json &j, ExperimentConfig &c);

/// Sets a dotted key ("training.epochs") in a config document. The value is
/// parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json &config, const std::string &assignment);

ExperimentConfig load_config(const std::filesystem::path &path,
                             const std::vector<std::string> &overrides = {},
                             std::optional<std::uint64_t> seed = {});

/// Builds or loads the dataset a config describes.
DatasetBundle build_dataset(const DatasetConfig &config);

/// Model specification for a dataset and model block. STL specs hold one
/// task; `stl_task` picks it.
ModelSpec make_model_spec(const ExperimentConfig &config,
                          const DatasetBundle &data,
                          std::size_t stl_task = 0);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  /// NaN where the metric is undefined.
  std::vector<double> val_metric;
};

struct RunRecord {
  /// Fully resolved configuration.
  nlohmann::json config;
  std::vector<std::string> tasks;
  std::vector<EpochRecord> history;
  /// Best epoch per task. Identical entries for multi-task models; STL
  /// selects per task model.
  std::vector<std::size_t> best_epoch;
  std::vector<TaskResult> test;
  std::optional<DiversityReport> diversity;
  std::optional<GateMask> mask;
  double wall_seconds = 0.0;
  bool complete = false;
  std::string error;
};

/// Per-epoch progress callback.
using EpochCallback = std::function<void(const EpochRecord &)>;

struct RunOptions {
  /// Write output files (requires config.output_dir).
  bool write_outputs = true;
  /// Also write activations.csv with the expert outputs behind the
  /// diversity report.
  bool dump_activations = false;
  EpochCallback on_epoch;
};

/// Trains and evaluates one configuration. Numerical failures return an
/// incomplete record carrying the error text; other errors propagate.
RunRecord run_experiment(const ExperimentConfig &config,
                         const RunOptions &options = {});

/// Reads config.json and metrics.csv from a run directory.
RunRecord load_run(const std::filesystem::path &dir);

/// Label used for a run in comparison tables.
std::string run_label(const RunRecord &record);

/// One row per MTL run against the STL baseline.
ComparisonReport compare_runs(const RunRecord &stl,
                              const std::vector<RunRecord> &mtl);

/// Parameter dump: one line per tensor, "name<TAB>d0xd1<TAB>v v v ...",
/// values printed with 17 significant digits.
void save_parameters(const std::vector<std::string> &names,
                     const std::vector<Tensor> &tensors,
                     const std::filesystem::path &path);
void load_parameters(const std::filesystem::path &path,
                     std::vector<std::string> &names,
                     std::vector<Tensor> &tensors);

} // namespace mmoeex
