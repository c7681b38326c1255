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
 * @file   data.hpp
 * @brief  Multi-task datasets: in-memory bundle, mini-batching, seeded
 *         synthetic suites, and delimited-text I/O.
 */
#pragma once

#include <mmoeex/autodiff.hpp>
#include <mmoeex/task.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mmoeex {

/// Labels of one task, sample-major.
///   binary per_sequence / first_window: [N]
///   binary or multiclass per_step:      [N x T]
///   multiclass per_sequence:            [N]        (class index as double)
///   multilabel:                         [N x L]
struct LabelArray {
  ad::Shape shape;
  std::vector<double> values;
  /// 1 = label present. Same length as values.
  std::vector<unsigned char> observed;

  bool operator==(const LabelArray &) const = default;
};

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;

  bool operator==(const Splits &) const = default;
};

struct DatasetBundle {
  std::vector<TaskSpec> tasks;
  std::size_t samples = 0;
  /// 1 for tabular data.
  std::size_t steps = 1;
  std::size_t features = 0;
  bool temporal = false;
  /// [N x T x d], sample-major.
  std::vector<double> x;
  std::vector<LabelArray> labels;
  Splits splits;
  /// Generator-side quantities kept for diagnostics (not used in training).
  std::map<std::string, std::vector<double>> latent;

  /// Throws DataError when shapes, label domains or splits are inconsistent.
  void validate() const;
  bool operator==(const DatasetBundle &) const = default;
};

/// Expected label shape for a task.
ad::Shape label_shape(const TaskSpec &task, std::size_t samples,
                      std::size_t steps);

/// Deterministic shuffled split: train = round(N * train_frac),
/// validation = round(N * val_frac), test = the rest. Each part is listed in
/// ascending sample order, so a split column read back from disk matches.
Splits make_splits(std::size_t samples, double train_frac, double val_frac,
                   std::uint64_t seed);

/// Task labels laid out to match the row order of a task's concatenated
/// logits: step-major for per_step tasks, sample-major otherwise.
struct TaskLabels {
  std::vector<double> values;
  std::vector<unsigned char> observed;
};

struct Batch {
  std::size_t size = 0;
  std::size_t steps = 1;
  /// One [batch x d] tensor per step.
  std::vector<ad::Tensor> inputs;
  std::vector<TaskLabels> labels;
};

Batch make_batch(const DatasetBundle &data, std::span<const std::size_t> rows);

struct TabularSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t samples = 5000;
  std::size_t features = 8;
  std::size_t tasks = 3;
  /// Task relatedness: weight of the shared factor in every task score.
  double correlation = 0.7;
  /// Std-dev of the Gaussian label noise added to each standardized score.
  double noise = 0.1;
  /// Spread of per-task shared-factor loadings around a common direction;
  /// 0 makes all tasks load the shared factor identically.
  double loading_jitter = 0.3;
  /// Per-task positive rate; empty means 0.5 for every task.
  std::vector<double> positive_rates;
  double pos_weight = 1.0;
};

/// Census-shaped suite: related binary tasks from a latent factor model,
/// split 66/17/17.
DatasetBundle gen_tabular_suite(const TabularSuiteOptions &options);

struct TemporalSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t samples = 2000;
  std::size_t steps = 16;
  std::size_t features = 8;
  /// Read position of the per-sequence window task is step window - 1.
  std::size_t window = 8;
  std::size_t los_classes = 10;
  std::size_t phenotypes = 6;
  /// Label noise; 0 makes every label a deterministic function of the
  /// latent state.
  double noise = 0.25;
  /// Feature observation noise.
  double feature_noise = 0.3;
  /// pos_weight for decompensation, mortality and phenotype tasks.
  double decomp_pos_weight = 25.0;
  double mortality_pos_weight = 5.0;
  double phenotype_pos_weight = 5.0;
};

/// Clinical-shaped suite with four heterogeneous tasks: per-step binary
/// ("decomp"), per-step multiclass ("los"), binary read at the window step
/// ("mortality"), and per-sequence multilabel ("phenotype"). Split 70/15/15.
DatasetBundle gen_temporal_suite(const TemporalSuiteOptions &options);

struct ManyTaskSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t samples = 20000;
  std::size_t features = 16;
  std::size_t tasks = 16;
  double min_positive_rate = 0.005;
  double max_positive_rate = 0.05;
  /// Probability that a (sample, task) label is missing.
  double missing_rate = 0.0;
  double noise = 0.3;
  double pos_weight = 100.0;
};

/// Assay-shaped suite: many sparse, imbalanced binary tasks sharing one
/// latent factor. Split 70/15/15.
DatasetBundle gen_manytask_suite(const ManyTaskSuiteOptions &options);

/// Column mapping for delimited files.
struct DelimitedSchema {
  std::vector<std::string> feature_columns;
  /// Column per task; multilabel tasks list their label columns in
  /// `multilabel_columns` under the task name instead.
  std::vector<TaskSpec> tasks;
  std::map<std::string, std::string> task_columns;
  std::map<std::string, std::vector<std::string>> multilabel_columns;
  /// Optional: rows carry a split tag (train / validation / test).
  std::optional<std::string> split_column;
  /// Optional: long-format sequences (one row per sample and step).
  std::optional<std::string> sequence_column;
  std::optional<std::string> step_column;
  /// Used when no split column is present.
  double train_fraction = 0.66;
  double validation_fraction = 0.17;
  std::uint64_t split_seed = 0;
};

void to_json(nlohmann::json &j, const DelimitedSchema &s);
void from_json(const nlohmann::json &j, DelimitedSchema &s);

/// Parses a comma-separated file with a header row. Empty label cells are
/// missing labels. Errors name the offending line (1-based, header = 1).
DatasetBundle load_delimited(const std::filesystem::path &path,
                             const DelimitedSchema &schema);

/// Writes `data` as a delimited file plus `<path>.json` sidecar holding the
/// schema (task specs and column names). Returns the schema.
DelimitedSchema save_delimited(const DatasetBundle &data,
                               const std::filesystem::path &path);

/// Reads the `<path>.json` sidecar written by save_delimited.
DelimitedSchema load_sidecar(const std::filesystem::path &path);

} // namespace mmoeex
