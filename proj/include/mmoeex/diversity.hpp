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
 * @file   diversity.hpp
 * @brief  Expert diversity: normalized pairwise distance matrix between
 *         expert outputs, diversity score, heatmap export, activation dumps.
 */
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mmoeex {

struct DiversityReport {
  std::size_t experts = 0;
  std::size_t samples = 0;
  /// Row-major E x E, symmetric, zero diagonal, divided by its max entry.
  std::vector<double> distances;
  /// Mean over off-diagonal entries.
  double d_bar = 0.0;
  /// Mean over all E^2 entries, diagonal zeros included.
  double d_bar_all = 0.0;

  double at(std::size_t i, std::size_t j) const {
    return distances[i * experts + j];
  }
};

/// `outputs[e]` is expert e's output over the evaluated samples, flattened
/// (temporal outputs across steps and hidden units). All must share a length.
/// E < 2 is a ConfigError. If every distance is zero the matrix stays zero and
/// a warning is issued.
DiversityReport diversity_report(std::span<const std::vector<double>> outputs,
                                 std::size_t samples);

/// Score of an already normalized matrix (used after import).
DiversityReport report_from_matrix(std::vector<double> distances,
                                   std::size_t experts, std::size_t samples = 0);

/// Writes the matrix as CSV (header e0..e{E-1}, E rows, 17 significant
/// digits) and, when `ascii_path` is non-empty, a shaded text rendering.
void export_heatmap(const DiversityReport &report,
                    const std::filesystem::path &csv_path,
                    const std::filesystem::path &ascii_path = {});

/// Reads a CSV written by export_heatmap.
DiversityReport import_heatmap(const std::filesystem::path &csv_path);

/// Shaded text rendering with a legend and the two scores.
std::string render_heatmap(const DiversityReport &report);

/// Activation dump: one record per (sample, expert) holding the flattened
/// output vector.
///   CSV:        header "sample,expert,v0,...", one row per record
///   JSON lines: {"sample": i, "expert": e, "values": [...]}
/// The format follows the file extension (.jsonl selects JSON lines).
/// Returns per-expert outputs concatenated in ascending sample order.
struct ActivationDump {
  std::size_t samples = 0;
  std::vector<std::vector<double>> outputs;
};

ActivationDump load_activation_dump(const std::filesystem::path &path);

/// `per_sample[n][e]` is expert e's flattened output for sample n.
void save_activation_dump(
    const std::vector<std::vector<std::vector<double>>> &per_sample,
    const std::filesystem::path &path);

} // namespace mmoeex
