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
 * @file   gating.hpp
 * @brief  Task gates, the task x expert connectivity mask, and the gated
 *         expert mixture.
 *
 * Exclusivity binds round(alpha * E) randomly chosen experts to a single,
 * randomly chosen task each. Exclusion removes one random task edge from each
 * of round(alpha * E) randomly chosen experts. For two tasks the two
 * mechanisms produce the same column-degree profile.
 *
 * A closed edge is applied as a -inf gate logit, so the remaining gate mass
 * is renormalized over the open experts and every gate row still sums to one.
 */
#pragma once

#include <mmoeex/autodiff.hpp>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mmoeex {

enum class MaskMode { none, exclusivity, exclusion };

std::string_view to_string(MaskMode m);
MaskMode parse_mask_mode(std::string_view s);

/// Binary K x E matrix; entry (k, e) = 1 when expert e feeds task k.
class GateMask {
public:
  GateMask() = default;
  /// All-ones mask.
  GateMask(std::size_t tasks, std::size_t experts);

  std::size_t tasks() const { return tasks_; }
  std::size_t experts() const { return experts_; }
  MaskMode mode() const { return mode_; }
  double alpha() const { return alpha_; }
  std::uint64_t seed() const { return seed_; }

  bool open(std::size_t task, std::size_t expert) const {
    return cells_[task * experts_ + expert] != 0;
  }
  std::span<const unsigned char> row(std::size_t task) const {
    return {cells_.data() + task * experts_, experts_};
  }
  std::size_t column_degree(std::size_t expert) const;
  std::size_t row_degree(std::size_t task) const;
  bool all_open() const;

  /// Throws ConfigError when a task has no expert or an expert has no task.
  void validate() const;

  bool operator==(const GateMask &) const = default;

private:
  friend GateMask build_mask(std::size_t, std::size_t, double, MaskMode,
                             std::uint64_t);
  friend void from_json(const nlohmann::json &, GateMask &);

  std::size_t tasks_ = 0;
  std::size_t experts_ = 0;
  MaskMode mode_ = MaskMode::none;
  double alpha_ = 0.0;
  std::uint64_t seed_ = 0;
  std::vector<unsigned char> cells_;
};

/// Number of experts affected by the mask: nearest integer to alpha * E,
/// ties rounded up.
std::size_t affected_experts(double alpha, std::size_t experts);

inline constexpr int kMaskResampleLimit = 1000;

/// Seeded mask construction. Draws that starve a task or leave an expert
/// without tasks are rejected and redrawn; after kMaskResampleLimit
/// rejections a ConfigError is thrown.
GateMask build_mask(std::size_t tasks, std::size_t experts, double alpha,
                    MaskMode mode, std::uint64_t seed);

void to_json(nlohmann::json &j, const GateMask &m);
void from_json(const nlohmann::json &j, GateMask &m);

/// softmax(W x) over the open experts of one task. weight is [E x d],
/// x is [batch x d]; returns [batch x E] with exact zeros at closed experts.
ad::Var gate_forward(ad::Var weight, ad::Var x,
                     std::span<const unsigned char> mask_row);

/// sum_e gates[:, e] * experts[e], per row. gates is [batch x E]; each expert
/// output is [batch x h].
ad::Var mixture_forward(ad::Var gates, std::span<const ad::Var> experts);

} // namespace mmoeex
