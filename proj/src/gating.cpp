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
#include <mmoeex/gating.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mmoeex {

std::string_view to_string(MaskMode m) {
  switch (m) {
  case MaskMode::none: return "none";
  case MaskMode::exclusivity: return "exclusivity";
  case MaskMode::exclusion: return "exclusion";
  }
  return "?";
}

MaskMode parse_mask_mode(std::string_view s) {
  if (s == "none") return MaskMode::none;
  if (s == "exclusivity") return MaskMode::exclusivity;
  if (s == "exclusion") return MaskMode::exclusion;
  throw ConfigError("unknown mask mode '" + std::string(s) + "'");
}

GateMask::GateMask(std::size_t tasks, std::size_t experts)
    : tasks_(tasks), experts_(experts), cells_(tasks * experts, 1) {}

std::size_t GateMask::column_degree(std::size_t expert) const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < tasks_; ++k)
    n += open(k, expert) ? 1 : 0;
  return n;
}

std::size_t GateMask::row_degree(std::size_t task) const {
  const auto r = row(task);
  return static_cast<std::size_t>(std::count(r.begin(), r.end(), 1));
}

bool GateMask::all_open() const {
  return std::all_of(cells_.begin(), cells_.end(),
                     [](unsigned char c) { return c != 0; });
}

void GateMask::validate() const {
  for (std::size_t k = 0; k < tasks_; ++k)
    if (row_degree(k) == 0)
      throw ConfigError("gate mask starves task " + std::to_string(k));
  for (std::size_t e = 0; e < experts_; ++e)
    if (column_degree(e) == 0)
      throw ConfigError("gate mask leaves expert " + std::to_string(e) +
                        " without tasks");
}

std::size_t affected_experts(double alpha, std::size_t experts) {
  return static_cast<std::size_t>(
      std::floor(alpha * static_cast<double>(experts) + 0.5));
}

GateMask build_mask(std::size_t tasks, std::size_t experts, double alpha,
                    MaskMode mode, std::uint64_t seed) {
  if (tasks < 1 || experts < 1)
    throw ConfigError("gate mask needs at least one task and one expert");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("alpha must lie in [0, 1]");

  GateMask mask(tasks, experts);
  mask.mode_ = mode;
  mask.alpha_ = alpha;
  mask.seed_ = seed;
  const std::size_t selected = affected_experts(alpha, experts);
  if (mode == MaskMode::none || selected == 0)
    return mask;

  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32), 0x6d61736bu};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> pick_task(0, tasks - 1);
  std::vector<std::size_t> order(experts);

  for (int attempt = 0; attempt < kMaskResampleLimit; ++attempt) {
    std::fill(mask.cells_.begin(), mask.cells_.end(), 1);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < selected; ++i) {
      const std::size_t e = order[i];
      const std::size_t k = pick_task(rng);
      for (std::size_t t = 0; t < tasks; ++t) {
        const bool keep = mode == MaskMode::exclusivity ? t == k : t != k;
        mask.cells_[t * experts + e] = keep ? 1 : 0;
      }
    }
    try {
      mask.validate();
      return mask;
    } catch (const ConfigError &) {
    }
  }
  throw ConfigError("cannot build a " + std::string(to_string(mode)) +
                    " mask with K=" + std::to_string(tasks) +
                    ", E=" + std::to_string(experts) +
                    ", alpha=" + std::to_string(alpha) + " after " +
                    std::to_string(kMaskResampleLimit) +
                    " attempts without starving a task or an expert");
}

void to_json(nlohmann::json &j, const GateMask &m) {
  nlohmann::json matrix = nlohmann::json::array();
  for (std::size_t k = 0; k < m.tasks(); ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t e = 0; e < m.experts(); ++e)
      row.push_back(m.open(k, e) ? 1 : 0);
    matrix.push_back(std::move(row));
  }
  j = nlohmann::json{{"mode", to_string(m.mode())},
                     {"alpha", m.alpha()},
                     {"seed", m.seed()},
                     {"matrix", std::move(matrix)}};
}

void from_json(const nlohmann::json &j, GateMask &m) {
  const auto &matrix = j.at("matrix");
  if (!matrix.is_array() || matrix.empty())
    throw ConfigError("mask matrix must be a non-empty array");
  const std::size_t tasks = matrix.size();
  const std::size_t experts = matrix.at(0).size();
  GateMask out(tasks, experts);
  out.mode_ = parse_mask_mode(j.at("mode").get<std::string>());
  out.alpha_ = j.at("alpha").get<double>();
  out.seed_ = j.at("seed").get<std::uint64_t>();
  for (std::size_t k = 0; k < tasks; ++k) {
    if (matrix.at(k).size() != experts)
      throw ConfigError("mask matrix rows differ in length");
    for (std::size_t e = 0; e < experts; ++e) {
      const int v = matrix.at(k).at(e).get<int>();
      if (v != 0 && v != 1)
        throw ConfigError("mask entries must be 0 or 1");
      out.cells_[k * experts + e] = static_cast<unsigned char>(v);
    }
  }
  out.validate();
  m = std::move(out);
}

ad::Var gate_forward(ad::Var weight, ad::Var x,
                     std::span<const unsigned char> mask_row) {
  if (weight.rows() != mask_row.size())
    throw ShapeError("gate has " + std::to_string(weight.rows()) +
                     " experts but the mask row has " +
                     std::to_string(mask_row.size()));
  const bool any_open = std::any_of(mask_row.begin(), mask_row.end(),
                                    [](unsigned char c) { return c != 0; });
  if (!any_open)
    throw ConfigError("gate has no admissible experts");
  ad::Var logits = ad::linear(x, weight);
  const bool all_open = std::all_of(mask_row.begin(), mask_row.end(),
                                    [](unsigned char c) { return c != 0; });
  if (!all_open)
    logits = ad::mask_columns(logits, mask_row);
  return ad::softmax(logits);
}

ad::Var mixture_forward(ad::Var gates, std::span<const ad::Var> experts) {
  if (!gates.valid())
    throw ContractError("mixture_forward: unbound gates");
  ad::Tape &tape = *gates.tape();
  const std::size_t batch = gates.rows(), count = gates.cols();
  if (gates.shape().size() != 2 || experts.size() != count)
    throw ShapeError("mixture_forward: gates " + ad::to_string(gates.shape()) +
                     " for " + std::to_string(experts.size()) + " experts");
  const std::size_t hidden = experts.empty() ? 0 : experts[0].cols();
  for (ad::Var f : experts) {
    if (f.tape() != &tape)
      throw ContractError("mixture_forward: operands live on different tapes");
    if (f.shape().size() != 2 || f.rows() != batch || f.cols() != hidden)
      throw ShapeError("mixture_forward: expert output " +
                       ad::to_string(f.shape()) + " does not match " +
                       ad::to_string(experts[0].shape()));
  }

  const auto &g = tape.node(gates).values;
  // Experts whose gate column is identically zero contribute nothing to the
  // output and receive no gradient.
  std::vector<std::size_t> active;
  for (std::size_t e = 0; e < count; ++e) {
    bool used = false;
    for (std::size_t b = 0; b < batch && !used; ++b)
      used = g[b * count + e] != 0.0;
    if (used)
      active.push_back(e);
  }

  std::vector<double> out(batch * hidden, 0.0);
  for (std::size_t e : active) {
    const auto &fe = tape.node(experts[e]).values;
    for (std::size_t b = 0; b < batch; ++b) {
      const double w = g[b * count + e];
      for (std::size_t j = 0; j < hidden; ++j)
        out[b * hidden + j] += w * fe[b * hidden + j];
    }
  }

  std::vector<int> parents{gates.id()};
  bool needs_grad = tape.requires_grad(gates);
  for (ad::Var f : experts) {
    parents.push_back(f.id());
    needs_grad = needs_grad || tape.requires_grad(f);
  }
  ad::Tape::BackwardFn backward;
  if (needs_grad) {
    backward = [parents, active, batch, count, hidden](ad::Tape &t, int self) {
      const auto &up = t.grad_of(self);
      const int gate_id = parents[0];
      const auto &gv = t.node(gate_id).values;
      if (t.requires_grad(gate_id)) {
        auto &gg = t.grad_accumulator(gate_id);
        for (std::size_t e = 0; e < count; ++e) {
          const auto &fe = t.node(parents[e + 1]).values;
          for (std::size_t b = 0; b < batch; ++b) {
            double dot = 0.0;
            for (std::size_t j = 0; j < hidden; ++j)
              dot += up[b * hidden + j] * fe[b * hidden + j];
            gg[b * count + e] += dot;
          }
        }
      }
      for (std::size_t e : active) {
        const int fid = parents[e + 1];
        if (!t.requires_grad(fid))
          continue;
        auto &gf = t.grad_accumulator(fid);
        for (std::size_t b = 0; b < batch; ++b) {
          const double w = gv[b * count + e];
          for (std::size_t j = 0; j < hidden; ++j)
            gf[b * hidden + j] += w * up[b * hidden + j];
        }
      }
    };
  }
  return tape.record({batch, hidden}, std::move(out), std::move(parents),
                     std::move(backward));
}

} // namespace mmoeex
