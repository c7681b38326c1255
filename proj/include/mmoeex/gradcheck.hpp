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
 * @file   gradcheck.hpp
 * @brief  Finite-difference suite over every differentiable primitive and
 *         over complete multi-task model graphs.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mmoeex {

struct GradCheckResult {
  std::string name;
  std::size_t instances = 0;
  /// Worst max |g_ad - g_fd| / max(1, |g_ad| + |g_fd|) over the instances.
  double max_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  /// Random instances per primitive.
  std::size_t instances = 20;
  /// Random instances per full-model graph.
  std::size_t model_instances = 2;
  double eps = 1e-5;
  double tolerance = 1e-4;
};

std::vector<GradCheckResult> gradcheck_suite(const GradCheckOptions &options = {});

} // namespace mmoeex
