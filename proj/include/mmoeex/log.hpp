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
 * @file   log.hpp
 * @brief  Warning sink. Defaults to stderr; tests install a capturing handler.
 */
#pragma once

#include <functional>
#include <string>

namespace mmoeex {

using WarningHandler = std::function<void(const std::string &)>;

/// Installs a handler and returns the previous one. An empty handler restores
/// the stderr default.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(const std::string &message);

} // namespace mmoeex
