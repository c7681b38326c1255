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
#include <mmoeex/log.hpp>

#include <iostream>
#include <mutex>

namespace mmoeex {

namespace {

std::mutex handler_mutex;
WarningHandler current_handler;

} // namespace

WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(handler_mutex);
  std::swap(current_handler, handler);
  return handler;
}

void warn(const std::string &message) {
  WarningHandler h;
  {
    std::lock_guard lock(handler_mutex);
    h = current_handler;
  }
  if (h)
    h(message);
  else
    std::cerr << "warning: " << message << '\n';
}

} // namespace mmoeex
