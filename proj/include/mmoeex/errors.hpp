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
 * @file   errors.hpp
 * @brief  Exception hierarchy shared by every module.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace mmoeex {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not line up.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// A value lies outside the domain an operation accepts (labels, targets).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Invalid or unsatisfiable configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Malformed input data (files, sequences too short for a tower window).
class DataError : public Error {
public:
  using Error::Error;
};

/// Non-finite loss during training. The CLI maps this to exit code 3.
class NumericalError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// Caller broke an API precondition that is not about data or configuration.
class ContractError : public Error {
public:
  using Error::Error;
};

/// Metric undefined on the given sample, e.g. AUC with a single class.
class UndefinedMetricError : public Error {
public:
  using Error::Error;
};

} // namespace mmoeex
