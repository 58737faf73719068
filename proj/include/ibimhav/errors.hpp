/*
 * Copyright (c) 2026, The ibimhav Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace ibv {

// Base of every error thrown by the core library. The C API maps the
// concrete subclass onto an ibv_status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or extents that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed files (RVOL, manifests, JSON configs on disk).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inputs that are well formed but carry no usable information
// (empty ROI, constant volume).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during training or verification.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Broken internal bookkeeping; indicates a bug rather than bad input.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ibv
