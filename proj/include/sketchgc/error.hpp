// Copyright 2026 The sketchgc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

#include <stdexcept>
#include <string>

namespace sketchgc {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite gradient entries or otherwise malformed numeric input.
class InputError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameters (budgets, block counts, learning rates, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Two sketches or payloads that do not share hashing parameters.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

/// Truncated or corrupt wire bytes.
class FormatError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace sketchgc
