/* Copyright 2026 The semcache Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace semcache {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition or runtime contract was violated
// (non-stochastic attention, stale cache, non-finite activations, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Reuse was requested from a cache entry that holds no delta.
class StaleCacheError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Bad or unknown configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem or format failure; the message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace semcache
