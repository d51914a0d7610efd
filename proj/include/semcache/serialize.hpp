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

// Binary tensor container.
//
//   offset 0   char[4]  "PDIT"
//   offset 4   u32      format version (1)
//   offset 8   u32      rank
//   offset 12  u32      reserved, written as 0
//   offset 16  u32[rank] extents
//   then       f64[prod(extents)] row-major values
//
// All integers and reals are little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "semcache/tensor.hpp"

namespace semcache {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor<double>& t);
Tensor<double> read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor<double>& t);
Tensor<double> load_tensor(const std::filesystem::path& path);

std::string encode_tensor(const Tensor<double>& t);
Tensor<double> decode_tensor(const std::string& bytes);

Tensor<double> matrix_to_tensor(const Matrix& m);
Matrix tensor_to_matrix(const Tensor<double>& t);

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(const void* data, std::size_t size);
// FNV-1a over the little-endian byte image of a matrix's values.
std::uint64_t checksum(const Matrix& m);

}  // namespace semcache
