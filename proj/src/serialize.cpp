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

#include "semcache/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace semcache {
namespace {

constexpr char kMagic[4] = {'P', 'D', 'I', 'T'};

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError("truncated tensor header");
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor<double>& t) {
  out.write(kMagic, 4);
  put_u32(out, kTensorFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  put_u32(out, 0);
  for (std::size_t extent : t.shape()) put_u32(out, static_cast<std::uint32_t>(extent));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw IoError("failed writing tensor");
}

Tensor<double> read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad tensor magic");
  const std::uint32_t version = get_u32(in);
  if (version != kTensorFormatVersion) {
    throw IoError("unsupported tensor format version " + std::to_string(version));
  }
  const std::uint32_t rank = get_u32(in);
  get_u32(in);
  std::vector<std::size_t> shape(rank);
  for (auto& extent : shape) extent = get_u32(in);
  Vector data(static_cast<Eigen::Index>(Tensor<double>::numel(shape)));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw IoError("truncated tensor payload");
  return Tensor<double>(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor<double>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor<double> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_tensor(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string encode_tensor(const Tensor<double>& t) {
  std::ostringstream out(std::ios::binary);
  write_tensor(out, t);
  return out.str();
}

Tensor<double> decode_tensor(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_tensor(in);
}

Tensor<double> matrix_to_tensor(const Matrix& m) {
  Vector data = Eigen::Map<const Vector>(m.data(), m.size());
  return Tensor<double>({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                        std::move(data));
}

Matrix tensor_to_matrix(const Tensor<double>& t) {
  if (t.rank() != 2) throw DimensionError("expected a rank-2 tensor");
  const auto rows = static_cast<Eigen::Index>(t.shape()[0]);
  const auto cols = static_cast<Eigen::Index>(t.shape()[1]);
  return Eigen::Map<const Matrix>(t.data().data(), rows, cols);
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t checksum(const Matrix& m) {
  return fnv1a64(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
}

}  // namespace semcache
