// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Binary checkpoint, little-endian:
//   magic "UC3DCKPT" (8 bytes), u32 version, u32 count,
//   per tensor: u32 name length, name bytes, u32 rank, u64 extents[rank],
//               f64 values[product(extents)].

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "uc3d/core/error.hpp"
#include "uc3d/diffmath/tensor.hpp"

namespace uc3d::dm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'U', 'C', '3', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

template <typename T>
void put(std::vector<char>& out, T v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& buf) : buf_(buf) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw IoError("checkpoint: truncated data");
  }
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const NamedTensors& tensors) {
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put<std::uint64_t>(out, e);
    const char* p = reinterpret_cast<const char*>(t.data().data());
    out.insert(out.end(), p, p + t.size() * sizeof(double));
  }
  return out;
}

inline NamedTensors deserialize_checkpoint(const std::vector<char>& buf) {
  detail::Reader r(buf);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.bytes(name.data(), name.size());
    Shape shape(r.get<std::uint32_t>());
    for (auto& e : shape) e = r.get<std::uint64_t>();
    std::vector<double> values(shape_size(shape));
    r.bytes(values.data(), values.size() * sizeof(double));
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) throw IoError("checkpoint: trailing bytes");
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto bytes = serialize_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace uc3d::dm
