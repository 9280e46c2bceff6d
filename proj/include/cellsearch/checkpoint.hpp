// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint container: named tensors plus string metadata. Layout is
// documented in docs/checkpoint.md. All integers and floats little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellsearch/layers.hpp"

namespace cellsearch {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'C', 'K', 'P', 'T', '0', '1'};

enum class DType : std::uint8_t { F32 = 4, F64 = 8 };

struct StoredTensor {
  Shape shape;
  DType dtype = DType::F32;
  std::vector<double> values;
};

struct Checkpoint {
  std::map<std::string, StoredTensor> tensors;
  std::map<std::string, std::string> meta;

  template <typename T>
  void put(const std::string& name, const Shape& shape, std::span<const T> values, DType dtype) {
    tensors[name] = {shape, dtype, std::vector<double>(values.begin(), values.end())};
  }

  const StoredTensor& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor '" + name + "'");
    return it->second;
  }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint: missing metadata '" + key + "'");
    return it->second;
  }
};

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 8 ? DType::F64 : DType::F32;
}

/// Copies every state tensor under its name.
template <typename T>
void export_state(const StateList<T>& state, Checkpoint& ckpt) {
  for (const auto& s : state) ckpt.put<T>(s.name, s.tensor.shape(), s.tensor.values(), dtype_of<T>());
}

/// Overwrites every state tensor in place; names and shapes must all match.
template <typename T>
void import_state(const StateList<T>& state, const Checkpoint& ckpt) {
  for (const auto& s : state) {
    const StoredTensor& st = ckpt.get(s.name);
    if (st.shape != s.tensor.shape())
      throw CheckpointError("checkpoint: tensor '" + s.name + "' has shape " + shape_str(st.shape) + ", expected " +
                            shape_str(s.tensor.shape()));
    Tensor<T> t = s.tensor;
    auto dst = t.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(st.values[i]);
  }
}

namespace detail {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  std::string str() {
    const auto n = static_cast<std::size_t>(uint(4));
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect(const char* bytes, std::size_t n) {
    need(n);
    if (data_.compare(pos_, n, bytes, n) != 0) throw CheckpointError("checkpoint: bad magic");
    pos_ += n;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u64(out, ckpt.tensors.size());
  detail::put_u64(out, ckpt.meta.size());
  for (const auto& [name, t] : ckpt.tensors) {
    detail::put_str(out, name);
    detail::put_u8(out, static_cast<std::uint8_t>(t.dtype));
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::put_u64(out, d);
    for (double v : t.values) {
      if (t.dtype == DType::F64)
        detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
      else
        detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  for (const auto& [k, v] : ckpt.meta) {
    detail::put_str(out, k);
    detail::put_str(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& data) {
  detail::Reader r(data);
  r.expect(kCheckpointMagic, sizeof(kCheckpointMagic));
  const auto n_tensors = r.uint(8);
  const auto n_meta = r.uint(8);
  Checkpoint ckpt;
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const auto dtype = static_cast<DType>(r.uint(1));
    if (dtype != DType::F32 && dtype != DType::F64)
      throw CheckpointError("checkpoint: tensor '" + name + "' has unknown dtype");
    StoredTensor t;
    t.dtype = dtype;
    const auto ndim = r.uint(4);
    if (ndim > 8) throw CheckpointError("checkpoint: tensor '" + name + "' has implausible rank");
    for (std::uint64_t d = 0; d < ndim; ++d) t.shape.push_back(static_cast<std::size_t>(r.uint(8)));
    const std::size_t n = shape_numel(t.shape);
    if (n > data.size()) throw CheckpointError("checkpoint: tensor '" + name + "' larger than file");
    t.values.resize(n);
    for (auto& v : t.values)
      v = dtype == DType::F64 ? std::bit_cast<double>(r.uint(8))
                              : static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4))));
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ckpt.meta[k] = r.str();
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return ckpt;
}

/// Writes to `path.tmp`, then renames over `path`.
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    const std::string bytes = encode_checkpoint(ckpt);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(data);
}

}  // namespace cellsearch
