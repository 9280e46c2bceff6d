// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Feature cache: `<name>.bin` holds consecutive little-endian float32
// records of frames x coeffs; `<name>.bin.idx` is a text sidecar
//
//   cellsearch-features v1 <frames> <coeffs>
//   <record> <key>
//   ...

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellsearch/audio/mfcc.hpp"

namespace cellsearch {

class FeatureCacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::filesystem::path feature_index_path(const std::filesystem::path& bin) {
  return bin.string() + ".idx";
}

namespace detail {

inline void put_f32_le(std::string& out, float v) {
  static_assert(sizeof(float) == 4);
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline float get_f32_le(const char* p) {
  std::uint32_t u = 0;
  for (int i = 3; i >= 0; --i) u = (u << 8) | static_cast<unsigned char>(p[i]);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace detail

/// Appends records; both files are rewritten in full on close().
class FeatureCacheWriter {
 public:
  FeatureCacheWriter(std::filesystem::path bin, std::size_t frames, std::size_t coeffs)
      : bin_(std::move(bin)), frames_(frames), coeffs_(coeffs) {}

  void append(const std::string& key, const FeatureMatrix& f) {
    if (f.frames != frames_ || f.coeffs != coeffs_)
      throw FeatureCacheError("feature cache: record '" + key + "' has the wrong shape");
    if (key.empty() || key.find_first_of("\n\r") != std::string::npos)
      throw FeatureCacheError("feature cache: keys must be non-empty single-line strings");
    for (double v : f.values) detail::put_f32_le(data_, static_cast<float>(v));
    keys_.push_back(key);
  }

  void close() {
    std::ofstream bin(bin_, std::ios::binary | std::ios::trunc);
    bin.write(data_.data(), static_cast<std::streamsize>(data_.size()));
    std::ofstream idx(feature_index_path(bin_), std::ios::trunc);
    idx << "cellsearch-features v1 " << frames_ << ' ' << coeffs_ << '\n';
    for (std::size_t i = 0; i < keys_.size(); ++i) idx << i << ' ' << keys_[i] << '\n';
    if (!bin || !idx) throw FeatureCacheError("feature cache: write failed for " + bin_.string());
  }

 private:
  std::filesystem::path bin_;
  std::size_t frames_, coeffs_;
  std::string data_;
  std::vector<std::string> keys_;
};

class FeatureCache {
 public:
  explicit FeatureCache(const std::filesystem::path& bin) {
    std::ifstream idx(feature_index_path(bin));
    if (!idx) throw FeatureCacheError("feature cache: missing index " + feature_index_path(bin).string());
    std::string magic, version;
    if (!(idx >> magic >> version >> frames_ >> coeffs_) || magic != "cellsearch-features" || version != "v1")
      throw FeatureCacheError("feature cache: bad index header in " + feature_index_path(bin).string());
    std::string line;
    std::getline(idx, line);
    while (std::getline(idx, line)) {
      if (line.empty()) continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw FeatureCacheError("feature cache: malformed index line '" + line + "'");
      index_[line.substr(sp + 1)] = std::stoull(line.substr(0, sp));
    }
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw FeatureCacheError("feature cache: cannot open " + bin.string());
    data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (data_.size() != index_.size() * record_bytes())
      throw FeatureCacheError("feature cache: " + bin.string() + " size does not match its index");
  }

  std::size_t size() const { return index_.size(); }
  bool contains(const std::string& key) const { return index_.count(key) != 0; }

  std::vector<float> get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw FeatureCacheError("feature cache: no record '" + key + "'");
    std::vector<float> out(frames_ * coeffs_);
    const char* p = data_.data() + it->second * record_bytes();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::get_f32_le(p + 4 * i);
    return out;
  }

 private:
  std::size_t record_bytes() const { return frames_ * coeffs_ * 4; }

  std::size_t frames_ = 0, coeffs_ = 0;
  std::map<std::string, std::size_t> index_;
  std::string data_;
};

/// One row per frame, comma-separated, 9 significant digits.
inline std::string feature_csv(const FeatureMatrix& f) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t t = 0; t < f.frames; ++t) {
    for (std::size_t k = 0; k < f.coeffs; ++k) os << (k ? "," : "") << f.at(t, k);
    os << '\n';
  }
  return os.str();
}

}  // namespace cellsearch
