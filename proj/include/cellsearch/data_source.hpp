// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Sample sources (feature matrix + label) and the shuffled mini-batch
// iterator shared by search, training and evaluation.

#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "cellsearch/tensor.hpp"

namespace cellsearch {

enum class Split { Train = 0, Val = 1, Test = 2 };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

/// splitmix64 finalizer; used to derive independent seeds from tuples.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct SampleRef {
  Split split = Split::Train;
  std::size_t index = 0;
};

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t height() const = 0;
  virtual std::size_t width() const = 0;
  /// Items visited in one epoch of `split`, before shuffling. May differ per
  /// epoch (class balancing, silence re-cropping).
  virtual std::vector<SampleRef> epoch_items(Split split, std::uint64_t epoch_seed) const = 0;
  /// Writes height() x width() features for `ref` into `out`; returns its label.
  virtual int load(const SampleRef& ref, std::uint64_t sample_seed, bool augment, std::span<float> out) const = 0;
};

struct Batch {
  Tensor<float> features;  // B x 1 x H x W
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

/// Walks the union of `splits` once, in an order fixed by epoch_seed.
class BatchIterator {
 public:
  BatchIterator(const SampleSource& source, std::vector<Split> splits, std::size_t batch_size,
                std::uint64_t epoch_seed, bool shuffle, bool augment)
      : source_(source), batch_size_(batch_size), epoch_seed_(epoch_seed), augment_(augment) {
    CELLSEARCH_REQUIRE(batch_size >= 1, "batch iterator: batch_size must be >= 1");
    for (Split s : splits) {
      auto part = source.epoch_items(s, mix_seed(epoch_seed, static_cast<std::uint64_t>(s)));
      items_.insert(items_.end(), part.begin(), part.end());
    }
    CELLSEARCH_REQUIRE(!items_.empty(), "batch iterator: selected splits are empty");
    if (shuffle) {
      std::mt19937_64 rng(mix_seed(epoch_seed, 0xB47C));
      std::shuffle(items_.begin(), items_.end(), rng);
    }
  }

  std::size_t num_items() const { return items_.size(); }
  std::size_t num_batches() const { return (items_.size() + batch_size_ - 1) / batch_size_; }

  bool next(Batch& batch) {
    if (cursor_ >= items_.size()) return false;
    const std::size_t b = std::min(batch_size_, items_.size() - cursor_);
    const std::size_t hw = source_.height() * source_.width();
    std::vector<float> data(b * hw);
    batch.labels.assign(b, 0);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t pos = cursor_ + i;
      batch.labels[i] = source_.load(items_[pos], mix_seed(epoch_seed_, pos), augment_,
                                     std::span<float>(data).subspan(i * hw, hw));
    }
    batch.features = Tensor<float>::from({b, 1, source_.height(), source_.width()}, std::move(data));
    cursor_ += b;
    return true;
  }

  /// Restarts from the first batch of the same order.
  void rewind() { cursor_ = 0; }

 private:
  const SampleSource& source_;
  std::size_t batch_size_;
  std::uint64_t epoch_seed_;
  bool augment_;
  std::vector<SampleRef> items_;
  std::size_t cursor_ = 0;
};

struct SyntheticConfig {
  std::size_t num_classes = 2;
  std::size_t height = 101;
  std::size_t width = 40;
  std::size_t train_per_class = 32;
  std::size_t val_per_class = 32;
  std::size_t test_per_class = 16;
  double separation = 1.0;  // distance between neighbouring class offsets
  std::uint64_t seed = 0;
};

/// Gaussian blobs: class c has every entry drawn from
/// N(separation * (c - (K - 1) / 2), 1). Label of item i is i mod K.
class SyntheticSource final : public SampleSource {
 public:
  explicit SyntheticSource(SyntheticConfig cfg) : cfg_(cfg) {
    CELLSEARCH_REQUIRE(cfg.num_classes >= 2, "synthetic: num_classes must be >= 2");
    CELLSEARCH_REQUIRE(cfg.height >= 1 && cfg.width >= 1, "synthetic: empty feature matrix");
  }

  std::size_t num_classes() const override { return cfg_.num_classes; }
  std::size_t height() const override { return cfg_.height; }
  std::size_t width() const override { return cfg_.width; }

  std::size_t split_size(Split s) const {
    const std::size_t per = s == Split::Train ? cfg_.train_per_class
                            : s == Split::Val ? cfg_.val_per_class
                                              : cfg_.test_per_class;
    return per * cfg_.num_classes;
  }

  std::vector<SampleRef> epoch_items(Split split, std::uint64_t) const override {
    std::vector<SampleRef> out(split_size(split));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {split, i};
    return out;
  }

  int load(const SampleRef& ref, std::uint64_t, bool, std::span<float> out) const override {
    CELLSEARCH_REQUIRE(ref.index < split_size(ref.split), "synthetic: index out of range");
    const int label = static_cast<int>(ref.index % cfg_.num_classes);
    const double mean = cfg_.separation * (label - 0.5 * static_cast<double>(cfg_.num_classes - 1));
    std::mt19937_64 rng(mix_seed(mix_seed(cfg_.seed, static_cast<std::uint64_t>(ref.split)), ref.index));
    std::normal_distribution<double> noise(mean, 1.0);
    for (auto& v : out) v = static_cast<float>(noise(rng));
    return label;
  }

  const SyntheticConfig& config() const { return cfg_; }

 private:
  SyntheticConfig cfg_;
};

}  // namespace cellsearch
