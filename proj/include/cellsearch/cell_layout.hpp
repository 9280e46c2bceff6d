// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Macro-structure shared by the search network and the derived networks:
// head conv, cell stacking rule, channel schedule and classifier stem.

#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "cellsearch/op_catalog.hpp"

namespace cellsearch {

inline constexpr std::size_t kCellInputs = 2;
inline constexpr std::size_t kIntermediateNodes = 4;
inline constexpr std::size_t kEdgesPerCell = 14;  // 2 + 3 + 4 + 5
inline constexpr std::size_t kHeadMultiplier = 3;

/// Index of edge (pred -> node) inside a cell, node in [2, 6), pred < node.
inline std::size_t edge_index(std::size_t node, std::size_t pred) {
  CELLSEARCH_REQUIRE(node >= kCellInputs && node < kCellInputs + kIntermediateNodes && pred < node,
                     "edge_index: invalid edge " << pred << "->" << node);
  return (node - 2) * (node + 1) / 2 + pred;
}

/// Two normal cells, then a reduction cell, repeated.
inline bool is_reduction_position(std::size_t i) { return i % 3 == 2; }

struct CellSpec {
  bool reduction = false;
  bool reduction_prev = false;
  std::size_t c_prev_prev = 0;  // channels of input node 0
  std::size_t c_prev = 0;       // channels of input node 1
  std::size_t channels = 0;     // per-node working width
};

inline std::vector<CellSpec> plan_cells(std::size_t num_cells, std::size_t init_channels) {
  CELLSEARCH_REQUIRE(num_cells >= 1, "plan_cells: need at least one cell");
  CELLSEARCH_REQUIRE(init_channels >= 1, "plan_cells: init_channels must be positive");
  std::vector<CellSpec> cells;
  std::size_t c_pp = kHeadMultiplier * init_channels;
  std::size_t c_p = c_pp;
  std::size_t c = init_channels;
  bool reduction_prev = false;
  for (std::size_t i = 0; i < num_cells; ++i) {
    const bool reduction = is_reduction_position(i);
    if (reduction) c *= 2;
    cells.push_back({reduction, reduction_prev, c_pp, c_p, c});
    reduction_prev = reduction;
    c_pp = c_p;
    c_p = kIntermediateNodes * c;
  }
  return cells;
}

inline std::size_t final_channels(const std::vector<CellSpec>& cells) {
  return kIntermediateNodes * cells.back().channels;
}

/// Conv 3x3 (1 -> 3C) + BN over the 1-channel feature image.
template <typename T>
class Head final : public Module<T> {
 public:
  Head(std::size_t init_channels, Rng& rng)
      : conv_(1, kHeadMultiplier * init_channels, 3, Conv2dOptions{1, 1, 1, 1}, rng),
        bn_(kHeadMultiplier * init_channels) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) const { return bn_.forward(conv_.forward(x), mode); }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    conv_.collect_state(join_name(prefix, "conv"), out);
    bn_.collect_state(join_name(prefix, "bn"), out);
  }

  static std::size_t param_count(std::size_t init_channels) {
    const std::size_t c = kHeadMultiplier * init_channels;
    return 9 * c + 2 * c;
  }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
};

/// Global average pool + linear classifier.
template <typename T>
class Classifier final : public Module<T> {
 public:
  Classifier(std::size_t channels, std::size_t num_classes, Rng& rng) : fc_(channels, num_classes, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const { return fc_.forward(global_avg_pool(x)); }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    fc_.collect_state(join_name(prefix, "fc"), out);
  }

  static std::size_t param_count(std::size_t channels, std::size_t num_classes) {
    return num_classes * channels + num_classes;
  }

  Linear<T>& fc() { return fc_; }

 private:
  Linear<T> fc_;
};

/// Aligns the two cell inputs to the working width; node 0 also gets
/// spatially halved when the previous cell was a reduction.
template <typename T>
class InputPreprocess final : public Module<T> {
 public:
  InputPreprocess(const CellSpec& spec, Rng& rng) : prev_(spec.c_prev, spec.channels, 1, Conv2dOptions{}, rng) {
    if (spec.reduction_prev)
      prev_prev_reduce_.emplace(spec.c_prev_prev, spec.channels, rng);
    else
      prev_prev_.emplace(spec.c_prev_prev, spec.channels, 1, Conv2dOptions{}, rng);
  }

  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& s0, const Tensor<T>& s1, Mode mode) const {
    Tensor<T> a = prev_prev_reduce_ ? prev_prev_reduce_->forward(s0, mode) : prev_prev_->forward(s0, mode);
    Tensor<T> b = prev_.forward(s1, mode);
    CELLSEARCH_REQUIRE(a.shape() == b.shape(), "cell: preprocessed inputs disagree, " << shape_str(a.shape())
                                                                                      << " vs " << shape_str(b.shape()));
    return {a, b};
  }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    if (prev_prev_reduce_)
      prev_prev_reduce_->collect_state(join_name(prefix, "pre0"), out);
    else
      prev_prev_->collect_state(join_name(prefix, "pre0"), out);
    prev_.collect_state(join_name(prefix, "pre1"), out);
  }

  static std::size_t param_count(const CellSpec& spec) {
    const std::size_t c = spec.channels;
    const std::size_t pre0 = spec.c_prev_prev * c + 2 * c;  // 1x1 conv or factorized reduce: same count
    const std::size_t pre1 = spec.c_prev * c + 2 * c;
    return pre0 + pre1;
  }

 private:
  std::optional<ReluConvBn<T>> prev_prev_;
  std::optional<FactorizedReduce<T>> prev_prev_reduce_;
  ReluConvBn<T> prev_;
};

}  // namespace cellsearch
