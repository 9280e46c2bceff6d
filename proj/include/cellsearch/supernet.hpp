// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Continuous search network. Every cell edge is a mixed edge holding all
// candidate ops, blended by a softmax over that edge's row of architecture
// weights. Normal cells share one weight matrix, reduction cells another.

#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "cellsearch/cell_layout.hpp"

namespace cellsearch {

struct SupernetConfig {
  std::size_t num_cells = 6;
  std::size_t init_channels = 16;
  std::size_t num_classes = 12;
  OpSet op_set = OpSet::Nas1;
};

inline void validate(const SupernetConfig& cfg) {
  CELLSEARCH_REQUIRE(cfg.num_cells >= 1, "supernet: num_cells must be >= 1");
  CELLSEARCH_REQUIRE(cfg.init_channels >= 1, "supernet: init_channels must be >= 1");
  CELLSEARCH_REQUIRE(cfg.num_classes >= 2, "supernet: num_classes must be >= 2");
}

/// Architecture logits: one kEdgesPerCell x |O| matrix per cell type.
template <typename T>
struct ArchParams {
  OpSet op_set = OpSet::Nas1;
  Tensor<T> normal;
  Tensor<T> reduce;

  std::size_t num_ops() const { return op_set_kinds(op_set).size(); }
  std::vector<Tensor<T>> tensors() const { return {normal, reduce}; }
  std::size_t size() const { return normal.numel() + reduce.numel(); }
};

/// Zero-mean Gaussian logits with sigma 1e-3: a near-uniform initial mixture.
template <typename T>
ArchParams<T> init_arch_params(OpSet op_set, Rng& rng) {
  const std::size_t k = op_set_kinds(op_set).size();
  std::normal_distribution<double> dist(0.0, 1e-3);
  auto draw = [&] {
    std::vector<T> v(kEdgesPerCell * k);
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>::from({kEdgesPerCell, k}, std::move(v), true);
  };
  ArchParams<T> a;
  a.op_set = op_set;
  a.normal = draw();
  a.reduce = draw();
  return a;
}

/// Shannon entropy (nats) of softmax(row) for every row of a logit matrix.
template <typename T>
std::vector<double> row_entropies(const Tensor<T>& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.numel() / k;
  std::vector<double> out(rows);
  auto v = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(v[r * k + j]));
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(v[r * k + j]) - mx);
    double h = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(v[r * k + j]) - mx) / z;
      if (p > 0) h -= p * std::log(p);
    }
    out[r] = h;
  }
  return out;
}

template <typename T>
double mean_row_entropy(const ArchParams<T>& a) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& m : a.tensors())
    for (double h : row_entropies(m)) {
      total += h;
      ++count;
    }
  return total / static_cast<double>(count);
}

/// Blend with already-normalized weights.
template <typename T>
Tensor<T> mixed_edge_blend(const Tensor<T>& x, const Tensor<T>& weights, std::span<const OpPtr<T>> ops,
                           Mode mode) {
  CELLSEARCH_REQUIRE(weights.numel() == ops.size(),
                     "mixed edge: " << weights.numel() << " weights for " << ops.size() << " ops");
  std::vector<Tensor<T>> outs;
  outs.reserve(ops.size());
  for (const auto& op : ops) outs.push_back(op->forward(x, mode));
  return weighted_sum(outs, weights);
}

/// sum_o softmax(alpha_row)[o] * o(x)
template <typename T>
Tensor<T> mixed_edge_forward(const Tensor<T>& x, const Tensor<T>& alpha_row,
                             std::span<const OpPtr<T>> ops, Mode mode) {
  CELLSEARCH_REQUIRE(alpha_row.numel() == ops.size(),
                     "mixed_edge_forward: " << alpha_row.numel() << " weights for " << ops.size() << " ops");
  return mixed_edge_blend(x, softmax_rows(alpha_row), ops, mode);
}

template <typename T>
class MixedEdge final : public Module<T> {
 public:
  MixedEdge(OpSet op_set, std::size_t channels, std::size_t stride, Rng& rng) {
    for (OpKind k : op_set_kinds(op_set)) ops_.push_back(build_op<T>(k, channels, stride, rng));
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& weights, Mode mode) const {
    return mixed_edge_blend<T>(x, weights, ops_, mode);
  }

  std::span<const OpPtr<T>> ops() const { return ops_; }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    for (const auto& op : ops_) op->collect_state(join_name(prefix, std::string(op_name(op->kind()))), out);
  }

 private:
  std::vector<OpPtr<T>> ops_;
};

template <typename T>
class SearchCell final : public Module<T> {
 public:
  SearchCell(const CellSpec& spec, OpSet op_set, Rng& rng) : spec_(spec), pre_(spec, rng) {
    for (std::size_t node = kCellInputs; node < kCellInputs + kIntermediateNodes; ++node)
      for (std::size_t pred = 0; pred < node; ++pred) {
        const std::size_t stride = spec.reduction && pred < kCellInputs ? 2 : 1;
        edges_.emplace_back(op_set, spec.channels, stride, rng);
      }
  }

  /// `weights` is the softmaxed kEdgesPerCell x |O| matrix for this cell type.
  Tensor<T> forward(const Tensor<T>& s0, const Tensor<T>& s1, const Tensor<T>& weights, Mode mode) const {
    auto [a, b] = pre_.forward(s0, s1, mode);
    std::vector<Tensor<T>> states{a, b};
    for (std::size_t node = kCellInputs; node < kCellInputs + kIntermediateNodes; ++node) {
      Tensor<T> acc;
      for (std::size_t pred = 0; pred < node; ++pred) {
        const std::size_t e = edge_index(node, pred);
        Tensor<T> y = edges_[e].forward(states[pred], row(weights, e), mode);
        acc = acc.defined() ? add(acc, y) : y;
      }
      states.push_back(acc);
    }
    return concat_channels(std::vector<Tensor<T>>(states.begin() + kCellInputs, states.end()));
  }

  const CellSpec& spec() const { return spec_; }
  const MixedEdge<T>& edge(std::size_t e) const { return edges_.at(e); }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    pre_.collect_state(prefix, out);
    for (std::size_t e = 0; e < edges_.size(); ++e)
      edges_[e].collect_state(join_name(prefix, "edge" + std::to_string(e)), out);
  }

 private:
  CellSpec spec_;
  InputPreprocess<T> pre_;
  std::vector<MixedEdge<T>> edges_;
};

template <typename T>
class SearchNetwork final : public Module<T> {
 public:
  SearchNetwork(const SupernetConfig& cfg, Rng& rng)
      : cfg_((validate(cfg), cfg)), head_(cfg.init_channels, rng), specs_(plan_cells(cfg.num_cells, cfg.init_channels)),
        classifier_(final_channels(specs_), cfg.num_classes, rng) {
    for (const auto& s : specs_) cells_.emplace_back(s, cfg.op_set, rng);
    arch_ = init_arch_params<T>(cfg.op_set, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) const {
    CELLSEARCH_REQUIRE(x.ndim() == 4 && x.dim(1) == 1, "supernet: input must be N x 1 x H x W, got "
                                                           << shape_str(x.shape()));
    Tensor<T> w_normal = softmax_rows(arch_.normal);
    Tensor<T> w_reduce = softmax_rows(arch_.reduce);
    Tensor<T> s0 = head_.forward(x, mode);
    Tensor<T> s1 = s0;
    for (const auto& cell : cells_) {
      Tensor<T> next = cell.forward(s0, s1, cell.spec().reduction ? w_reduce : w_normal, mode);
      s0 = s1;
      s1 = next;
    }
    return classifier_.forward(s1);
  }

  /// Model weights w (everything except the architecture logits).
  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    head_.collect_state(join_name(prefix, "head"), out);
    for (std::size_t i = 0; i < cells_.size(); ++i)
      cells_[i].collect_state(join_name(prefix, "cell" + std::to_string(i)), out);
    classifier_.collect_state(join_name(prefix, "classifier"), out);
  }

  StateList<T> arch_state() const {
    return {{"alpha.normal", arch_.normal, StateKind::Parameter},
            {"alpha.reduce", arch_.reduce, StateKind::Parameter}};
  }

  ArchParams<T>& arch() { return arch_; }
  const ArchParams<T>& arch() const { return arch_; }
  const SupernetConfig& config() const { return cfg_; }
  const std::vector<SearchCell<T>>& cells() const { return cells_; }
  const std::vector<CellSpec>& cell_specs() const { return specs_; }

 private:
  SupernetConfig cfg_;
  Head<T> head_;
  std::vector<CellSpec> specs_;
  std::vector<SearchCell<T>> cells_;
  Classifier<T> classifier_;
  ArchParams<T> arch_;
};

}  // namespace cellsearch
