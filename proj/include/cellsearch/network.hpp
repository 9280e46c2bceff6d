// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Discrete networks built from a genotype, and their closed-form footprint.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cellsearch/genotype.hpp"

namespace cellsearch {

struct NetworkPlan {
  Genotype genotype;
  std::size_t depth = 6;
  std::size_t init_channels = 16;
  std::size_t num_classes = 12;
};

inline void validate(const NetworkPlan& plan) {
  validate(plan.genotype);
  CELLSEARCH_REQUIRE(plan.depth >= 1, "plan: depth must be >= 1");
  CELLSEARCH_REQUIRE(plan.init_channels >= 1, "plan: init_channels must be >= 1");
  CELLSEARCH_REQUIRE(plan.num_classes >= 2, "plan: num_classes must be >= 2");
}

inline std::size_t edge_stride(const CellSpec& spec, std::size_t pred) {
  return spec.reduction && pred < kCellInputs ? 2 : 1;
}

template <typename T>
class DiscreteCell final : public Module<T> {
 public:
  DiscreteCell(const CellSpec& spec, const CellGenotype& cell, Rng& rng) : spec_(spec), cell_(cell), pre_(spec, rng) {
    for (const auto& e : cell_) ops_.push_back(build_op<T>(e.op, spec.channels, edge_stride(spec, e.pred), rng));
  }

  Tensor<T> forward(const Tensor<T>& s0, const Tensor<T>& s1, Mode mode) const {
    auto [a, b] = pre_.forward(s0, s1, mode);
    std::vector<Tensor<T>> states{a, b};
    for (std::size_t k = 0; k < kIntermediateNodes; ++k) {
      Tensor<T> acc;
      for (std::size_t j = 0; j < kInputsPerNode; ++j) {
        const std::size_t i = k * kInputsPerNode + j;
        Tensor<T> y = ops_[i]->forward(states[cell_[i].pred], mode);
        acc = acc.defined() ? add(acc, y) : y;
      }
      states.push_back(acc);
    }
    return concat_channels(std::vector<Tensor<T>>(states.begin() + kCellInputs, states.end()));
  }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    pre_.collect_state(prefix, out);
    for (std::size_t i = 0; i < ops_.size(); ++i)
      ops_[i]->collect_state(join_name(prefix, "op" + std::to_string(i)), out);
  }

  const CellSpec& spec() const { return spec_; }

 private:
  CellSpec spec_;
  CellGenotype cell_;
  InputPreprocess<T> pre_;
  std::vector<OpPtr<T>> ops_;
};

template <typename T>
class DiscreteNetwork final : public Module<T> {
 public:
  DiscreteNetwork(const NetworkPlan& plan, Rng& rng)
      : plan_((validate(plan), plan)), head_(plan.init_channels, rng),
        specs_(plan_cells(plan.depth, plan.init_channels)),
        classifier_(final_channels(specs_), plan.num_classes, rng) {
    for (const auto& s : specs_)
      cells_.emplace_back(s, s.reduction ? plan.genotype.reduce : plan.genotype.normal, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) const {
    CELLSEARCH_REQUIRE(x.ndim() == 4 && x.dim(1) == 1, "network: input must be N x 1 x H x W, got "
                                                           << shape_str(x.shape()));
    Tensor<T> s0 = head_.forward(x, mode);
    Tensor<T> s1 = s0;
    for (const auto& cell : cells_) {
      Tensor<T> next = cell.forward(s0, s1, mode);
      s0 = s1;
      s1 = next;
    }
    return classifier_.forward(s1);
  }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    head_.collect_state(join_name(prefix, "head"), out);
    for (std::size_t i = 0; i < cells_.size(); ++i)
      cells_[i].collect_state(join_name(prefix, "cell" + std::to_string(i)), out);
    classifier_.collect_state(join_name(prefix, "classifier"), out);
  }

  const NetworkPlan& plan() const { return plan_; }
  const std::vector<CellSpec>& cell_specs() const { return specs_; }

 private:
  NetworkPlan plan_;
  Head<T> head_;
  std::vector<CellSpec> specs_;
  std::vector<DiscreteCell<T>> cells_;
  Classifier<T> classifier_;
};

/// (module name, trainable floats) for head, each cell and the classifier.
inline std::vector<std::pair<std::string, std::size_t>> parameter_breakdown(const NetworkPlan& plan) {
  validate(plan);
  std::vector<std::pair<std::string, std::size_t>> rows;
  rows.emplace_back("head", Head<float>::param_count(plan.init_channels));
  const auto specs = plan_cells(plan.depth, plan.init_channels);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    std::size_t n = InputPreprocess<float>::param_count(s);
    for (const auto& e : s.reduction ? plan.genotype.reduce : plan.genotype.normal)
      n += op_param_count(e.op, s.channels, edge_stride(s, e.pred));
    rows.emplace_back("cell" + std::to_string(i) + (s.reduction ? " (reduce)" : " (normal)"), n);
  }
  rows.emplace_back("classifier", Classifier<float>::param_count(final_channels(specs), plan.num_classes));
  return rows;
}

inline std::size_t count_parameters(const NetworkPlan& plan) {
  std::size_t total = 0;
  for (const auto& [name, n] : parameter_breakdown(plan)) total += n;
  return total;
}

inline std::vector<std::size_t> reduction_positions(std::size_t depth) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < depth; ++i)
    if (is_reduction_position(i)) out.push_back(i);
  return out;
}

}  // namespace cellsearch
