// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cellsearch/ops.hpp"
#include "cellsearch/tensor.hpp"

namespace cellsearch {

using Rng = std::mt19937_64;

enum class StateKind { Parameter, Buffer };

/// Named view of a module's state. Parameters are trainable leaves; buffers
/// (BN running statistics) are persisted but never receive gradients.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  StateKind kind;
};

template <typename T>
using StateList = std::vector<NamedTensor<T>>;

template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect_state(const std::string& prefix, StateList<T>& out) const = 0;

  StateList<T> state(const std::string& prefix = "") const {
    StateList<T> out;
    collect_state(prefix, out);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& s : state())
      if (s.kind == StateKind::Parameter) out.push_back(s.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (auto& p : parameters()) total += p.numel();
    return total;
  }
};

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

/// He-normal init with the given fan-in.
template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
class Conv2d final : public Module<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Conv2dOptions opt,
         Rng& rng)
      : opt_(opt),
        weight_(he_normal<T>({out_channels, in_channels / opt.groups, kernel, kernel},
                             in_channels / opt.groups * kernel * kernel, rng)) {
    CELLSEARCH_REQUIRE(in_channels % opt.groups == 0 && out_channels % opt.groups == 0,
                       "Conv2d: channels not divisible by groups");
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight_, opt_); }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    out.push_back({join_name(prefix, "weight"), weight_, StateKind::Parameter});
  }

  const Tensor<T>& weight() const { return weight_; }
  const Conv2dOptions& options() const { return opt_; }

 private:
  Conv2dOptions opt_;
  Tensor<T> weight_;
};

template <typename T>
class BatchNorm2d final : public Module<T> {
 public:
  explicit BatchNorm2d(std::size_t channels)
      : gamma_(Tensor<T>::full({channels}, T(1), true)),
        beta_(Tensor<T>::zeros({channels}, true)),
        running_mean_(Tensor<T>::zeros({channels})),
        running_var_(Tensor<T>::full({channels}, T(1))) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) const {
    Tensor<T> rm = running_mean_;
    Tensor<T> rv = running_var_;
    return batch_norm(x, gamma_, beta_, rm.mutable_values(), rv.mutable_values(), mode);
  }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    out.push_back({join_name(prefix, "gamma"), gamma_, StateKind::Parameter});
    out.push_back({join_name(prefix, "beta"), beta_, StateKind::Parameter});
    out.push_back({join_name(prefix, "running_mean"), running_mean_, StateKind::Buffer});
    out.push_back({join_name(prefix, "running_var"), running_var_, StateKind::Buffer});
  }

  const Tensor<T>& gamma() const { return gamma_; }
  const Tensor<T>& beta() const { return beta_; }

 private:
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
};

template <typename T>
class Linear final : public Module<T> {
 public:
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng)
      : weight_(Tensor<T>::zeros({out_features, in_features}, true)),
        bias_(Tensor<T>::zeros({out_features}, true)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : weight_.mutable_values()) v = static_cast<T>(dist(rng));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight_, bias_); }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    out.push_back({join_name(prefix, "weight"), weight_, StateKind::Parameter});
    out.push_back({join_name(prefix, "bias"), bias_, StateKind::Parameter});
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_, bias_;
};

}  // namespace cellsearch
