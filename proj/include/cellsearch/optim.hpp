// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// First-order optimizers and the learning-rate schedule.

#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "cellsearch/tensor.hpp"

namespace cellsearch {

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / total)) / 2
inline double cosine_lr(std::size_t epoch, std::size_t total, double lr_max, double lr_min = 0.0) {
  CELLSEARCH_REQUIRE(total >= 1 && epoch <= total, "cosine_lr: epoch " << epoch << " outside [0, " << total << "]");
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

/// L2 norm over the gradients of every tensor in `params`.
template <typename T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
  double total = 0;
  for (const auto& p : params)
    if (p.has_grad())
      for (T g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(total);
}

/// Rescales all gradients so their global norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : params)
      if (p.has_grad())
        for (T& g : p.mutable_grad()) g *= factor;
  }
  return norm;
}

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 3e-4;
};

/// v <- momentum * v + (g + wd * p);  p <- p - lr * v
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, SgdOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
  }

  void step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto p = params_[k].mutable_values();
      auto& v = velocity_[k];
      const bool has = params_[k].has_grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = (has ? static_cast<double>(params_[k].grad()[i]) : 0.0) + opt_.weight_decay * p[i];
        v[i] = static_cast<T>(opt_.momentum * v[i] + g);
        p[i] = static_cast<T>(p[i] - lr * v[i]);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::vector<Tensor<T>>& params() { return params_; }
  std::vector<std::vector<T>>& velocity() { return velocity_; }

 private:
  std::vector<Tensor<T>> params_;
  SgdOptions opt_;
  std::vector<std::vector<T>> velocity_;
};

struct AdamOptions {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double weight_decay = 1e-3;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam; weight decay enters as an L2 term on the gradient.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto p = params_[k].mutable_values();
      const bool has = params_[k].has_grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = (has ? static_cast<double>(params_[k].grad()[i]) : 0.0) + opt_.weight_decay * p[i];
        m_[k][i] = opt_.beta1 * m_[k][i] + (1 - opt_.beta1) * g;
        v_[k][i] = opt_.beta2 * v_[k][i] + (1 - opt_.beta2) * g * g;
        const double m_hat = m_[k][i] / c1;
        const double v_hat = v_[k][i] / c2;
        p[i] = static_cast<T>(p[i] - lr * m_hat / (std::sqrt(v_hat) + opt_.epsilon));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t steps() const { return t_; }
  void set_steps(std::size_t t) { t_ = t; }
  std::vector<std::vector<double>>& first_moment() { return m_; }
  std::vector<std::vector<double>>& second_moment() { return v_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace cellsearch
