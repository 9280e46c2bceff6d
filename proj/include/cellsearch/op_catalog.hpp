// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Candidate operations that can sit on a cell edge, plus the two search
// spaces built from them.

#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cellsearch/layers.hpp"

namespace cellsearch {

enum class OpKind {
  Zero,
  Identity,
  MaxPool3,
  AvgPool3,
  DilConv3,
  DilConv5,
  SepConv5,
  SepConv7,
  SepConv9,
  RegConv3,
};

inline constexpr std::array<OpKind, 10> kAllOpKinds{
    OpKind::Zero,     OpKind::Identity, OpKind::MaxPool3, OpKind::AvgPool3, OpKind::DilConv3,
    OpKind::DilConv5, OpKind::SepConv5, OpKind::SepConv7, OpKind::SepConv9, OpKind::RegConv3};

inline std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::Zero: return "zero";
    case OpKind::Identity: return "identity";
    case OpKind::MaxPool3: return "max_pool_3x3";
    case OpKind::AvgPool3: return "avg_pool_3x3";
    case OpKind::DilConv3: return "dil_conv_3x3";
    case OpKind::DilConv5: return "dil_conv_5x5";
    case OpKind::SepConv5: return "sep_conv_5x5";
    case OpKind::SepConv7: return "sep_conv_7x7";
    case OpKind::SepConv9: return "sep_conv_9x9";
    case OpKind::RegConv3: return "conv_3x3";
  }
  throw ContractViolation("op_name: unknown op kind");
}

inline std::optional<OpKind> parse_op_name(std::string_view name) {
  for (OpKind k : kAllOpKinds)
    if (op_name(k) == name) return k;
  return std::nullopt;
}

enum class OpSet { Nas1, Nas2 };

inline std::string_view op_set_name(OpSet s) { return s == OpSet::Nas1 ? "nas1" : "nas2"; }

inline std::optional<OpSet> parse_op_set(std::string_view name) {
  if (name == "nas1") return OpSet::Nas1;
  if (name == "nas2") return OpSet::Nas2;
  return std::nullopt;
}

/// Candidate list in a fixed order; this order is also the tie-break order
/// used when deriving a genotype.
inline const std::vector<OpKind>& op_set_kinds(OpSet s) {
  static const std::vector<OpKind> nas1{OpKind::Zero,     OpKind::MaxPool3, OpKind::AvgPool3,
                                        OpKind::Identity, OpKind::DilConv3, OpKind::DilConv5,
                                        OpKind::SepConv5, OpKind::SepConv7, OpKind::SepConv9};
  static const std::vector<OpKind> nas2{OpKind::Zero,     OpKind::MaxPool3, OpKind::AvgPool3,
                                        OpKind::Identity, OpKind::DilConv3, OpKind::DilConv5,
                                        OpKind::RegConv3};
  return s == OpSet::Nas1 ? nas1 : nas2;
}

inline bool op_set_contains(OpSet s, OpKind k) {
  const auto& kinds = op_set_kinds(s);
  return std::find(kinds.begin(), kinds.end(), k) != kinds.end();
}

/// Trainable floats owned by an op of this kind at `channels` width.
/// Convolutions carry no bias; every BN contributes gamma and beta.
inline std::size_t op_param_count(OpKind kind, std::size_t channels, std::size_t stride = 1) {
  const std::size_t c = channels;
  auto relu_dw_pw_bn = [c](std::size_t k) { return k * k * c + c * c + 2 * c; };
  switch (kind) {
    case OpKind::Zero:
    case OpKind::MaxPool3:
    case OpKind::AvgPool3: return 0;
    case OpKind::Identity: return stride == 1 ? 0 : c * c + 2 * c;
    case OpKind::DilConv3: return relu_dw_pw_bn(3);
    case OpKind::DilConv5: return relu_dw_pw_bn(5);
    case OpKind::SepConv5: return 2 * relu_dw_pw_bn(5);
    case OpKind::SepConv7: return 2 * relu_dw_pw_bn(7);
    case OpKind::SepConv9: return 2 * relu_dw_pw_bn(9);
    case OpKind::RegConv3: return 9 * c * c + 2 * c;
  }
  throw ContractViolation("op_param_count: unknown op kind");
}

/// A block mapping N x C x H x W to N x C x ceil(H/s) x ceil(W/s).
template <typename T>
class CandidateOp : public Module<T> {
 public:
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) const = 0;
  virtual OpKind kind() const = 0;
};

template <typename T>
using OpPtr = std::unique_ptr<CandidateOp<T>>;

inline std::size_t halved(std::size_t extent, std::size_t stride) {
  return (extent + stride - 1) / stride;
}

template <typename T>
class ZeroOp final : public CandidateOp<T> {
 public:
  explicit ZeroOp(std::size_t stride) : stride_(stride) {}
  Tensor<T> forward(const Tensor<T>& x, Mode) const override {
    return zeros<T>({x.dim(0), x.dim(1), halved(x.dim(2), stride_), halved(x.dim(3), stride_)});
  }
  OpKind kind() const override { return OpKind::Zero; }
  void collect_state(const std::string&, StateList<T>&) const override {}

 private:
  std::size_t stride_;
};

template <typename T>
class PoolOp final : public CandidateOp<T> {
 public:
  PoolOp(OpKind kind, std::size_t stride) : kind_(kind), stride_(stride) {}
  Tensor<T> forward(const Tensor<T>& x, Mode) const override {
    const Pool2dOptions opt{3, stride_, 1};
    return kind_ == OpKind::MaxPool3 ? max_pool2d(x, opt) : avg_pool2d(x, opt);
  }
  OpKind kind() const override { return kind_; }
  void collect_state(const std::string&, StateList<T>&) const override {}

 private:
  OpKind kind_;
  std::size_t stride_;
};

/// ReLU -> conv -> BN.
template <typename T>
class ReluConvBn final : public Module<T> {
 public:
  ReluConvBn(std::size_t c_in, std::size_t c_out, std::size_t kernel, Conv2dOptions opt, Rng& rng)
      : conv_(c_in, c_out, kernel, opt, rng), bn_(c_out) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) const {
    return bn_.forward(conv_.forward(relu(x)), mode);
  }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    conv_.collect_state(join_name(prefix, "conv"), out);
    bn_.collect_state(join_name(prefix, "bn"), out);
  }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
};

/// ReLU -> depthwise KxK (optionally dilated) -> pointwise 1x1 -> BN.
template <typename T>
class ReluDwPwBn final : public Module<T> {
 public:
  ReluDwPwBn(std::size_t c, std::size_t kernel, std::size_t stride, std::size_t dilation, Rng& rng)
      : depthwise_(c, c, kernel, Conv2dOptions{stride, dilation * (kernel - 1) / 2, dilation, c}, rng),
        pointwise_(c, c, 1, Conv2dOptions{}, rng),
        bn_(c) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) const {
    return bn_.forward(pointwise_.forward(depthwise_.forward(relu(x))), mode);
  }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    depthwise_.collect_state(join_name(prefix, "depthwise"), out);
    pointwise_.collect_state(join_name(prefix, "pointwise"), out);
    bn_.collect_state(join_name(prefix, "bn"), out);
  }

 private:
  Conv2d<T> depthwise_;
  Conv2d<T> pointwise_;
  BatchNorm2d<T> bn_;
};

/// Halves H and W without dropping half the pixels: ReLU, then two stride-2
/// 1x1 convs on the input and on the input shifted by one pixel, channel
/// concatenated, then BN.
template <typename T>
class FactorizedReduce final : public Module<T> {
 public:
  FactorizedReduce(std::size_t c_in, std::size_t c_out, Rng& rng)
      : first_(c_in, c_out - c_out / 2, 1, Conv2dOptions{2, 0, 1, 1}, rng), bn_(c_out) {
    CELLSEARCH_REQUIRE(c_out >= 1, "FactorizedReduce: needs at least one output channel");
    if (c_out / 2 > 0) second_.emplace(c_in, c_out / 2, 1, Conv2dOptions{2, 0, 1, 1}, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) const {
    Tensor<T> a = relu(x);
    std::vector<Tensor<T>> parts{first_.forward(a)};
    if (second_) parts.push_back(second_->forward(spatial_shift(a, 1, 1)));
    return bn_.forward(parts.size() == 1 ? parts[0] : concat_channels(parts), mode);
  }

  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    first_.collect_state(join_name(prefix, "conv_a"), out);
    if (second_) second_->collect_state(join_name(prefix, "conv_b"), out);
    bn_.collect_state(join_name(prefix, "bn"), out);
  }

 private:
  Conv2d<T> first_;
  std::optional<Conv2d<T>> second_;
  BatchNorm2d<T> bn_;
};

template <typename T>
class IdentityOp final : public CandidateOp<T> {
 public:
  IdentityOp(std::size_t channels, std::size_t stride, Rng& rng) {
    if (stride != 1) reduce_.emplace(channels, channels, rng);
  }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) const override {
    return reduce_ ? reduce_->forward(x, mode) : x;
  }
  OpKind kind() const override { return OpKind::Identity; }
  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    if (reduce_) reduce_->collect_state(join_name(prefix, "reduce"), out);
  }

 private:
  std::optional<FactorizedReduce<T>> reduce_;
};

template <typename T>
class DilConvOp final : public CandidateOp<T> {
 public:
  DilConvOp(OpKind kind, std::size_t channels, std::size_t stride, Rng& rng)
      : kind_(kind), block_(channels, kind == OpKind::DilConv3 ? 3 : 5, stride, 2, rng) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) const override { return block_.forward(x, mode); }
  OpKind kind() const override { return kind_; }
  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    block_.collect_state(prefix, out);
  }

 private:
  OpKind kind_;
  ReluDwPwBn<T> block_;
};

template <typename T>
class SepConvOp final : public CandidateOp<T> {
 public:
  SepConvOp(OpKind kind, std::size_t channels, std::size_t stride, Rng& rng)
      : kind_(kind),
        first_(channels, kernel_of(kind), stride, 1, rng),
        second_(channels, kernel_of(kind), 1, 1, rng) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) const override {
    return second_.forward(first_.forward(x, mode), mode);
  }
  OpKind kind() const override { return kind_; }
  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    first_.collect_state(join_name(prefix, "seq1"), out);
    second_.collect_state(join_name(prefix, "seq2"), out);
  }

 private:
  static std::size_t kernel_of(OpKind k) {
    return k == OpKind::SepConv5 ? 5 : k == OpKind::SepConv7 ? 7 : 9;
  }
  OpKind kind_;
  ReluDwPwBn<T> first_;
  ReluDwPwBn<T> second_;
};

template <typename T>
class RegConvOp final : public CandidateOp<T> {
 public:
  RegConvOp(std::size_t channels, std::size_t stride, Rng& rng)
      : block_(channels, channels, 3, Conv2dOptions{stride, 1, 1, 1}, rng) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode) const override { return block_.forward(x, mode); }
  OpKind kind() const override { return OpKind::RegConv3; }
  void collect_state(const std::string& prefix, StateList<T>& out) const override {
    block_.collect_state(prefix, out);
  }

 private:
  ReluConvBn<T> block_;
};

template <typename T>
OpPtr<T> build_op(OpKind kind, std::size_t channels, std::size_t stride, Rng& rng) {
  CELLSEARCH_REQUIRE(stride == 1 || stride == 2, "build_op: stride must be 1 or 2, got " << stride);
  CELLSEARCH_REQUIRE(channels >= 1, "build_op: channels must be positive");
  switch (kind) {
    case OpKind::Zero: return std::make_unique<ZeroOp<T>>(stride);
    case OpKind::Identity: return std::make_unique<IdentityOp<T>>(channels, stride, rng);
    case OpKind::MaxPool3:
    case OpKind::AvgPool3: return std::make_unique<PoolOp<T>>(kind, stride);
    case OpKind::DilConv3:
    case OpKind::DilConv5: return std::make_unique<DilConvOp<T>>(kind, channels, stride, rng);
    case OpKind::SepConv5:
    case OpKind::SepConv7:
    case OpKind::SepConv9: return std::make_unique<SepConvOp<T>>(kind, channels, stride, rng);
    case OpKind::RegConv3: return std::make_unique<RegConvOp<T>>(channels, stride, rng);
  }
  throw ContractViolation("build_op: unknown op kind " + std::to_string(static_cast<int>(kind)));
}

}  // namespace cellsearch
