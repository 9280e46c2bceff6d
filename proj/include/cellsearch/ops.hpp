// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cellsearch/kernels.hpp"
#include "cellsearch/tensor.hpp"

namespace cellsearch {

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  CELLSEARCH_REQUIRE(a.shape() == b.shape(), "add: shape mismatch "
                                                 << shape_str(a.shape()) << " vs "
                                                 << shape_str(b.shape()));
  std::vector<T> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  CELLSEARCH_REQUIRE(a.shape() == b.shape(), "mul: shape mismatch "
                                                 << shape_str(a.shape()) << " vs "
                                                 << shape_str(b.shape()));
  std::vector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    Node<T>& y = *self.inputs[1];
    if (x.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i] * y.value[i];
    if (y.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) y.grad[i] += self.grad[i] * x.value[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (x.value[i] > T(0)) x.grad[i] += self.grad[i];
  });
}

/// Sum of all elements, as a 1-element tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.values()) total += v;
  return make_result<T>({1}, {total}, {a}, [](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    const T g = self.grad[0];
    for (auto& v : x.grad) v += g;
  });
}

/// Constant zero tensor; carries no graph history.
template <typename T>
Tensor<T> zeros(const Shape& shape) {
  return Tensor<T>::zeros(shape);
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, const Conv2dOptions& o) {
  const long span = static_cast<long>(o.dilation * (k - 1) + 1);
  const long padded = static_cast<long>(in + 2 * o.padding);
  CELLSEARCH_REQUIRE(padded >= span, "conv2d: kernel extent " << span
                                                               << " exceeds padded input " << padded);
  return static_cast<std::size_t>((padded - span) / static_cast<long>(o.stride)) + 1;
}

/// 2-D cross-correlation, NCHW input, OIKhKw kernel, no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Conv2dOptions opt = {}) {
  CELLSEARCH_REQUIRE(input.ndim() == 4, "conv2d: input must be NCHW, got " << shape_str(input.shape()));
  CELLSEARCH_REQUIRE(kernel.ndim() == 4, "conv2d: kernel must be OIKhKw, got " << shape_str(kernel.shape()));
  CELLSEARCH_REQUIRE(opt.stride >= 1 && opt.dilation >= 1 && opt.groups >= 1, "conv2d: bad options");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = kernel.dim(0), ci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  CELLSEARCH_REQUIRE(c % opt.groups == 0 && o % opt.groups == 0,
                     "conv2d: channels " << c << "->" << o << " not divisible by groups " << opt.groups);
  CELLSEARCH_REQUIRE(ci == c / opt.groups, "conv2d: kernel expects " << ci << " input channels per group, input has "
                                                                      << c / opt.groups);
  const std::size_t oh = conv_out_extent(h, kh, opt), ow = conv_out_extent(w, kw, opt);
  const std::size_t cg = c / opt.groups, og = o / opt.groups;
  const std::size_t plane = oh * ow, in_plane = h * w;
  const kernels::ConvGeometry geo{cg, h, w, kh, kw, opt.stride, opt.padding, opt.dilation, oh, ow};
  const bool depthwise = cg == 1 && og == 1;
  const bool pointwise = kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;
  const std::size_t patch = cg * kh * kw;

  std::vector<T> out(n * o * plane, T(0));
  const T* x = input.values().data();
  const T* k = kernel.values().data();
  std::vector<T> col;
  if (!depthwise && !pointwise) col.resize(patch * plane);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t g = 0; g < opt.groups; ++g) {
      const T* xin = x + (b * c + g * cg) * in_plane;
      T* y = out.data() + (b * o + g * og) * plane;
      const T* kg = k + g * og * patch;
      if (depthwise) {
        kernels::depthwise_plane_forward(geo, xin, kg, y);
      } else if (pointwise) {
        kernels::gemm_nn(og, plane, patch, kg, xin, y);
      } else {
        kernels::im2col(geo, xin, col.data());
        kernels::gemm_nn(og, plane, patch, kg, col.data(), y);
      }
    }
  }

  Shape out_shape{n, o, oh, ow};
  return make_result<T>(out_shape, std::move(out), {input, kernel},
                        [=](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& kn = *self.inputs[1];
    const T* dy = self.grad.data();
    T* dx = xn.requires_grad ? xn.grad.data() : nullptr;
    T* dk = kn.requires_grad ? kn.grad.data() : nullptr;
    std::vector<T> colbuf;
    std::vector<T> dcol;
    if (!depthwise && !pointwise) {
      colbuf.resize(patch * plane);
      dcol.resize(patch * plane);
    }
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t g = 0; g < opt.groups; ++g) {
        const T* xin = xn.value.data() + (b * c + g * cg) * in_plane;
        const T* kg = kn.value.data() + g * og * patch;
        const T* dyg = dy + (b * o + g * og) * plane;
        T* dxin = dx ? dx + (b * c + g * cg) * in_plane : nullptr;
        T* dkg = dk ? dk + g * og * patch : nullptr;
        if (depthwise) {
          kernels::depthwise_plane_backward(geo, xin, kg, dyg, dxin, dkg);
        } else if (pointwise) {
          if (dkg) kernels::gemm_nt(og, patch, plane, dyg, xin, dkg);
          if (dxin) kernels::gemm_tn(patch, plane, og, kg, dyg, dxin);
        } else {
          if (dkg) {
            kernels::im2col(geo, xin, colbuf.data());
            kernels::gemm_nt(og, patch, plane, dyg, colbuf.data(), dkg);
          }
          if (dxin) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            kernels::gemm_tn(patch, plane, og, kg, dyg, dcol.data());
            kernels::col2im(geo, dcol.data(), dxin);
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

enum class Mode { Train, Eval };

template <typename T>
struct BatchNormConfig {
  T epsilon = T(1e-5);
  T momentum = T(0.1);
};

/// Per-channel batch normalization over N, H, W. In train mode batch
/// statistics are used and the running buffers are updated in place.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::span<T> running_mean, std::span<T> running_var, Mode mode,
                     BatchNormConfig<T> cfg = {}) {
  CELLSEARCH_REQUIRE(input.ndim() == 4, "batch_norm: input must be NCHW, got " << shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  CELLSEARCH_REQUIRE(gamma.numel() == c && beta.numel() == c, "batch_norm: gamma/beta length must be " << c);
  CELLSEARCH_REQUIRE(running_mean.size() == c && running_var.size() == c,
                     "batch_norm: running stats length must be " << c);
  CELLSEARCH_REQUIRE(cfg.epsilon > T(0), "batch_norm: epsilon must be positive");
  const std::size_t m = n * hw;
  const T* x = input.values().data();
  std::vector<T> mean(c), invstd(c);
  if (mode == Mode::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s = T(0);
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(m);
      T ss = T(0);
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const T var = ss / static_cast<T>(m);
      mean[ch] = mu;
      invstd[ch] = T(1) / std::sqrt(var + cfg.epsilon);
      const T unbiased = m > 1 ? ss / static_cast<T>(m - 1) : var;
      running_mean[ch] = (T(1) - cfg.momentum) * running_mean[ch] + cfg.momentum * mu;
      running_var[ch] = (T(1) - cfg.momentum) * running_var[ch] + cfg.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      invstd[ch] = T(1) / std::sqrt(running_var[ch] + cfg.epsilon);
    }
  }
  std::vector<T> out(input.numel());
  const T* gv = gamma.values().data();
  const T* bv = beta.values().data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * hw;
      const T a = gv[ch] * invstd[ch];
      const T shift = bv[ch] - a * mean[ch];
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = a * x[base + i] + shift;
    }
  const bool training = mode == Mode::Train;
  return make_result<T>(input.shape(), std::move(out), {input, gamma, beta},
                        [n, c, hw, m, training, mean = std::move(mean),
                         invstd = std::move(invstd)](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& gn = *self.inputs[1];
    Node<T>& bn = *self.inputs[2];
    const T* dy = self.grad.data();
    const T* xv = xn.value.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      T dbeta = T(0), dgamma = T(0);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t base = (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const T xhat = (xv[base + i] - mean[ch]) * invstd[ch];
          dbeta += dy[base + i];
          dgamma += dy[base + i] * xhat;
        }
      }
      if (gn.requires_grad) gn.grad[ch] += dgamma;
      if (bn.requires_grad) bn.grad[ch] += dbeta;
      if (!xn.requires_grad) continue;
      const T g = gn.value[ch];
      if (training) {
        const T k = g * invstd[ch] / static_cast<T>(m);
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t base = (b * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const T xhat = (xv[base + i] - mean[ch]) * invstd[ch];
            xn.grad[base + i] += k * (static_cast<T>(m) * dy[base + i] - dbeta - xhat * dgamma);
          }
        }
      } else {
        const T k = g * invstd[ch];
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t base = (b * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) xn.grad[base + i] += k * dy[base + i];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

struct Pool2dOptions {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
};

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, Pool2dOptions opt = {}) {
  CELLSEARCH_REQUIRE(input.ndim() == 4, "max_pool2d: input must be NCHW");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Conv2dOptions co{opt.stride, opt.padding, 1, 1};
  const std::size_t oh = conv_out_extent(h, opt.kernel, co), ow = conv_out_extent(w, opt.kernel, co);
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::uint32_t> argmax(out.size());
  const T* x = input.values().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* plane = x + p * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        std::uint32_t where = 0;
        for (std::size_t a = 0; a < opt.kernel; ++a) {
          const long r = static_cast<long>(i * opt.stride + a) - static_cast<long>(opt.padding);
          if (r < 0 || r >= static_cast<long>(h)) continue;
          for (std::size_t b = 0; b < opt.kernel; ++b) {
            const long s = static_cast<long>(j * opt.stride + b) - static_cast<long>(opt.padding);
            if (s < 0 || s >= static_cast<long>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(r) * w + static_cast<std::size_t>(s);
            if (plane[idx] > best) {
              best = plane[idx];
              where = static_cast<std::uint32_t>(idx);
            }
          }
        }
        out[(p * oh + i) * ow + j] = best;
        argmax[(p * oh + i) * ow + j] = where;
      }
  }
  const std::size_t in_plane = h * w, out_plane = oh * ow;
  return make_result<T>({n, c, oh, ow}, std::move(out), {input},
                        [argmax = std::move(argmax), in_plane, out_plane](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      xn.grad[(i / out_plane) * in_plane + argmax[i]] += self.grad[i];
  });
}

/// Average pooling whose divisor counts only in-bounds cells.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, Pool2dOptions opt = {}) {
  CELLSEARCH_REQUIRE(input.ndim() == 4, "avg_pool2d: input must be NCHW");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Conv2dOptions co{opt.stride, opt.padding, 1, 1};
  const std::size_t oh = conv_out_extent(h, opt.kernel, co), ow = conv_out_extent(w, opt.kernel, co);
  auto window = [=](std::size_t i, std::size_t j) {
    const long r0 = std::max<long>(0, static_cast<long>(i * opt.stride) - static_cast<long>(opt.padding));
    const long r1 = std::min<long>(static_cast<long>(h), static_cast<long>(i * opt.stride + opt.kernel) -
                                                             static_cast<long>(opt.padding));
    const long s0 = std::max<long>(0, static_cast<long>(j * opt.stride) - static_cast<long>(opt.padding));
    const long s1 = std::min<long>(static_cast<long>(w), static_cast<long>(j * opt.stride + opt.kernel) -
                                                             static_cast<long>(opt.padding));
    return std::array<long, 4>{r0, r1, s0, s1};
  };
  std::vector<T> out(n * c * oh * ow);
  const T* x = input.values().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* plane = x + p * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const auto [r0, r1, s0, s1] = window(i, j);
        T acc = T(0);
        for (long r = r0; r < r1; ++r)
          for (long s = s0; s < s1; ++s) acc += plane[r * static_cast<long>(w) + s];
        out[(p * oh + i) * ow + j] = acc / static_cast<T>((r1 - r0) * (s1 - s0));
      }
  }
  return make_result<T>({n, c, oh, ow}, std::move(out), {input},
                        [=](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    for (std::size_t p = 0; p < n * c; ++p) {
      T* dplane = xn.grad.data() + p * h * w;
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const auto [r0, r1, s0, s1] = window(i, j);
          const T g = self.grad[(p * oh + i) * ow + j] / static_cast<T>((r1 - r0) * (s1 - s0));
          for (long r = r0; r < r1; ++r)
            for (long s = s0; s < s1; ++s) dplane[r * static_cast<long>(w) + s] += g;
        }
    }
  });
}

/// NCHW -> NC, mean over H and W.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  CELLSEARCH_REQUIRE(input.ndim() == 4, "global_avg_pool: input must be NCHW");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  std::vector<T> out(n * c);
  const T* x = input.values().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    T acc = T(0);
    for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
    out[p] = acc / static_cast<T>(hw);
  }
  return make_result<T>({n, c}, std::move(out), {input}, [hw](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    for (std::size_t p = 0; p < self.grad.size(); ++p) {
      const T g = self.grad[p] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) xn.grad[p * hw + i] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

/// Concatenates NCHW tensors along C.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  CELLSEARCH_REQUIRE(!parts.empty(), "concat_channels: no inputs");
  const Shape& ref = parts[0].shape();
  CELLSEARCH_REQUIRE(ref.size() == 4, "concat_channels: inputs must be NCHW");
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    CELLSEARCH_REQUIRE(s.size() == 4 && s[0] == ref[0] && s[2] == ref[2] && s[3] == ref[3],
                       "concat_channels: shape mismatch " << shape_str(ref) << " vs " << shape_str(s));
    total_c += s[1];
  }
  const std::size_t n = ref[0], hw = ref[2] * ref[3];
  std::vector<T> out(n * total_c * hw);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pc = p.dim(1);
    const T* src = p.values().data();
    for (std::size_t b = 0; b < n; ++b)
      std::copy(src + b * pc * hw, src + (b + 1) * pc * hw, out.data() + (b * total_c + off) * hw);
    off += pc;
  }
  return make_result<T>({n, total_c, ref[2], ref[3]}, std::move(out), parts,
                        [n, hw, total_c, offsets = std::move(offsets)](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node<T>& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      const std::size_t pc = in.shape[1];
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = self.grad.data() + (b * total_c + offsets[k]) * hw;
        T* dst = in.grad.data() + b * pc * hw;
        for (std::size_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
      }
    }
  });
}

/// out[n,c,h,w] = in[n,c,h+dy,w+dx], zero where the source falls outside.
template <typename T>
Tensor<T> spatial_shift(const Tensor<T>& input, std::size_t dy, std::size_t dx) {
  CELLSEARCH_REQUIRE(input.ndim() == 4, "spatial_shift: input must be NCHW");
  const std::size_t nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  std::vector<T> out(input.numel(), T(0));
  const T* x = input.values().data();
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i + dy < h; ++i)
      for (std::size_t j = 0; j + dx < w; ++j)
        out[(p * h + i) * w + j] = x[(p * h + i + dy) * w + j + dx];
  return make_result<T>(input.shape(), std::move(out), {input}, [=](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    for (std::size_t p = 0; p < nc; ++p)
      for (std::size_t i = 0; i + dy < h; ++i)
        for (std::size_t j = 0; j + dx < w; ++j)
          xn.grad[(p * h + i + dy) * w + j + dx] += self.grad[(p * h + i) * w + j];
  });
}

// ---------------------------------------------------------------------------
// Dense / classifier
// ---------------------------------------------------------------------------

/// x[N x C] * weight[K x C]^T + bias[K]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  CELLSEARCH_REQUIRE(x.ndim() == 2 && weight.ndim() == 2, "linear: expects NC input and KC weight");
  const std::size_t n = x.dim(0), c = x.dim(1), k = weight.dim(0);
  CELLSEARCH_REQUIRE(weight.dim(1) == c, "linear: weight expects " << weight.dim(1) << " features, input has " << c);
  CELLSEARCH_REQUIRE(bias.numel() == k, "linear: bias length must be " << k);
  std::vector<T> out(n * k);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < k; ++j) out[b * k + j] = bias.values()[j];
  kernels::gemm_nt(n, k, c, x.values().data(), weight.values().data(), out.data());
  return make_result<T>({n, k}, std::move(out), {x, weight, bias}, [n, c, k](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    Node<T>& bn = *self.inputs[2];
    const T* dy = self.grad.data();
    if (xn.requires_grad) kernels::gemm_nn(n, c, k, dy, wn.value.data(), xn.grad.data());
    if (wn.requires_grad) kernels::gemm_tn(k, c, n, dy, xn.value.data(), wn.grad.data());
    if (bn.requires_grad)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t j = 0; j < k; ++j) bn.grad[j] += dy[b * k + j];
  });
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  CELLSEARCH_REQUIRE(logits.ndim() == 2, "softmax_cross_entropy: logits must be N x K");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  CELLSEARCH_REQUIRE(labels.size() == n, "softmax_cross_entropy: " << labels.size() << " labels for batch of " << n);
  CELLSEARCH_REQUIRE(n > 0, "softmax_cross_entropy: empty batch");
  std::vector<T> probs(n * k);
  std::vector<int> lab(labels.begin(), labels.end());
  T loss = T(0);
  const T* z = logits.values().data();
  for (std::size_t b = 0; b < n; ++b) {
    CELLSEARCH_REQUIRE(lab[b] >= 0 && static_cast<std::size_t>(lab[b]) < k,
                       "softmax_cross_entropy: label " << lab[b] << " outside [0, " << k << ")");
    const T* row = z + b * k;
    const T mx = *std::max_element(row, row + k);
    T denom = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      probs[b * k + j] = std::exp(row[j] - mx);
      denom += probs[b * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[b * k + j] /= denom;
    loss += -(row[lab[b]] - mx - std::log(denom));
  }
  loss /= static_cast<T>(n);
  return make_result<T>({1}, {loss}, {logits},
                        [n, k, probs = std::move(probs), lab = std::move(lab)](Node<T>& self) {
    Node<T>& zn = *self.inputs[0];
    const T g = self.grad[0] / static_cast<T>(n);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < k; ++j) {
        const T onehot = static_cast<int>(j) == lab[b] ? T(1) : T(0);
        zn.grad[b * k + j] += g * (probs[b * k + j] - onehot);
      }
  });
}

// ---------------------------------------------------------------------------
// Architecture-weight plumbing
// ---------------------------------------------------------------------------

/// Softmax along the last axis of a 1-D or 2-D tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& m) {
  CELLSEARCH_REQUIRE(m.ndim() == 1 || m.ndim() == 2, "softmax_rows: expects 1-D or 2-D input");
  const std::size_t k = m.shape().back();
  const std::size_t rows = m.numel() / k;
  std::vector<T> out(m.numel());
  const T* v = m.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = v + r * k;
    const T mx = *std::max_element(row, row + k);
    T denom = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      out[r * k + j] = std::exp(row[j] - mx);
      denom += out[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= denom;
  }
  return make_result<T>(m.shape(), out, {m}, [rows, k, p = out](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t j = 0; j < k; ++j) dot += self.grad[r * k + j] * p[r * k + j];
      for (std::size_t j = 0; j < k; ++j)
        xn.grad[r * k + j] += p[r * k + j] * (self.grad[r * k + j] - dot);
    }
  });
}

/// Row r of a 2-D tensor as a 1-D tensor.
template <typename T>
Tensor<T> row(const Tensor<T>& m, std::size_t r) {
  CELLSEARCH_REQUIRE(m.ndim() == 2 && r < m.dim(0), "row: index " << r << " outside " << shape_str(m.shape()));
  const std::size_t k = m.dim(1);
  std::vector<T> out(m.values().begin() + r * k, m.values().begin() + (r + 1) * k);
  return make_result<T>({k}, std::move(out), {m}, [r, k](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    for (std::size_t j = 0; j < k; ++j) xn.grad[r * k + j] += self.grad[j];
  });
}

/// sum_i weights[i] * xs[i] for same-shape xs and a 1-D weight vector.
template <typename T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& xs, const Tensor<T>& weights) {
  CELLSEARCH_REQUIRE(!xs.empty(), "weighted_sum: no inputs");
  CELLSEARCH_REQUIRE(weights.numel() == xs.size(),
                     "weighted_sum: " << weights.numel() << " weights for " << xs.size() << " inputs");
  const Shape& shape = xs[0].shape();
  std::vector<T> out(xs[0].numel(), T(0));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CELLSEARCH_REQUIRE(xs[i].shape() == shape, "weighted_sum: shape mismatch " << shape_str(shape) << " vs "
                                                                                << shape_str(xs[i].shape()));
    const T wi = weights.values()[i];
    const T* v = xs[i].values().data();
#pragma omp simd
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += wi * v[j];
  }
  std::vector<Tensor<T>> inputs(xs);
  inputs.push_back(weights);
  const std::size_t count = xs.size();
  return make_result<T>(shape, std::move(out), std::move(inputs), [count](Node<T>& self) {
    Node<T>& wn = *self.inputs[count];
    const std::size_t len = self.grad.size();
    for (std::size_t i = 0; i < count; ++i) {
      Node<T>& xn = *self.inputs[i];
      if (xn.requires_grad) {
        const T wi = wn.value[i];
        for (std::size_t j = 0; j < len; ++j) xn.grad[j] += wi * self.grad[j];
      }
      if (wn.requires_grad) {
        T dot = T(0);
        for (std::size_t j = 0; j < len; ++j) dot += xn.value[j] * self.grad[j];
        wn.grad[i] += dot;
      }
    }
  });
}

}  // namespace cellsearch
