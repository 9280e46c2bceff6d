// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Raw loops behind the differentiable ops. Everything here works on flat
// row-major buffers and accumulates (+=) into its output.

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace cellsearch::kernels {

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// Output indices o in [lo, hi) for which o*stride + offset lands in [0, extent).
struct ValidRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

inline ValidRange valid_range(long offset, long stride, long extent, long out) {
  long lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  long hi = 0;
  if (extent - 1 - offset >= 0) hi = (extent - 1 - offset) / stride + 1;
  hi = std::min(hi, out);
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvGeometry {
  std::size_t channels, height, width;  // input plane block
  std::size_t kh, kw;
  std::size_t stride, padding, dilation;
  std::size_t out_h, out_w;
};

inline long row_base(const ConvGeometry& g, std::size_t oh, long off_h) {
  return (static_cast<long>(oh * g.stride) + off_h) * static_cast<long>(g.width);
}

// col[(c*kh + i)*kw + j][oh*out_w + ow] = in[c][oh*s - p + i*d][ow*s - p + j*d]
template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col) {
  const std::size_t plane = g.out_h * g.out_w;
  std::fill(col, col + g.channels * g.kh * g.kw * plane, T(0));
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* src = in + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      const long off_h = static_cast<long>(i * g.dilation) - static_cast<long>(g.padding);
      const ValidRange rh = valid_range(off_h, g.stride, g.height, g.out_h);
      for (std::size_t j = 0; j < g.kw; ++j) {
        const long off_w = static_cast<long>(j * g.dilation) - static_cast<long>(g.padding);
        const ValidRange rw = valid_range(off_w, g.stride, g.width, g.out_w);
        T* dst = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
          const T* srow = src + row_base(g, oh, off_h);
          T* drow = dst + oh * g.out_w;
          for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
            drow[ow] = srow[static_cast<long>(ow * g.stride) + off_w];
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col back into in (accumulating).
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* in) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* dst = in + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      const long off_h = static_cast<long>(i * g.dilation) - static_cast<long>(g.padding);
      const ValidRange rh = valid_range(off_h, g.stride, g.height, g.out_h);
      for (std::size_t j = 0; j < g.kw; ++j) {
        const long off_w = static_cast<long>(j * g.dilation) - static_cast<long>(g.padding);
        const ValidRange rw = valid_range(off_w, g.stride, g.width, g.out_w);
        const T* src = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
          T* drow = dst + row_base(g, oh, off_h);
          const T* srow = src + oh * g.out_w;
          for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
            drow[static_cast<long>(ow * g.stride) + off_w] += srow[ow];
        }
      }
    }
  }
}

// Single-channel correlation: out[oh][ow] += sum_ij w[i][j] * in[..]
template <typename T>
void depthwise_plane_forward(const ConvGeometry& g, const T* in, const T* w, T* out) {
  for (std::size_t i = 0; i < g.kh; ++i) {
    const long off_h = static_cast<long>(i * g.dilation) - static_cast<long>(g.padding);
    const ValidRange rh = valid_range(off_h, g.stride, g.height, g.out_h);
    for (std::size_t j = 0; j < g.kw; ++j) {
      const long off_w = static_cast<long>(j * g.dilation) - static_cast<long>(g.padding);
      const ValidRange rw = valid_range(off_w, g.stride, g.width, g.out_w);
      const T wv = w[i * g.kw + j];
      for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
        const T* srow = in + row_base(g, oh, off_h);
        T* drow = out + oh * g.out_w;
        if (g.stride == 1) {
#pragma omp simd
          for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) drow[ow] += wv * srow[static_cast<long>(ow) + off_w];
        } else {
          for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
            drow[ow] += wv * srow[static_cast<long>(ow * g.stride) + off_w];
        }
      }
    }
  }
}

template <typename T>
void depthwise_plane_backward(const ConvGeometry& g, const T* in, const T* w,
                              const T* dout, T* din, T* dw) {
  for (std::size_t i = 0; i < g.kh; ++i) {
    const long off_h = static_cast<long>(i * g.dilation) - static_cast<long>(g.padding);
    const ValidRange rh = valid_range(off_h, g.stride, g.height, g.out_h);
    for (std::size_t j = 0; j < g.kw; ++j) {
      const long off_w = static_cast<long>(j * g.dilation) - static_cast<long>(g.padding);
      const ValidRange rw = valid_range(off_w, g.stride, g.width, g.out_w);
      const T wv = w[i * g.kw + j];
      T acc = T(0);
      for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
        const long base = row_base(g, oh, off_h);
        const T* grow = dout + oh * g.out_w;
        if (din) {
          T* xrow = din + base;
          for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
            xrow[static_cast<long>(ow * g.stride) + off_w] += wv * grow[ow];
        }
        if (dw) {
          const T* srow = in + base;
          if (g.stride == 1) {
#pragma omp simd reduction(+ : acc)
            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
              acc += grow[ow] * srow[static_cast<long>(ow) + off_w];
          } else {
            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
              acc += grow[ow] * srow[static_cast<long>(ow * g.stride) + off_w];
          }
        }
      }
      if (dw) dw[i * g.kw + j] += acc;
    }
  }
}

}  // namespace cellsearch::kernels
