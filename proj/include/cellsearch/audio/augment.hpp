// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Training-time waveform augmentation: background-noise mixing followed by
// a random time shift.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <random>
#include <span>
#include <vector>

#include "cellsearch/audio/wav.hpp"
#include "cellsearch/tensor.hpp"

namespace cellsearch {

struct AugmentConfig {
  double noise_prob = 0.8;
  double noise_scale = 0.1;  // mixing factor is noise_scale * U[0, 1]
  double max_shift_ms = 100.0;
};

/// Every random choice of one augmentation, drawn up front.
struct AugmentDraw {
  bool noise = false;
  std::size_t noise_index = 0;
  std::size_t noise_offset = 0;
  double mix = 0.0;
  double shift_ms = 0.0;
};

/// Draws in a fixed order (gate, file, offset, mix, shift) so one rng
/// stream yields the same augmentation regardless of the clip content.
/// `noise_lengths` holds the sample count of each pool entry.
template <typename Rng>
AugmentDraw draw_augment(const AugmentConfig& cfg, std::span<const std::size_t> noise_lengths,
                         std::size_t clip_len, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentDraw d;
  const double gate = unit(rng);
  if (!noise_lengths.empty() && gate < cfg.noise_prob) {
    d.noise = true;
    d.noise_index = std::uniform_int_distribution<std::size_t>(0, noise_lengths.size() - 1)(rng);
    const std::size_t len = noise_lengths[d.noise_index];
    d.noise_offset = len > clip_len ? std::uniform_int_distribution<std::size_t>(0, len - clip_len)(rng) : 0;
    d.mix = cfg.noise_scale * unit(rng);
  }
  d.shift_ms = std::uniform_real_distribution<double>(-cfg.max_shift_ms, cfg.max_shift_ms)(rng);
  return d;
}

/// Delays the signal by `shift` samples (advances it when negative),
/// zero-filling the vacated end. Length is unchanged.
inline std::vector<float> shift_samples(std::span<const float> x, std::ptrdiff_t shift) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<float> out(x.size(), 0.0f);
  for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(0, shift); i < std::min(n, n + shift); ++i)
    out[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i - shift)];
  return out;
}

inline std::ptrdiff_t shift_in_samples(double shift_ms, std::uint32_t sample_rate) {
  return static_cast<std::ptrdiff_t>(std::lround(shift_ms * sample_rate / 1000.0));
}

inline WavClip apply_augment(const WavClip& clip, const AugmentDraw& d, std::span<const WavClip> noise_pool) {
  WavClip out = fit_one_second(clip);
  if (d.noise) {
    CELLSEARCH_REQUIRE(d.noise_index < noise_pool.size(), "augment: noise index out of range");
    const auto& noise = noise_pool[d.noise_index].samples;
    for (std::size_t i = 0; i < out.samples.size() && d.noise_offset + i < noise.size(); ++i)
      out.samples[i] += static_cast<float>(d.mix * noise[d.noise_offset + i]);
  }
  out.samples = shift_samples(out.samples, shift_in_samples(d.shift_ms, out.sample_rate));
  return out;
}

/// One-call form. An empty pool leaves only the shift, with a one-time
/// note on stderr.
template <typename Rng>
WavClip augment(const WavClip& clip, std::span<const WavClip> noise_pool, Rng& rng, const AugmentConfig& cfg = {}) {
  if (noise_pool.empty()) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) std::cerr << "augment: empty noise pool, applying time shift only\n";
  }
  std::vector<std::size_t> lengths;
  lengths.reserve(noise_pool.size());
  for (const auto& n : noise_pool) lengths.push_back(n.samples.size());
  return apply_augment(clip, draw_augment(cfg, lengths, clip.sample_rate, rng), noise_pool);
}

}  // namespace cellsearch
