// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// MFCC front end: centered framing, Hann window, magnitude spectrum,
// HTK mel filterbank, log, orthonormal DCT-II.

#pragma once

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "cellsearch/audio/wav.hpp"
#include "cellsearch/tensor.hpp"

namespace cellsearch {

struct MfccConfig {
  std::uint32_t sample_rate = 16000;
  double window_ms = 30.0;
  double hop_ms = 10.0;
  std::size_t n_fft = 512;
  std::size_t n_mels = 40;
  std::size_t n_mfcc = 40;
  double fmin = 20.0;
  double fmax = 4000.0;
  double log_floor = 1e-10;

  std::size_t window_samples() const { return static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0)); }
  std::size_t hop_samples() const { return static_cast<std::size_t>(std::lround(hop_ms * sample_rate / 1000.0)); }
  /// Frames of a one-second clip under centered framing.
  std::size_t num_frames() const { return 1 + sample_rate / hop_samples(); }
};

inline void validate(const MfccConfig& c) {
  CELLSEARCH_REQUIRE(c.sample_rate > 0 && c.hop_samples() > 0, "mfcc: sample_rate and hop must be positive");
  CELLSEARCH_REQUIRE(c.window_samples() >= 1 && c.window_samples() <= c.n_fft,
                     "mfcc: window of " << c.window_samples() << " samples exceeds n_fft " << c.n_fft);
  CELLSEARCH_REQUIRE(c.n_mels >= 1 && c.n_mfcc >= 1 && c.n_mfcc <= c.n_mels, "mfcc: need 1 <= n_mfcc <= n_mels");
  CELLSEARCH_REQUIRE(0 <= c.fmin && c.fmin < c.fmax && c.fmax <= c.sample_rate / 2.0,
                     "mfcc: need 0 <= fmin < fmax <= Nyquist");
  CELLSEARCH_REQUIRE(c.log_floor > 0, "mfcc: log_floor must be positive");
}

/// Row-major frames x coefficients.
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t coeffs = 0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t k) const { return values[t * coeffs + k]; }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Periodic Hann window of length n.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
  return w;
}

/// n_mels x (n_fft / 2 + 1) triangular filters with unit peaks, centers
/// equally spaced on the mel scale between fmin and fmax.
inline std::vector<double> mel_filterbank(const MfccConfig& c) {
  const std::size_t bins = c.n_fft / 2 + 1;
  std::vector<double> edges(c.n_mels + 2);
  const double lo = hz_to_mel(c.fmin), hi = hz_to_mel(c.fmax);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(c.n_mels + 1));
  std::vector<double> fb(c.n_mels * bins, 0.0);
  for (std::size_t m = 0; m < c.n_mels; ++m)
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * c.sample_rate / static_cast<double>(c.n_fft);
      const double up = (f - edges[m]) / (edges[m + 1] - edges[m]);
      const double down = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      fb[m * bins + k] = std::max(0.0, std::min(up, down));
    }
  return fb;
}

/// n_out x n_in orthonormal DCT-II basis.
inline std::vector<double> dct2_matrix(std::size_t n_out, std::size_t n_in) {
  std::vector<double> d(n_out * n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n_in));
    for (std::size_t n = 0; n < n_in; ++n)
      d[k * n_in + n] = scale * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * n + 1.0) / (2.0 * n_in));
  }
  return d;
}

/// Precomputed tables plus an FFTW plan. Not safe for concurrent use; give
/// each worker its own extractor.
class MfccExtractor {
 public:
  explicit MfccExtractor(MfccConfig cfg = {})
      : cfg_(cfg), window_((validate(cfg), hann_window(cfg.window_samples()))), mel_(mel_filterbank(cfg)),
        dct_(dct2_matrix(cfg.n_mfcc, cfg.n_mels)) {
    in_.reset(fftw_alloc_real(cfg_.n_fft));
    out_.reset(fftw_alloc_complex(cfg_.n_fft / 2 + 1));
    // Planning touches global FFTW state.
    std::lock_guard lock(plan_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(cfg_.n_fft), in_.get(), out_.get(), FFTW_ESTIMATE);
  }
  ~MfccExtractor() {
    std::lock_guard lock(plan_mutex());
    fftw_destroy_plan(plan_);
  }
  MfccExtractor(const MfccExtractor&) = delete;
  MfccExtractor& operator=(const MfccExtractor&) = delete;

  const MfccConfig& config() const { return cfg_; }

  FeatureMatrix operator()(const WavClip& clip) {
    CELLSEARCH_REQUIRE(clip.sample_rate == cfg_.sample_rate,
                       "mfcc: sample rate " << clip.sample_rate << " Hz, expected " << cfg_.sample_rate);
    CELLSEARCH_REQUIRE(clip.samples.size() == cfg_.sample_rate,
                       "mfcc: clip has " << clip.samples.size() << " samples, expected one second");
    const std::size_t win = cfg_.window_samples(), hop = cfg_.hop_samples(), bins = cfg_.n_fft / 2 + 1;
    const auto pad = static_cast<std::ptrdiff_t>(win / 2);
    const auto len = static_cast<std::ptrdiff_t>(clip.samples.size());
    FeatureMatrix f{cfg_.num_frames(), cfg_.n_mfcc, std::vector<double>(cfg_.num_frames() * cfg_.n_mfcc)};
    std::vector<double> mag(bins), logmel(cfg_.n_mels);
    for (std::size_t t = 0; t < f.frames; ++t) {
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * hop) - pad;
      for (std::size_t i = 0; i < cfg_.n_fft; ++i) {
        const std::ptrdiff_t s = start + static_cast<std::ptrdiff_t>(i);
        in_.get()[i] = i < win && s >= 0 && s < len ? window_[i] * clip.samples[static_cast<std::size_t>(s)] : 0.0;
      }
      fftw_execute(plan_);
      for (std::size_t k = 0; k < bins; ++k) mag[k] = std::hypot(out_.get()[k][0], out_.get()[k][1]);
      for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
        double e = 0;
        for (std::size_t k = 0; k < bins; ++k) e += mel_[m * bins + k] * mag[k];
        logmel[m] = std::log(std::max(e, cfg_.log_floor));
      }
      for (std::size_t k = 0; k < cfg_.n_mfcc; ++k) {
        double acc = 0;
        for (std::size_t m = 0; m < cfg_.n_mels; ++m) acc += dct_[k * cfg_.n_mels + m] * logmel[m];
        f.values[t * f.coeffs + k] = acc;
      }
    }
    return f;
  }

 private:
  struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
  };
  static std::mutex& plan_mutex() {
    static std::mutex m;
    return m;
  }

  MfccConfig cfg_;
  std::vector<double> window_, mel_, dct_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_ = nullptr;
};

inline FeatureMatrix extract_mfcc(const WavClip& clip, const MfccConfig& cfg = {}) {
  MfccExtractor ex(cfg);
  return ex(clip);
}

}  // namespace cellsearch
