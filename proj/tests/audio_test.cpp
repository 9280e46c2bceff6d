// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cellsearch/audio/augment.hpp"
#include "cellsearch/audio/feature_cache.hpp"
#include "cellsearch/audio/mfcc.hpp"
#include "cellsearch/audio/wav.hpp"
#include "support/mfcc_oracle.hpp"
#include "support/temp_dir.hpp"

namespace cellsearch {
namespace {

WavClip tone(double hz, double amp = 0.5, std::size_t n = 16000) {
  WavClip c;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    c.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / 16000.0));
  return c;
}

WavClip ramp(std::size_t n = 16000) {
  WavClip c;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.samples[i] = static_cast<float>(i + 1) / 65536.0f;
  return c;
}

std::string wav_header(std::uint16_t format, std::uint16_t channels, std::uint16_t bits, std::uint32_t data_bytes) {
  std::string h = "RIFF";
  detail::append_le(h, 36 + data_bytes, 4);
  h += "WAVEfmt ";
  detail::append_le(h, 16, 4);
  detail::append_le(h, format, 2);
  detail::append_le(h, channels, 2);
  detail::append_le(h, 16000, 4);
  detail::append_le(h, 16000u * channels * bits / 8, 4);
  detail::append_le(h, channels * bits / 8u, 2);
  detail::append_le(h, bits, 2);
  h += "data";
  detail::append_le(h, data_bytes, 4);
  return h;
}

void expect_format_error(const std::string& bytes, const std::string& needle) {
  try {
    parse_wav(bytes, "clip.wav");
    ADD_FAILURE() << "expected WavFormatError mentioning '" << needle << "'";
  } catch (const WavFormatError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("clip.wav"), std::string::npos) << e.what();
  }
}

// --- wav ------------------------------------------------------------------

TEST(Wav, SilenceFileDecodesToZeros) {
  const auto c = parse_wav(wav_header(1, 1, 16, 32000) + std::string(32000, '\0'));
  EXPECT_EQ(c.sample_rate, 16000u);
  ASSERT_EQ(c.samples.size(), 16000u);
  for (float s : c.samples) ASSERT_EQ(s, 0.0f);
}

TEST(Wav, NormalizationEdges) {
  std::string body;
  for (std::uint16_t v : {0x8000, 0x7FFF, 0x0001, 0xFFFF}) detail::append_le(body, v, 2);
  const auto c = parse_wav(wav_header(1, 1, 16, 8) + body);
  ASSERT_EQ(c.samples.size(), 4u);
  EXPECT_EQ(c.samples[0], -1.0f);
  EXPECT_EQ(c.samples[1], 32767.0f / 32768.0f);
  EXPECT_EQ(c.samples[2], 1.0f / 32768.0f);
  EXPECT_EQ(c.samples[3], -1.0f / 32768.0f);
}

TEST(Wav, FormatErrorsNameTheDefect) {
  std::string bad = wav_header(1, 1, 16, 4) + "abcd";
  bad[0] = 'X';
  expect_format_error(bad, "RIFF");
  bad = wav_header(1, 1, 16, 4) + "abcd";
  bad[8] = 'X';
  expect_format_error(bad, "WAVE");
  expect_format_error(wav_header(3, 1, 32, 4) + "abcd", "not PCM");
  expect_format_error(wav_header(1, 2, 16, 4) + "abcd", "mono");
  expect_format_error(wav_header(1, 1, 8, 4) + "abcd", "16-bit");
  expect_format_error(wav_header(1, 1, 16, 100) + "abcd", "truncated data");
  expect_format_error("RIFF", "truncated RIFF");
  expect_format_error(wav_header(1, 1, 16, 4).substr(0, 36), "missing data");
  expect_format_error(wav_header(1, 1, 16, 4).substr(0, 24), "truncated fmt");
}

TEST(Wav, SkipsUnknownChunksWithPadding) {
  std::string h = wav_header(1, 1, 16, 2);
  std::string with_list = h.substr(0, 36) + "LIST";
  detail::append_le(with_list, 3, 4);
  with_list += "abc";
  with_list += '\0';  // pad byte
  with_list += h.substr(36);
  std::string body;
  detail::append_le(body, 0x4000, 2);
  const auto c = parse_wav(with_list + body);
  ASSERT_EQ(c.samples.size(), 1u);
  EXPECT_EQ(c.samples[0], 0.5f);
}

TEST(Wav, EncodeParseRoundTripAndFile) {
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> d(-32768, 32767);
  WavClip c;
  c.sample_rate = 8000;
  for (int i = 0; i < 1000; ++i) c.samples.push_back(static_cast<float>(d(rng)) / 32768.0f);
  const auto back = parse_wav(encode_wav(c));
  EXPECT_EQ(back.sample_rate, 8000u);
  EXPECT_EQ(back.samples, c.samples);
  testing::TempDir dir;
  save_wav(c, dir.path() / "a.wav");
  EXPECT_EQ(load_wav(dir.path() / "a.wav").samples, c.samples);
  EXPECT_THROW(load_wav(dir.path() / "missing.wav"), WavFormatError);
}

TEST(Wav, FitOneSecondPadsAndTruncates) {
  EXPECT_EQ(fit_one_second(ramp(100)).samples.size(), 16000u);
  EXPECT_EQ(fit_one_second(ramp(100)).samples[99], ramp(100).samples[99]);
  EXPECT_EQ(fit_one_second(ramp(100)).samples[100], 0.0f);
  EXPECT_EQ(fit_one_second(ramp(20000)).samples.size(), 16000u);
}

// --- augmentation ---------------------------------------------------------

std::vector<WavClip> noise_pool() {
  std::vector<WavClip> pool(2);
  std::mt19937 rng(9);
  std::normal_distribution<float> g(0, 0.3f);
  for (auto& p : pool) {
    p.samples.resize(20000);
    for (auto& s : p.samples) s = g(rng);
  }
  return pool;
}

TEST(Augment, NoNoiseAndZeroShiftIsIdentity) {
  const auto c = ramp();
  AugmentDraw d;
  d.noise = false;
  d.shift_ms = 0.0;
  EXPECT_EQ(apply_augment(c, d, {}).samples, c.samples);
}

TEST(Augment, PositiveShiftDelaysWithLeadingZeros) {
  const auto c = ramp();
  AugmentDraw d;
  d.shift_ms = 100.0;
  const auto out = apply_augment(c, d, {}).samples;
  ASSERT_EQ(out.size(), 16000u);
  for (std::size_t i = 0; i < 1600; ++i) ASSERT_EQ(out[i], 0.0f);
  for (std::size_t i = 1600; i < 16000; ++i) ASSERT_EQ(out[i], c.samples[i - 1600]);
}

TEST(Augment, NegativeShiftAdvancesWithTrailingZeros) {
  const auto c = ramp();
  AugmentDraw d;
  d.shift_ms = -100.0;
  const auto out = apply_augment(c, d, {}).samples;
  for (std::size_t i = 0; i < 14400; ++i) ASSERT_EQ(out[i], c.samples[i + 1600]);
  for (std::size_t i = 14400; i < 16000; ++i) ASSERT_EQ(out[i], 0.0f);
}

TEST(Augment, ShiftThereAndBackRestoresInterior) {
  const auto c = ramp();
  for (int k : {1, 17, 63, 100}) {
    const auto there = shift_samples(c.samples, k * 16);
    const auto back = shift_samples(there, -k * 16);
    const std::size_t lost = static_cast<std::size_t>(k) * 16;
    for (std::size_t i = 0; i < 16000 - lost; ++i) ASSERT_EQ(back[i], c.samples[i]) << "k=" << k;
    for (std::size_t i = 16000 - lost; i < 16000; ++i) ASSERT_EQ(back[i], 0.0f);
  }
}

TEST(Augment, NoiseMixingAddsScaledCrop) {
  const auto pool = noise_pool();
  const auto c = ramp();
  AugmentDraw d;
  d.noise = true;
  d.noise_index = 1;
  d.noise_offset = 123;
  d.mix = 0.05;
  const auto out = apply_augment(c, d, pool).samples;
  for (std::size_t i = 0; i < 16000; i += 997)
    EXPECT_EQ(out[i], c.samples[i] + static_cast<float>(0.05 * pool[1].samples[123 + i]));
}

TEST(Augment, NoiseFiresEightyPercentOfDraws) {
  std::mt19937_64 rng(2026);
  const std::vector<std::size_t> lengths{20000, 30000};
  int fired = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto d = draw_augment({}, lengths, 16000, rng);
    if (d.noise) {
      ++fired;
      EXPECT_GE(d.mix, 0.0);
      EXPECT_LE(d.mix, 0.1);
      EXPECT_LE(d.noise_offset + 16000, lengths[d.noise_index]);
    }
  }
  EXPECT_NEAR(fired / 10000.0, 0.8, 0.015);
}

TEST(Augment, ShiftIsUniformByChiSquare) {
  std::mt19937_64 rng(7);
  const std::vector<std::size_t> lengths{20000};
  constexpr int kBins = 20;
  std::vector<int> counts(kBins, 0);
  for (int i = 0; i < 10000; ++i) {
    const double t = draw_augment({}, lengths, 16000, rng).shift_ms;
    ASSERT_GE(t, -100.0);
    ASSERT_LE(t, 100.0);
    ++counts[std::min(kBins - 1, static_cast<int>((t + 100.0) / 200.0 * kBins))];
  }
  double chi2 = 0;
  for (int c : counts) chi2 += (c - 500.0) * (c - 500.0) / 500.0;
  // Upper 1% point of chi-square with 19 degrees of freedom.
  EXPECT_LT(chi2, 36.191);
}

TEST(Augment, SeededAndAlwaysOneSecond) {
  const auto pool = noise_pool();
  for (std::size_t n : {8000u, 16000u, 24000u}) {
    std::mt19937_64 a(5), b(5);
    const auto x = augment(ramp(n), pool, a), y = augment(ramp(n), pool, b);
    EXPECT_EQ(x.samples.size(), 16000u);
    EXPECT_EQ(x.samples, y.samples);
  }
}

TEST(Augment, EmptyPoolFallsBackToShiftOnly) {
  std::mt19937_64 rng(3);
  const auto c = ramp();
  for (int i = 0; i < 20; ++i) {
    std::mt19937_64 probe = rng;
    const auto d = draw_augment({}, {}, 16000, probe);
    EXPECT_FALSE(d.noise);
    const auto out = augment(c, {}, rng);
    EXPECT_EQ(out.samples, shift_samples(c.samples, shift_in_samples(d.shift_ms, 16000)));
  }
}

// --- mfcc -----------------------------------------------------------------

TEST(Mfcc, DefaultConfigGivesOneHundredOneFrames) {
  MfccConfig c;
  EXPECT_EQ(c.window_samples(), 480u);
  EXPECT_EQ(c.hop_samples(), 160u);
  EXPECT_EQ(c.num_frames(), 101u);
}

TEST(Mfcc, AnyClipGivesExactShape) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> u(-1, 1);
  MfccExtractor ex;
  for (int trial = 0; trial < 5; ++trial) {
    WavClip c;
    c.samples.resize(16000);
    for (auto& s : c.samples) s = u(rng) * static_cast<float>(trial) / 4.0f;
    const auto f = ex(c);
    EXPECT_EQ(f.frames, 101u);
    EXPECT_EQ(f.coeffs, 40u);
    ASSERT_EQ(f.values.size(), 101u * 40u);
    for (double v : f.values) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Mfcc, SilenceGivesIdenticalFramesFromLogFloor) {
  WavClip z;
  z.samples.assign(16000, 0.0f);
  const auto f = extract_mfcc(z);
  for (std::size_t t = 0; t < 101; ++t)
    for (std::size_t k = 0; k < 40; ++k) ASSERT_EQ(f.at(t, k), f.at(0, k));
  EXPECT_NEAR(f.at(0, 0), std::sqrt(40.0) * std::log(1e-10), 1e-9);
  for (std::size_t k = 1; k < 40; ++k) EXPECT_NEAR(f.at(0, k), 0.0, 1e-9);
}

TEST(Mfcc, PureToneMatchesTextbookReference) {
  const auto clip = tone(440.0);
  const auto f = extract_mfcc(clip);
  const auto ref = testing::reference_mfcc(clip.samples);
  ASSERT_EQ(ref.size(), 101u);
  double worst = 0;
  for (std::size_t t = 0; t < 101; ++t)
    for (std::size_t k = 0; k < 40; ++k) worst = std::max(worst, std::abs(f.at(t, k) - ref[t][k]));
  EXPECT_LT(worst, 1e-6);
}

TEST(Mfcc, BroadbandClipMatchesReference) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  WavClip c;
  c.samples.resize(16000);
  for (auto& s : c.samples) s = u(rng);
  const auto f = extract_mfcc(c);
  const auto ref = testing::reference_mfcc(c.samples);
  for (std::size_t t = 0; t < 101; t += 10)
    for (std::size_t k = 0; k < 40; ++k) ASSERT_NEAR(f.at(t, k), ref[t][k], 1e-6) << t << "," << k;
}

TEST(Mfcc, DeterministicAcrossExtractors) {
  const auto clip = tone(1000.0, 0.3);
  MfccExtractor a, b;
  const auto x = a(clip), y = a(clip), z = b(clip);
  EXPECT_EQ(x.values, y.values);
  EXPECT_EQ(x.values, z.values);
}

TEST(Mfcc, RejectsWrongRateAndLength) {
  auto c = tone(440.0);
  c.sample_rate = 8000;
  EXPECT_THROW(extract_mfcc(c), ContractViolation);
  EXPECT_THROW(extract_mfcc(tone(440.0, 0.5, 15999)), ContractViolation);
  MfccConfig bad;
  bad.n_fft = 256;
  EXPECT_THROW(MfccExtractor{bad}, ContractViolation);
}

TEST(Mfcc, TablesHaveExpectedStructure) {
  const MfccConfig c;
  const auto fb = mel_filterbank(c);
  const std::size_t bins = 257;
  for (std::size_t m = 0; m < 40; ++m) {
    double peak = 0, sum = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      peak = std::max(peak, fb[m * bins + k]);
      sum += fb[m * bins + k];
      const double f = 31.25 * static_cast<double>(k);
      if (f <= 20.0 || f >= 4000.0) ASSERT_EQ(fb[m * bins + k], 0.0);
    }
    EXPECT_GT(sum, 0.0) << "filter " << m << " covers no bin";
    EXPECT_LE(peak, 1.0);
  }
  const auto d = dct2_matrix(40, 40);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 40; ++j) {
      double dot = 0;
      for (std::size_t n = 0; n < 40; ++n) dot += d[i * 40 + n] * d[j * 40 + n];
      ASSERT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-12);
    }
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
  EXPECT_NEAR(hz_to_mel(1000.0), 1000.0, 0.05);
}

// --- feature cache --------------------------------------------------------

TEST(FeatureCache, RoundTripAsFloat32) {
  testing::TempDir dir;
  const auto f1 = extract_mfcc(tone(300.0)), f2 = extract_mfcc(tone(2000.0));
  FeatureCacheWriter w(dir.path() / "feats.bin", 101, 40);
  w.append("a/one.wav", f1);
  w.append("b/two.wav", f2);
  w.close();
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "feats.bin"), 2u * 101 * 40 * 4);
  FeatureCache cache(dir.path() / "feats.bin");
  EXPECT_EQ(cache.size(), 2u);
  const auto back = cache.get("b/two.wav");
  for (std::size_t i = 0; i < back.size(); ++i) ASSERT_EQ(back[i], static_cast<float>(f2.values[i]));
  EXPECT_THROW(cache.get("c"), FeatureCacheError);
  FeatureMatrix wrong{3, 2, std::vector<double>(6)};
  EXPECT_THROW(w.append("x", wrong), FeatureCacheError);
  std::filesystem::resize_file(dir.path() / "feats.bin", 100);
  EXPECT_THROW(FeatureCache{dir.path() / "feats.bin"}, FeatureCacheError);
}

TEST(FeatureCache, CsvHasOneLinePerFrame) {
  const std::string csv = feature_csv(extract_mfcc(tone(440.0)));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 101);
  const std::string first = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 39);
}

}  // namespace
}  // namespace cellsearch
