// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// RIFF/WAVE reader and writer for 16-bit PCM mono clips.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace cellsearch {

struct WavClip {
  std::vector<float> samples;  // in [-1, 1)
  std::uint32_t sample_rate = 16000;
};

class WavFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t le32(const std::string& b, std::size_t off) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[off])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 3])) << 24;
}

inline std::uint16_t le16(const std::string& b, std::size_t off) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[off]) |
                                    static_cast<unsigned char>(b[off + 1]) << 8);
}

inline void append_le(std::string& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace detail

/// Decodes an in-memory WAV file. `what` names the source in error messages.
inline WavClip parse_wav(const std::string& bytes, const std::string& what = "wav") {
  auto fail = [&](const std::string& defect) { throw WavFormatError(what + ": " + defect); };
  if (bytes.size() < 12) fail("truncated RIFF header");
  if (bytes.compare(0, 4, "RIFF") != 0) fail("missing RIFF magic");
  if (bytes.compare(8, 4, "WAVE") != 0) fail("missing WAVE magic");

  bool have_fmt = false;
  WavClip clip;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t size = detail::le32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (size < 16 || body + 16 > bytes.size()) fail("truncated fmt chunk");
      const std::uint16_t format = detail::le16(bytes, body);
      const std::uint16_t channels = detail::le16(bytes, body + 2);
      const std::uint16_t bits = detail::le16(bytes, body + 14);
      if (format != 1) fail("not PCM (format tag " + std::to_string(format) + ")");
      if (channels != 1) fail("expected mono, got " + std::to_string(channels) + " channels");
      if (bits != 16) fail("expected 16-bit samples, got " + std::to_string(bits));
      clip.sample_rate = detail::le32(bytes, body + 4);
      if (clip.sample_rate == 0) fail("zero sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (body + size > bytes.size()) fail("truncated data chunk");
      if (size % 2 != 0) fail("data chunk has odd byte count");
      clip.samples.resize(size / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i)
        clip.samples[i] = static_cast<float>(static_cast<std::int16_t>(detail::le16(bytes, body + 2 * i))) / 32768.0f;
      return clip;
    }
    pos = body + size + (size & 1u);
  }
  fail(have_fmt ? "missing data chunk" : "missing fmt chunk");
  return clip;
}

inline WavClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavFormatError(path.string() + ": cannot open");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes, path.string());
}

/// Encodes samples as 16-bit PCM, rounding and clamping to the int16 range.
inline std::string encode_wav(const WavClip& clip) {
  std::string out;
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out += "RIFF";
  detail::append_le(out, 36 + data_bytes, 4);
  out += "WAVEfmt ";
  detail::append_le(out, 16, 4);
  detail::append_le(out, 1, 2);
  detail::append_le(out, 1, 2);
  detail::append_le(out, clip.sample_rate, 4);
  detail::append_le(out, clip.sample_rate * 2, 4);
  detail::append_le(out, 2, 2);
  detail::append_le(out, 16, 2);
  out += "data";
  detail::append_le(out, data_bytes, 4);
  for (float s : clip.samples) {
    const double v = std::clamp(std::nearbyint(static_cast<double>(s) * 32768.0), -32768.0, 32767.0);
    detail::append_le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)), 2);
  }
  return out;
}

inline void save_wav(const WavClip& clip, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  const std::string bytes = encode_wav(clip);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

/// Zero-pads or truncates to exactly one second.
inline WavClip fit_one_second(WavClip clip) {
  clip.samples.resize(clip.sample_rate, 0.0f);
  return clip;
}

}  // namespace cellsearch
