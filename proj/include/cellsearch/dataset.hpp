// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Speech Commands indexing into the 12-label keyword task, speaker-hash
// splits, and a SampleSource that turns records into MFCC matrices.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellsearch/audio/augment.hpp"
#include "cellsearch/audio/mfcc.hpp"
#include "cellsearch/audio/wav.hpp"
#include "cellsearch/data_source.hpp"

namespace cellsearch {

enum class Label { Yes, No, Up, Down, Left, Right, On, Off, Go, Stop, Unknown, Silence };

inline constexpr std::size_t kNumLabels = 12;
inline constexpr std::size_t kNumKeywords = 10;
inline constexpr std::array<std::string_view, kNumLabels> kLabelNames{
    "yes", "no", "up", "down", "left", "right", "on", "off", "go", "stop", "unknown", "silence"};
inline constexpr std::string_view kNoiseDir = "_background_noise_";

inline std::string_view label_name(Label l) { return kLabelNames[static_cast<std::size_t>(l)]; }

inline std::optional<Label> parse_label(std::string_view s) {
  for (std::size_t i = 0; i < kNumLabels; ++i)
    if (kLabelNames[i] == s) return static_cast<Label>(i);
  return std::nullopt;
}

/// Keyword directories map to themselves; any other word is unknown.
inline Label label_for_directory(std::string_view dir) {
  for (std::size_t i = 0; i < kNumKeywords; ++i)
    if (kLabelNames[i] == dir) return static_cast<Label>(i);
  return Label::Unknown;
}

/// `<speaker>_nohash_<n>.wav` gives `<speaker>`; other names fall back to
/// the stem.
inline std::string speaker_of(const std::filesystem::path& file) {
  const std::string stem = file.stem().string();
  const auto pos = stem.find("_nohash_");
  return pos == std::string::npos ? stem : stem.substr(0, pos);
}

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Buckets 0-39 train, 40-79 val, 80-99 test.
inline Split assign_split(std::string_view speaker) {
  CELLSEARCH_REQUIRE(!speaker.empty(), "assign_split: empty speaker id");
  const std::uint64_t bucket = fnv1a(speaker) % 100;
  return bucket < 40 ? Split::Train : bucket < 80 ? Split::Val : Split::Test;
}

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetRecord {
  std::string path;  // relative to the dataset root, '/'-separated
  Label label = Label::Unknown;
  Split split = Split::Train;
  std::string speaker;  // empty for silence records
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<DatasetRecord> records;  // word records sorted by path, then silence records
  std::vector<std::string> noise_files;

  std::size_t count(Label l, Split s) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const DatasetRecord& r) {
      return r.label == l && r.split == s;
    }));
  }
};

/// Indexes every `<word>/*.wav` under `root`. Silence records point at
/// noise files round-robin; each split receives as many as the mean
/// keyword-class size in that split, and the crop is chosen at load time.
inline DatasetIndex scan_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw DatasetError("dataset: root '" + root.string() + "' is not a directory; expected per-word folders and " +
                       std::string(kNoiseDir) + "/");
  DatasetIndex idx;
  idx.root = root;
  std::vector<fs::path> word_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename() != kNoiseDir) word_dirs.push_back(e.path());
  std::sort(word_dirs.begin(), word_dirs.end());

  auto wavs_in = [](const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& f : fs::directory_iterator(dir))
      if (f.is_regular_file() && f.path().extension() == ".wav") out.push_back(f.path());
    std::sort(out.begin(), out.end());
    return out;
  };
  for (const auto& dir : word_dirs) {
    const Label label = label_for_directory(dir.filename().string());
    for (const auto& f : wavs_in(dir)) {
      DatasetRecord r;
      r.path = (dir.filename() / f.filename()).generic_string();
      r.label = label;
      r.speaker = speaker_of(f);
      r.split = assign_split(r.speaker);
      idx.records.push_back(std::move(r));
    }
  }
  if (idx.records.empty())
    throw DatasetError("dataset: no '<word>/*.wav' files under '" + root.string() +
                       "'; expected keyword folders such as yes/, no/, ...");
  const fs::path noise_dir = root / kNoiseDir;
  if (fs::is_directory(noise_dir))
    for (const auto& f : wavs_in(noise_dir)) idx.noise_files.push_back((fs::path(kNoiseDir) / f.filename()).generic_string());
  if (idx.noise_files.empty())
    throw DatasetError("dataset: no noise WAVs in '" + noise_dir.string() + "'; needed for silence and augmentation");

  std::size_t next_noise = 0;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    std::size_t keyword_total = 0;
    for (std::size_t k = 0; k < kNumKeywords; ++k) keyword_total += idx.count(static_cast<Label>(k), s);
    const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(keyword_total) / kNumKeywords));
    for (std::size_t i = 0; i < n; ++i) {
      DatasetRecord r;
      r.path = idx.noise_files[next_noise++ % idx.noise_files.size()];
      r.label = Label::Silence;
      r.split = s;
      idx.records.push_back(std::move(r));
    }
  }
  return idx;
}

/// CSV `path,label,split,speaker` with a header line.
inline std::string manifest_csv(const DatasetIndex& idx) {
  std::ostringstream os;
  os << "path,label,split,speaker\n";
  for (const auto& r : idx.records)
    os << r.path << ',' << label_name(r.label) << ',' << split_name(r.split) << ',' << r.speaker << '\n';
  return os.str();
}

struct SpeechSourceOptions {
  MfccConfig mfcc;
  AugmentConfig augment;
  bool class_balance = true;
};

/// Feeds MFCC matrices of indexed records. With class balancing on, each
/// epoch keeps a fresh random subset of unknown records the size of the
/// mean keyword class.
class SpeechCommandsSource final : public SampleSource {
 public:
  SpeechCommandsSource(DatasetIndex index, SpeechSourceOptions opt = {})
      : index_(std::move(index)), opt_(opt) {
    validate(opt_.mfcc);
    for (std::size_t i = 0; i < index_.records.size(); ++i)
      by_split_[static_cast<std::size_t>(index_.records[i].split)].push_back(i);
  }

  std::size_t num_classes() const override { return kNumLabels; }
  std::size_t height() const override { return opt_.mfcc.num_frames(); }
  std::size_t width() const override { return opt_.mfcc.n_mfcc; }

  const DatasetIndex& index() const { return index_; }

  std::vector<SampleRef> epoch_items(Split split, std::uint64_t epoch_seed) const override {
    const auto& all = by_split_[static_cast<std::size_t>(split)];
    std::vector<SampleRef> out;
    std::vector<std::size_t> unknown;
    std::size_t keyword = 0;
    for (std::size_t i : all) {
      const Label l = index_.records[i].label;
      if (opt_.class_balance && l == Label::Unknown) {
        unknown.push_back(i);
        continue;
      }
      keyword += static_cast<std::size_t>(l) < kNumKeywords;
      out.push_back({split, i});
    }
    if (opt_.class_balance && !unknown.empty()) {
      const auto keep = std::min(unknown.size(), static_cast<std::size_t>(
                                                     std::llround(static_cast<double>(keyword) / kNumKeywords)));
      std::mt19937_64 rng(mix_seed(epoch_seed, 0x0C0DE));
      std::shuffle(unknown.begin(), unknown.end(), rng);
      unknown.resize(keep);
      std::sort(unknown.begin(), unknown.end());
      for (std::size_t i : unknown) out.push_back({split, i});
    }
    return out;
  }

  int load(const SampleRef& ref, std::uint64_t sample_seed, bool augment_on, std::span<float> out) const override {
    CELLSEARCH_REQUIRE(ref.index < index_.records.size(), "speech source: record index out of range");
    CELLSEARCH_REQUIRE(out.size() == height() * width(), "speech source: output buffer has the wrong size");
    const DatasetRecord& r = index_.records[ref.index];
    std::mt19937_64 rng(sample_seed);
    WavClip clip;
    if (r.label == Label::Silence) {
      const WavClip& noise = noise_clip(r.path);
      const std::size_t n = opt_.mfcc.sample_rate;
      const std::size_t off =
          noise.samples.size() > n ? std::uniform_int_distribution<std::size_t>(0, noise.samples.size() - n)(rng) : 0;
      clip.sample_rate = noise.sample_rate;
      clip.samples.assign(noise.samples.begin() + static_cast<std::ptrdiff_t>(std::min(off, noise.samples.size())),
                          noise.samples.begin() +
                              static_cast<std::ptrdiff_t>(std::min(off + n, noise.samples.size())));
    } else {
      clip = load_wav(index_.root / r.path);
    }
    clip = fit_one_second(std::move(clip));
    if (augment_on) clip = cellsearch::augment(clip, noise_pool(), rng, opt_.augment);
    FeatureMatrix f;
    {
      std::lock_guard lock(extract_mutex_);
      if (!extractor_) extractor_ = std::make_unique<MfccExtractor>(opt_.mfcc);
      f = (*extractor_)(clip);
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(f.values[i]);
    return static_cast<int>(r.label);
  }

 private:
  const std::vector<WavClip>& noise_pool() const {
    std::call_once(noise_once_, [&] {
      for (const auto& p : index_.noise_files) noise_.push_back(load_wav(index_.root / p));
    });
    return noise_;
  }

  const WavClip& noise_clip(const std::string& rel) const {
    const auto& pool = noise_pool();
    const auto it = std::find(index_.noise_files.begin(), index_.noise_files.end(), rel);
    CELLSEARCH_REQUIRE(it != index_.noise_files.end(), "speech source: unknown noise file " << rel);
    return pool[static_cast<std::size_t>(it - index_.noise_files.begin())];
  }

  DatasetIndex index_;
  SpeechSourceOptions opt_;
  std::array<std::vector<std::size_t>, 3> by_split_;
  mutable std::once_flag noise_once_;
  mutable std::vector<WavClip> noise_;
  mutable std::mutex extract_mutex_;
  mutable std::unique_ptr<MfccExtractor> extractor_;
};

}  // namespace cellsearch
