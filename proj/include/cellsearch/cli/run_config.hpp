// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Resolved run configuration: JSON file, environment fallback and flag
// overrides, with strict key checking and a canonical snapshot form.

#pragma once

#include <json.hpp>

#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include <fcntl.h>
#include <unistd.h>

#include "cellsearch/dataset.hpp"
#include "cellsearch/search.hpp"
#include "cellsearch/train.hpp"

namespace cellsearch {

/// Invalid or incomplete configuration. Maps to exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetworkSection {
  std::size_t depth = 6;
  std::size_t init_channels = 16;
  std::string genotype;  // path; commands may take it positionally instead
  std::string op_set;    // empty: taken from the genotype file
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_root;
  std::string out = "runs/default";
  bool synthetic = false;
  SyntheticConfig synthetic_data;
  SupernetConfig supernet;
  SearchConfig search;
  NetworkSection network;
  TrainConfig train;
  MfccConfig mfcc;
  AugmentConfig augment;
  bool class_balance = true;
};

/// Command-line values that win over the file.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_root;
  std::optional<std::string> out;
  std::optional<std::size_t> depth;
  std::optional<std::size_t> channels;
  std::optional<OpSet> op_set;
  bool synthetic = false;
};

namespace detail {

using json = nlohmann::ordered_json;

/// Pulls known keys out of one JSON object and reports any left over.
class Section {
 public:
  Section(const json& j, std::string path) : path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_or_root() + ": expected an object");
    rest_ = j;
  }

  template <typename T>
  void get(const char* key, T& dst) {
    auto it = rest_.find(key);
    if (it == rest_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer() || (std::is_unsigned_v<T> && it->template get<long long>() < 0))
          throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      } else {
        if (!it->is_string()) throw ConfigError("");
      }
      dst = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(key_path(key) + ": wrong type (" + std::string(it->type_name()) + ")");
    }
    rest_.erase(it);
  }

  void get_op_set(const char* key, OpSet& dst) {
    std::string name(op_set_name(dst));
    get(key, name);
    auto s = parse_op_set(name);
    if (!s) throw ConfigError(key_path(key) + ": unknown op set '" + name + "' (expected nas1 or nas2)");
    dst = *s;
  }

  Section child(const char* key) {
    auto it = rest_.find(key);
    json sub = it == rest_.end() ? json::object() : *it;
    if (it != rest_.end()) rest_.erase(it);
    return Section(sub, key_path(key));
  }

  void finish() const {
    if (!rest_.empty()) throw ConfigError(key_path(rest_.begin().key()) + ": unknown key");
  }

 private:
  std::string path_or_root() const { return path_.empty() ? "config" : path_; }
  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  std::string path_;
  json rest_;
};

}  // namespace detail

/// Overlays a JSON document on `cfg`; every key must be known.
inline void apply_config_json(const nlohmann::ordered_json& j, RunConfig& cfg) {
  detail::Section root(j, "");
  root.get("seed", cfg.seed);
  root.get("data_root", cfg.data_root);
  root.get("out", cfg.out);
  root.get("synthetic", cfg.synthetic);
  root.get("class_balance", cfg.class_balance);
  {
    auto s = root.child("synthetic_data");
    auto& d = cfg.synthetic_data;
    s.get("num_classes", d.num_classes);
    s.get("height", d.height);
    s.get("width", d.width);
    s.get("train_per_class", d.train_per_class);
    s.get("val_per_class", d.val_per_class);
    s.get("test_per_class", d.test_per_class);
    s.get("separation", d.separation);
    s.get("seed", d.seed);
    s.finish();
  }
  {
    auto s = root.child("supernet");
    s.get("num_cells", cfg.supernet.num_cells);
    s.get("init_channels", cfg.supernet.init_channels);
    s.get_op_set("op_set", cfg.supernet.op_set);
    s.finish();
  }
  {
    auto s = root.child("search");
    auto& c = cfg.search;
    s.get("epochs", c.epochs);
    s.get("batch_size", c.batch_size);
    s.get("w_lr", c.w_lr);
    s.get("w_lr_min", c.w_lr_min);
    s.get("w_momentum", c.w_momentum);
    s.get("w_weight_decay", c.w_weight_decay);
    s.get("alpha_lr", c.alpha_lr);
    s.get("alpha_beta1", c.alpha_beta1);
    s.get("alpha_beta2", c.alpha_beta2);
    s.get("alpha_weight_decay", c.alpha_weight_decay);
    s.get("grad_clip", c.grad_clip);
    s.finish();
  }
  {
    auto s = root.child("network");
    s.get("depth", cfg.network.depth);
    s.get("init_channels", cfg.network.init_channels);
    s.get("genotype", cfg.network.genotype);
    s.get("op_set", cfg.network.op_set);
    if (!cfg.network.op_set.empty() && !parse_op_set(cfg.network.op_set))
      throw ConfigError("network.op_set: unknown op set '" + cfg.network.op_set + "' (expected nas1 or nas2)");
    s.finish();
  }
  {
    auto s = root.child("train");
    auto& c = cfg.train;
    s.get("epochs", c.epochs);
    s.get("batch_size", c.batch_size);
    s.get("lr", c.lr);
    s.get("lr_min", c.lr_min);
    s.get("momentum", c.momentum);
    s.get("weight_decay", c.weight_decay);
    s.get("grad_clip", c.grad_clip);
    s.finish();
  }
  {
    auto s = root.child("mfcc");
    auto& m = cfg.mfcc;
    s.get("window_ms", m.window_ms);
    s.get("hop_ms", m.hop_ms);
    s.get("n_fft", m.n_fft);
    s.get("n_mels", m.n_mels);
    s.get("n_mfcc", m.n_mfcc);
    s.get("fmin", m.fmin);
    s.get("fmax", m.fmax);
    s.get("log_floor", m.log_floor);
    s.finish();
  }
  {
    auto s = root.child("augment");
    s.get("noise_prob", cfg.augment.noise_prob);
    s.get("noise_scale", cfg.augment.noise_scale);
    s.get("max_shift_ms", cfg.augment.max_shift_ms);
    s.finish();
  }
  root.finish();
}

/// Canonical snapshot; parsing it back reproduces the same RunConfig.
inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["data_root"] = c.data_root;
  j["out"] = c.out;
  j["synthetic"] = c.synthetic;
  j["class_balance"] = c.class_balance;
  const auto& d = c.synthetic_data;
  j["synthetic_data"] = {{"num_classes", d.num_classes},         {"height", d.height},
                         {"width", d.width},                     {"train_per_class", d.train_per_class},
                         {"val_per_class", d.val_per_class},     {"test_per_class", d.test_per_class},
                         {"separation", d.separation},           {"seed", d.seed}};
  j["supernet"] = {{"num_cells", c.supernet.num_cells},
                   {"init_channels", c.supernet.init_channels},
                   {"op_set", std::string(op_set_name(c.supernet.op_set))}};
  const auto& s = c.search;
  j["search"] = {{"epochs", s.epochs},
                 {"batch_size", s.batch_size},
                 {"w_lr", s.w_lr},
                 {"w_lr_min", s.w_lr_min},
                 {"w_momentum", s.w_momentum},
                 {"w_weight_decay", s.w_weight_decay},
                 {"alpha_lr", s.alpha_lr},
                 {"alpha_beta1", s.alpha_beta1},
                 {"alpha_beta2", s.alpha_beta2},
                 {"alpha_weight_decay", s.alpha_weight_decay},
                 {"grad_clip", s.grad_clip}};
  j["network"] = {{"depth", c.network.depth},
                  {"init_channels", c.network.init_channels},
                  {"genotype", c.network.genotype},
                  {"op_set", c.network.op_set}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},   {"batch_size", t.batch_size},     {"lr", t.lr},
                {"lr_min", t.lr_min},   {"momentum", t.momentum},         {"weight_decay", t.weight_decay},
                {"grad_clip", t.grad_clip}};
  const auto& m = c.mfcc;
  j["mfcc"] = {{"window_ms", m.window_ms}, {"hop_ms", m.hop_ms}, {"n_fft", m.n_fft},   {"n_mels", m.n_mels},
               {"n_mfcc", m.n_mfcc},       {"fmin", m.fmin},     {"fmax", m.fmax},     {"log_floor", m.log_floor}};
  j["augment"] = {{"noise_prob", c.augment.noise_prob},
                  {"noise_scale", c.augment.noise_scale},
                  {"max_shift_ms", c.augment.max_shift_ms}};
  return j;
}

inline std::string config_snapshot(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline nlohmann::ordered_json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path.string() + "'");
  try {
    return nlohmann::ordered_json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

/// Which network `--depth`, `--channels` and `--op-set` address.
enum class NetworkTarget { Supernet, Final };

/// Defaults, then the file, then CELLSEARCH_DATA when no root was given,
/// then flags. Seeds of the search and training sections follow `seed`.
inline RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const ConfigOverrides& o,
                                NetworkTarget target = NetworkTarget::Final) {
  RunConfig cfg;
  if (file) apply_config_json(read_config_file(*file), cfg);
  if (cfg.data_root.empty())
    if (const char* env = std::getenv("CELLSEARCH_DATA"); env && *env) cfg.data_root = env;
  if (o.seed) cfg.seed = *o.seed;
  if (o.data_root) cfg.data_root = *o.data_root;
  if (o.out) cfg.out = *o.out;
  if (o.synthetic) cfg.synthetic = true;
  if (target == NetworkTarget::Supernet) {
    if (o.depth) cfg.supernet.num_cells = *o.depth;
    if (o.channels) cfg.supernet.init_channels = *o.channels;
    if (o.op_set) cfg.supernet.op_set = *o.op_set;
  } else {
    if (o.depth) cfg.network.depth = *o.depth;
    if (o.channels) cfg.network.init_channels = *o.channels;
    if (o.op_set) cfg.network.op_set = std::string(op_set_name(*o.op_set));
  }
  cfg.search.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

/// Wraps library validation so diagnostics carry the config section.
inline void validate_config(const RunConfig& c) {
  auto check = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ContractViolation& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  check("search", [&] { validate(c.search); });
  check("train", [&] { validate(c.train); });
  check("mfcc", [&] { validate(c.mfcc); });
  check("supernet", [&] {
    SupernetConfig s = c.supernet;
    s.num_classes = 2;
    validate(s);
  });
  check("synthetic_data", [&] { SyntheticSource probe(c.synthetic_data); });
  if (c.network.depth < 1) throw ConfigError("network.depth: must be >= 1");
  if (c.network.init_channels < 1) throw ConfigError("network.init_channels: must be >= 1");
  if (c.out.empty()) throw ConfigError("out: output directory must be set");
  if (c.augment.noise_prob < 0 || c.augment.noise_prob > 1) throw ConfigError("augment.noise_prob: must be in [0, 1]");
  if (c.augment.noise_scale < 0 || c.augment.max_shift_ms < 0)
    throw ConfigError("augment: noise_scale and max_shift_ms must be >= 0");
}

/// Builds the sample source the config selects. A missing real dataset is
/// a configuration error naming the `data_root` key.
inline std::unique_ptr<SampleSource> make_source(const RunConfig& c) {
  if (c.synthetic) {
    SyntheticConfig d = c.synthetic_data;
    return std::make_unique<SyntheticSource>(d);
  }
  if (c.data_root.empty())
    throw ConfigError("data_root: no dataset root given (use --data-root, CELLSEARCH_DATA, data_root in the config, "
                      "or --synthetic)");
  if (!std::filesystem::is_directory(c.data_root))
    throw ConfigError("data_root: '" + c.data_root + "' is not a directory");
  try {
    return std::make_unique<SpeechCommandsSource>(scan_dataset(c.data_root),
                                                  SpeechSourceOptions{c.mfcc, c.augment, c.class_balance});
  } catch (const DatasetError& e) {
    throw ConfigError(std::string("data_root: ") + e.what());
  }
}

/// Classes the configured data source yields, without scanning a dataset.
inline std::size_t configured_classes(const RunConfig& c) {
  return c.synthetic ? c.synthetic_data.num_classes : kNumLabels;
}

/// Exclusive `<dir>/.lock`, removed on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST)
        throw std::runtime_error("run directory '" + dir.string() + "' is locked by another process (" +
                                 path_.string() + ")");
      throw std::runtime_error("cannot create " + path_.string());
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace cellsearch
