// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Subcommand bodies. Each writes its artifacts under the run directory and
// its human-readable output to `out`; failures surface as exceptions that
// run_command() maps to exit codes.

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include "cellsearch/audio/feature_cache.hpp"
#include "cellsearch/cli/run_config.hpp"

namespace cellsearch {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string(what) + ": cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string label_for(std::size_t i, std::size_t num_classes) {
  if (num_classes == kNumLabels) return std::string(kLabelNames[i]);
  return "class" + std::to_string(i);
}

inline Genotype load_genotype(const std::string& path) {
  if (path.empty()) throw ConfigError("network.genotype: no genotype file given");
  try {
    return parse_genotype(read_text(path, "network.genotype"));
  } catch (const GenotypeParseError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Genotype plus the configured depth, width and class count.
inline NetworkPlan plan_from(const RunConfig& cfg, const std::string& genotype_path, std::size_t num_classes) {
  NetworkPlan plan;
  plan.genotype = load_genotype(genotype_path);
  if (!cfg.network.op_set.empty() && cfg.network.op_set != op_set_name(plan.genotype.op_set))
    throw ConfigError("network.op_set: configured " + cfg.network.op_set + " but genotype '" + genotype_path +
                      "' uses " + std::string(op_set_name(plan.genotype.op_set)));
  plan.depth = cfg.network.depth;
  plan.init_channels = cfg.network.init_channels;
  plan.num_classes = num_classes;
  try {
    validate(plan);
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
  return plan;
}

inline std::string format_k(std::size_t n) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << static_cast<double>(n) / 1000.0 << "K";
  return os.str();
}

inline nlohmann::ordered_json stacking_json(const NetworkPlan& plan) {
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  const auto specs = plan_cells(plan.depth, plan.init_channels);
  for (std::size_t i = 0; i < specs.size(); ++i)
    cells.push_back({{"index", i},
                     {"kind", specs[i].reduction ? "reduction" : "normal"},
                     {"channels", specs[i].channels}});
  return {{"depth", plan.depth},
          {"init_channels", plan.init_channels},
          {"reduction_cells", reduction_positions(plan.depth)},
          {"cells", cells}};
}

inline nlohmann::ordered_json confusion_json(const EvalReport& r) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : r.confusion) rows.push_back(row);
  return rows;
}

inline void print_confusion(std::ostream& out, const EvalReport& r) {
  const std::size_t k = r.confusion.size();
  out << "confusion (rows: true, cols: predicted)\n";
  for (std::size_t t = 0; t < k; ++t) {
    out << std::setw(10) << label_for(t, k);
    for (std::size_t p = 0; p < k; ++p) out << ' ' << std::setw(5) << r.confusion[t][p];
    out << '\n';
  }
}

}  // namespace detail

/// Search, then write `search.genotype`, `metrics.csv` and per-epoch
/// checkpoints. Re-running in the same directory resumes.
inline void cmd_search(const RunConfig& cfg, std::ostream& out) {
  validate_config(cfg);
  const auto source = make_source(cfg);
  const std::filesystem::path dir = cfg.out;
  RunLock lock(dir);
  detail::write_text(dir / "config.json", config_snapshot(cfg));
  SearchRunOptions opts;
  opts.out_dir = dir;
  opts.on_epoch = [&](const EpochMetrics& m) {
    out << "epoch " << m.epoch << "/" << cfg.search.epochs << " train_loss=" << m.train_loss
        << " val_loss=" << m.val_loss << " val_acc=" << m.val_acc << " alpha_entropy=" << m.alpha_entropy << '\n';
  };
  const SearchResult r = run_search(*source, cfg.supernet, cfg.search, opts);
  if (r.resumed_from > 0) out << "resumed from epoch " << r.resumed_from << '\n';
  detail::write_text(dir / "search.genotype", serialize_genotype(r.genotype));
  out << "genotype=" << (dir / "search.genotype").string() << '\n';
}

/// Final training from scratch on train + val, test evaluation, then
/// `model.ckpt`, `train_metrics.csv` and `report.json`.
inline void cmd_train(const RunConfig& cfg, const std::string& genotype_path, std::ostream& out) {
  validate_config(cfg);
  const auto source = make_source(cfg);
  const NetworkPlan plan = detail::plan_from(cfg, genotype_path, source->num_classes());
  const std::filesystem::path dir = cfg.out;
  RunLock lock(dir);
  detail::write_text(dir / "config.json", config_snapshot(cfg));
  std::ostringstream csv;
  csv << std::setprecision(17) << "epoch,train_loss,train_acc,lr\n";
  auto result = train_final(plan, *source, cfg.train, [&](const TrainEpoch& e) {
    csv << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.lr << '\n';
    out << "epoch " << e.epoch << "/" << cfg.train.epochs << " train_loss=" << e.train_loss
        << " train_acc=" << e.train_acc << '\n';
  });
  detail::write_text(dir / "train_metrics.csv", csv.str());
  save_checkpoint(model_checkpoint(*result.net), dir / "model.ckpt");

  const std::size_t params = count_parameters(plan);
  nlohmann::ordered_json report;
  report["test_accuracy"] = result.test.accuracy;
  report["test_samples"] = result.test.total;
  report["final_train_accuracy"] = result.final_train_accuracy;
  report["parameters"] = params;
  report["parameters_k"] = detail::format_k(params);
  report["op_set"] = std::string(op_set_name(plan.genotype.op_set));
  report["stacking"] = detail::stacking_json(plan);
  report["confusion"] = detail::confusion_json(result.test);
  report["epochs"] = cfg.train.epochs;
  report["seed"] = cfg.seed;
  detail::write_text(dir / "report.json", report.dump(2) + "\n");
  out << "test_accuracy=" << result.test.accuracy << '\n' << "parameters=" << params << '\n';
}

/// Loads `model.ckpt`-style checkpoints and reports test accuracy.
inline void cmd_eval(const RunConfig& cfg, const std::string& model_path, std::ostream& out) {
  validate_config(cfg);
  std::unique_ptr<DiscreteNetwork<float>> net;
  try {
    net = load_model(load_checkpoint(model_path));
  } catch (const CheckpointError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  } catch (const GenotypeParseError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  const auto source = make_source(cfg);
  if (net->plan().num_classes != source->num_classes())
    throw ConfigError("model: network has " + std::to_string(net->plan().num_classes) + " classes, data has " +
                      std::to_string(source->num_classes()));
  const EvalReport r = evaluate(*net, *source, {Split::Test}, cfg.train.batch_size);
  out << "test_samples=" << r.total << '\n' << "test_accuracy=" << r.accuracy << '\n';
  detail::print_confusion(out, r);
}

/// Per-module trainable parameter table ending in `total_params=<N>`.
inline void cmd_params(const RunConfig& cfg, const std::string& genotype_path, std::ostream& out) {
  const NetworkPlan plan = detail::plan_from(cfg, genotype_path, configured_classes(cfg));
  std::size_t total = 0;
  out << std::left << std::setw(20) << "module" << std::right << std::setw(12) << "params" << '\n';
  for (const auto& [name, n] : parameter_breakdown(plan)) {
    out << std::left << std::setw(20) << name << std::right << std::setw(12) << n << '\n';
    total += n;
  }
  out << std::left << std::setw(20) << "total" << std::right << std::setw(12) << total << '\n';
  out << "total_k=" << detail::format_k(total) << '\n';
  out << "total_params=" << total << '\n';
}

/// MFCC matrix of one WAV: CSV when `out_path` ends in .csv, otherwise a
/// one-record feature cache.
inline void cmd_features(const RunConfig& cfg, const std::string& wav_path, const std::string& out_path,
                         std::ostream& out) {
  validate_config(cfg);
  FeatureMatrix f;
  try {
    WavClip clip = load_wav(wav_path);
    if (clip.sample_rate != cfg.mfcc.sample_rate)
      throw ConfigError(wav_path + ": sample rate " + std::to_string(clip.sample_rate) + " Hz, expected " +
                        std::to_string(cfg.mfcc.sample_rate));
    f = extract_mfcc(fit_one_second(std::move(clip)), cfg.mfcc);
  } catch (const WavFormatError& e) {
    throw ConfigError(e.what());
  }
  const std::filesystem::path dst = out_path;
  if (dst.has_parent_path()) std::filesystem::create_directories(dst.parent_path());
  if (dst.extension() == ".csv") {
    detail::write_text(dst, feature_csv(f));
  } else {
    FeatureCacheWriter w(dst, f.frames, f.coeffs);
    w.append(std::filesystem::path(wav_path).filename().string(), f);
    w.close();
  }
  out << "frames=" << f.frames << " coeffs=" << f.coeffs << " -> " << dst.string() << '\n';
}

/// Runs `body`, printing failures to `err`. 2 for configuration and input
/// errors, 1 for anything else.
inline int run_command(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace cellsearch
