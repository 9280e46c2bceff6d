// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Alternating first-order search: an Adam step on the architecture logits
// against a validation batch, then an SGD step on the weights against a
// training batch. Checkpoints every epoch and resumes from the latest one.

#pragma once

#include <cmath>
#include <cstdlib>
#include <optional>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellsearch/checkpoint.hpp"
#include "cellsearch/data_source.hpp"
#include "cellsearch/genotype.hpp"
#include "cellsearch/optim.hpp"
#include "cellsearch/supernet.hpp"

namespace cellsearch {

struct SearchConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double w_lr = 0.025;
  double w_lr_min = 0.0;
  double w_momentum = 0.9;
  double w_weight_decay = 3e-4;
  double alpha_lr = 3e-4;  // 0 freezes the architecture
  double alpha_beta1 = 0.5;
  double alpha_beta2 = 0.999;
  double alpha_weight_decay = 1e-3;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
};

inline void validate(const SearchConfig& c) {
  CELLSEARCH_REQUIRE(c.epochs >= 1, "search: epochs must be >= 1");
  CELLSEARCH_REQUIRE(c.batch_size >= 1, "search: batch_size must be >= 1");
  CELLSEARCH_REQUIRE(c.w_lr > 0 && c.w_lr_min >= 0 && c.w_lr_min <= c.w_lr, "search: need 0 <= w_lr_min <= w_lr, w_lr > 0");
  CELLSEARCH_REQUIRE(c.w_momentum >= 0 && c.w_momentum < 1, "search: w_momentum must be in [0, 1)");
  CELLSEARCH_REQUIRE(c.w_weight_decay >= 0 && c.alpha_weight_decay >= 0, "search: weight decay must be >= 0");
  CELLSEARCH_REQUIRE(c.alpha_lr >= 0, "search: alpha_lr must be >= 0");
  CELLSEARCH_REQUIRE(c.alpha_beta1 >= 0 && c.alpha_beta1 < 1 && c.alpha_beta2 >= 0 && c.alpha_beta2 < 1,
                     "search: Adam betas must be in [0, 1)");
  CELLSEARCH_REQUIRE(c.grad_clip > 0, "search: grad_clip must be > 0");
}

/// Seeds for every random stream, derived from the run seed.
struct SeedPlan {
  std::uint64_t seed;
  std::uint64_t init() const { return mix_seed(seed, 1); }
  std::uint64_t train_epoch(std::size_t e) const { return mix_seed(mix_seed(seed, 2), e); }
  std::uint64_t val_epoch(std::size_t e, std::size_t cycle) const {
    return mix_seed(mix_seed(mix_seed(seed, 3), e), cycle);
  }
  std::uint64_t eval() const { return mix_seed(seed, 4); }
};

struct StepLosses {
  double train_loss = NAN;
  double val_loss = NAN;  // NaN when the architecture step is disabled
};

template <typename T>
struct SearchState {
  SearchNetwork<T>& net;
  Sgd<T> w_opt;
  Adam<T> alpha_opt;

  SearchState(SearchNetwork<T>& n, const SearchConfig& cfg)
      : net(n),
        w_opt(n.parameters(), {cfg.w_momentum, cfg.w_weight_decay}),
        alpha_opt(n.arch().tensors(), {cfg.alpha_beta1, cfg.alpha_beta2, cfg.alpha_weight_decay}) {}
};

namespace detail {

template <typename T>
void set_trainable(std::vector<Tensor<T>>& ts, bool on) {
  for (auto& t : ts) t.set_requires_grad(on);
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::runtime_error(std::string("search: non-finite ") + what);
}

template <typename T>
Tensor<T> to_scalar_type(const Tensor<float>& x) {
  if constexpr (std::is_same_v<T, float>) {
    return x;
  } else {
    return Tensor<T>::from(x.shape(), std::vector<T>(x.values().begin(), x.values().end()));
  }
}

}  // namespace detail

/// Adam on alpha against `val`. w is frozen for the pass; returns the loss.
template <typename T>
double arch_step(SearchState<T>& st, const Batch& val, const SearchConfig& cfg) {
  CELLSEARCH_REQUIRE(val.size() > 0, "arch_step: empty batch");
  auto w = st.w_opt.params();
  auto alpha = st.net.arch().tensors();
  detail::set_trainable(w, false);
  st.alpha_opt.zero_grad();
  auto loss = softmax_cross_entropy(st.net.forward(detail::to_scalar_type<T>(val.features), Mode::Train), val.labels);
  const double value = static_cast<double>(loss.item());
  detail::require_finite(value, "validation loss");
  backward(loss);
  st.alpha_opt.step(cfg.alpha_lr);
  detail::set_trainable(w, true);
  return value;
}

/// Clipped SGD on w against `train`. alpha is frozen for the pass.
template <typename T>
double weight_step(SearchState<T>& st, const Batch& train, const SearchConfig& cfg, double w_lr) {
  CELLSEARCH_REQUIRE(train.size() > 0, "weight_step: empty batch");
  auto alpha = st.net.arch().tensors();
  detail::set_trainable(alpha, false);
  st.w_opt.zero_grad();
  auto loss =
      softmax_cross_entropy(st.net.forward(detail::to_scalar_type<T>(train.features), Mode::Train), train.labels);
  const double value = static_cast<double>(loss.item());
  detail::require_finite(value, "training loss");
  backward(loss);
  clip_grad_norm(st.w_opt.params(), cfg.grad_clip);
  st.w_opt.step(w_lr);
  detail::set_trainable(alpha, true);
  return value;
}

/// One alternation: the architecture step first, then the weight step at
/// the updated alpha. alpha_lr == 0 skips the architecture step.
template <typename T>
StepLosses search_step(SearchState<T>& st, const Batch& train, const Batch& val, const SearchConfig& cfg, double w_lr) {
  CELLSEARCH_REQUIRE(train.size() > 0 && val.size() > 0, "search_step: empty batch");
  StepLosses out;
  if (cfg.alpha_lr > 0) out.val_loss = arch_step(st, val, cfg);
  out.train_loss = weight_step(st, train, cfg, w_lr);
  return out;
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
  double alpha_entropy = 0;
  double lr = 0;
};

inline constexpr std::string_view kMetricsHeader = "epoch,train_loss,val_loss,val_acc,alpha_entropy,lr";

inline std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(9) << m.epoch << ',' << m.train_loss << ',' << m.val_loss << ',' << m.val_acc << ','
     << m.alpha_entropy << ',' << m.lr;
  return os.str();
}

inline EpochMetrics parse_metrics_row(const std::string& line) {
  std::vector<std::string> f;
  std::istringstream is(line);
  for (std::string cell; std::getline(is, cell, ',');) f.push_back(cell);
  if (f.size() != 6) throw CheckpointError("metrics row is malformed: '" + line + "'");
  auto num = [&](const std::string& t) {
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || *end != '\0') throw CheckpointError("metrics row is malformed: '" + line + "'");
    return v;
  };
  return {static_cast<std::size_t>(num(f[0])), num(f[1]), num(f[2]), num(f[3]), num(f[4]), num(f[5])};
}

struct SearchHistory {
  double initial_alpha_entropy = 0;
  double initial_train_loss = NAN;  // first training batch, before any weight update
  std::vector<EpochMetrics> epochs;
};

/// Loss and accuracy over whole splits, Eval-mode BN, no graph.
template <typename Net>
std::pair<double, double> evaluate_loss_accuracy(const Net& net, const SampleSource& source, std::vector<Split> splits,
                                                 std::size_t batch_size, std::uint64_t seed) {
  NoGradGuard no_grad;
  BatchIterator it(source, std::move(splits), batch_size, seed, false, false);
  double loss = 0;
  std::size_t correct = 0, total = 0;
  Batch b;
  while (it.next(b)) {
    auto logits = net.forward(b.features, Mode::Eval);
    loss += static_cast<double>(softmax_cross_entropy(logits, b.labels).item()) * static_cast<double>(b.size());
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < b.size(); ++i) {
      auto row = logits.values().subspan(i * k, k);
      const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += pred == b.labels[i];
    }
    total += b.size();
  }
  return {loss / static_cast<double>(total), static_cast<double>(correct) / static_cast<double>(total)};
}

struct SearchRunOptions {
  std::filesystem::path out_dir;  // empty: no files
  bool resume = true;
  bool eval_each_epoch = true;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct SearchResult {
  std::unique_ptr<SearchNetwork<float>> net;
  SearchHistory history;
  Genotype genotype;
  std::size_t resumed_from = 0;  // epochs restored from a checkpoint
};

inline std::filesystem::path search_checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  return dir / ("search_epoch" + std::to_string(epoch) + ".ckpt");
}

namespace detail {

inline Checkpoint snapshot_search(SearchState<float>& st, const SearchHistory& h, const SearchConfig& cfg,
                                  std::size_t epoch) {
  Checkpoint ckpt;
  export_state(st.net.state(), ckpt);
  export_state(st.net.arch_state(), ckpt);
  auto& vel = st.w_opt.velocity();
  auto& params = st.w_opt.params();
  for (std::size_t i = 0; i < vel.size(); ++i)
    ckpt.put<float>("opt.sgd.v." + std::to_string(i), params[i].shape(), vel[i], DType::F32);
  auto& m = st.alpha_opt.first_moment();
  auto& v = st.alpha_opt.second_moment();
  const auto alpha = st.net.arch().tensors();
  for (std::size_t i = 0; i < m.size(); ++i) {
    ckpt.put<double>("opt.adam.m." + std::to_string(i), alpha[i].shape(), m[i], DType::F64);
    ckpt.put<double>("opt.adam.v." + std::to_string(i), alpha[i].shape(), v[i], DType::F64);
  }
  ckpt.meta["kind"] = "search";
  ckpt.meta["epoch"] = std::to_string(epoch);
  ckpt.meta["adam_steps"] = std::to_string(st.alpha_opt.steps());
  ckpt.meta["seed"] = std::to_string(cfg.seed);
  ckpt.meta["op_set"] = std::string(op_set_name(st.net.arch().op_set));
  std::ostringstream hist;
  hist << std::setprecision(17) << h.initial_alpha_entropy << ',' << h.initial_train_loss << '\n';
  for (const auto& e : h.epochs) hist << metrics_row(e) << '\n';
  ckpt.meta["history"] = hist.str();
  return ckpt;
}

inline void restore_search(SearchState<float>& st, SearchHistory& h, const Checkpoint& ckpt) {
  import_state(st.net.state(), ckpt);
  import_state(st.net.arch_state(), ckpt);
  auto& vel = st.w_opt.velocity();
  for (std::size_t i = 0; i < vel.size(); ++i) {
    const auto& s = ckpt.get("opt.sgd.v." + std::to_string(i));
    for (std::size_t j = 0; j < vel[i].size(); ++j) vel[i][j] = static_cast<float>(s.values.at(j));
  }
  auto& m = st.alpha_opt.first_moment();
  auto& v = st.alpha_opt.second_moment();
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = ckpt.get("opt.adam.m." + std::to_string(i)).values;
    v[i] = ckpt.get("opt.adam.v." + std::to_string(i)).values;
  }
  st.alpha_opt.set_steps(std::stoull(ckpt.meta_at("adam_steps")));
  std::istringstream hist(ckpt.meta_at("history"));
  std::string line;
  std::getline(hist, line);
  {
    std::istringstream first(line);
    char c = 0;
    first >> h.initial_alpha_entropy >> c >> h.initial_train_loss;
  }
  h.epochs.clear();
  while (std::getline(hist, line))
    if (!line.empty()) h.epochs.push_back(parse_metrics_row(line));
}

inline std::size_t latest_search_checkpoint(const std::filesystem::path& dir, std::size_t max_epoch) {
  for (std::size_t e = max_epoch; e >= 1; --e)
    if (std::filesystem::exists(search_checkpoint_path(dir, e))) return e;
  return 0;
}

inline void write_metrics(const std::filesystem::path& path, const SearchHistory& h) {
  std::ofstream os(path, std::ios::trunc);
  os << kMetricsHeader << '\n';
  for (const auto& e : h.epochs) os << metrics_row(e) << '\n';
}

}  // namespace detail

/// Runs `cfg.epochs` epochs. Each epoch takes ceil(|train| / batch) steps;
/// validation batches cycle through a freshly shuffled validation split.
inline SearchResult run_search(const SampleSource& source, SupernetConfig net_cfg, const SearchConfig& cfg,
                               const SearchRunOptions& opts = {}) {
  validate(cfg);
  net_cfg.num_classes = source.num_classes();
  const SeedPlan seeds{cfg.seed};
  SearchResult result;
  {
    Rng rng(seeds.init());
    result.net = std::make_unique<SearchNetwork<float>>(net_cfg, rng);
  }
  SearchState<float> st(*result.net, cfg);
  SearchHistory& h = result.history;
  h.initial_alpha_entropy = mean_row_entropy(result.net->arch());

  std::size_t start = 0;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    if (opts.resume) {
      if (std::size_t e = detail::latest_search_checkpoint(opts.out_dir, cfg.epochs); e > 0) {
        auto ckpt = load_checkpoint(search_checkpoint_path(opts.out_dir, e));
        if (ckpt.meta_at("op_set") != op_set_name(net_cfg.op_set))
          throw CheckpointError("search: checkpoint op_set differs from the configured one");
        detail::restore_search(st, h, ckpt);
        start = e;
        result.resumed_from = e;
      }
    }
  }

  for (std::size_t epoch = start; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.w_lr, cfg.w_lr_min);
    BatchIterator train(source, {Split::Train}, cfg.batch_size, seeds.train_epoch(epoch), true, true);
    std::size_t val_cycle = 0;
    std::optional<BatchIterator> val;
    auto make_val = [&] {
      val.emplace(source, std::vector<Split>{Split::Val}, cfg.batch_size, seeds.val_epoch(epoch, val_cycle++), true, false);
    };
    make_val();
    double train_sum = 0;
    std::size_t steps = 0;
    Batch tb, vb;
    while (train.next(tb)) {
      if (!val->next(vb)) {
        make_val();
        val->next(vb);
      }
      const StepLosses l = search_step(st, tb, vb, cfg, lr);
      if (std::isnan(h.initial_train_loss)) h.initial_train_loss = l.train_loss;
      train_sum += l.train_loss;
      ++steps;
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = train_sum / static_cast<double>(steps);
    m.lr = lr;
    m.alpha_entropy = mean_row_entropy(result.net->arch());
    if (opts.eval_each_epoch) {
      auto [vl, va] = evaluate_loss_accuracy(*result.net, source, {Split::Val}, cfg.batch_size, seeds.eval());
      m.val_loss = vl;
      m.val_acc = va;
    } else {
      m.val_loss = m.val_acc = NAN;
    }
    h.epochs.push_back(m);
    if (!opts.out_dir.empty()) {
      save_checkpoint(detail::snapshot_search(st, h, cfg, epoch + 1), search_checkpoint_path(opts.out_dir, epoch + 1));
      detail::write_metrics(opts.out_dir / "metrics.csv", h);
    }
    if (opts.on_epoch) opts.on_epoch(m);
  }
  if (!opts.out_dir.empty()) detail::write_metrics(opts.out_dir / "metrics.csv", h);
  result.genotype = derive_genotype(result.net->arch());
  return result;
}

}  // namespace cellsearch
