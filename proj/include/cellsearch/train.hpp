// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Training a derived network from scratch and scoring it.

#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "cellsearch/checkpoint.hpp"
#include "cellsearch/data_source.hpp"
#include "cellsearch/network.hpp"
#include "cellsearch/optim.hpp"
#include "cellsearch/search.hpp"

namespace cellsearch {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double lr = 0.025;
  double lr_min = 0.0;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  CELLSEARCH_REQUIRE(c.batch_size >= 1, "train: batch_size must be >= 1");
  CELLSEARCH_REQUIRE(c.lr > 0 && c.lr_min >= 0 && c.lr_min <= c.lr, "train: need 0 <= lr_min <= lr, lr > 0");
  CELLSEARCH_REQUIRE(c.momentum >= 0 && c.momentum < 1, "train: momentum must be in [0, 1)");
  CELLSEARCH_REQUIRE(c.weight_decay >= 0, "train: weight_decay must be >= 0");
  CELLSEARCH_REQUIRE(c.grad_clip > 0, "train: grad_clip must be > 0");
}

struct EvalReport {
  double accuracy = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

template <typename Net>
EvalReport evaluate(const Net& net, const SampleSource& source, std::vector<Split> splits, std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t k = source.num_classes();
  EvalReport r;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  BatchIterator it(source, std::move(splits), batch_size, 0, false, false);
  std::size_t correct = 0;
  Batch b;
  while (it.next(b)) {
    auto logits = net.forward(b.features, Mode::Eval);
    for (std::size_t i = 0; i < b.size(); ++i) {
      auto row = logits.values().subspan(i * k, k);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      const auto truth = static_cast<std::size_t>(b.labels[i]);
      ++r.confusion[truth][pred];
      correct += pred == truth;
    }
    r.total += b.size();
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  return r;
}

struct TrainEpoch {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;  // running accuracy over the epoch's batches
  double lr = 0;
};

struct TrainResult {
  std::unique_ptr<DiscreteNetwork<float>> net;
  std::vector<TrainEpoch> history;
  double final_train_accuracy = 0;  // Eval-mode pass over the training splits
  EvalReport test;
};

/// Fresh init, SGD with momentum and cosine schedule on train + val,
/// then a test-split evaluation.
inline TrainResult train_final(const NetworkPlan& plan_in, const SampleSource& source, const TrainConfig& cfg,
                               const std::function<void(const TrainEpoch&)>& on_epoch = {}) {
  validate(cfg);
  NetworkPlan plan = plan_in;
  plan.num_classes = source.num_classes();
  const SeedPlan seeds{cfg.seed};
  TrainResult result;
  {
    Rng rng(seeds.init());
    result.net = std::make_unique<DiscreteNetwork<float>>(plan, rng);
  }
  auto& net = *result.net;
  Sgd<float> opt(net.parameters(), {cfg.momentum, cfg.weight_decay});
  const std::vector<Split> train_splits{Split::Train, Split::Val};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min);
    BatchIterator it(source, train_splits, cfg.batch_size, seeds.train_epoch(epoch), true, true);
    double loss_sum = 0;
    std::size_t correct = 0, seen = 0, steps = 0;
    Batch b;
    while (it.next(b)) {
      opt.zero_grad();
      auto logits = net.forward(b.features, Mode::Train);
      auto loss = softmax_cross_entropy(logits, b.labels);
      const double l = static_cast<double>(loss.item());
      detail::require_finite(l, "training loss");
      const std::size_t k = logits.dim(1);
      for (std::size_t i = 0; i < b.size(); ++i) {
        auto row = logits.values().subspan(i * k, k);
        correct += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == b.labels[i];
      }
      seen += b.size();
      backward(loss);
      clip_grad_norm(opt.params(), cfg.grad_clip);
      opt.step(lr);
      loss_sum += l;
      ++steps;
    }
    TrainEpoch e{epoch + 1, loss_sum / static_cast<double>(steps),
                 static_cast<double>(correct) / static_cast<double>(seen), lr};
    result.history.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  result.final_train_accuracy = evaluate(net, source, train_splits, cfg.batch_size).accuracy;
  result.test = evaluate(net, source, {Split::Test}, cfg.batch_size);
  return result;
}

/// Model checkpoint: weights, BN statistics and the plan needed to rebuild.
inline Checkpoint model_checkpoint(const DiscreteNetwork<float>& net) {
  Checkpoint ckpt;
  export_state(net.state(), ckpt);
  ckpt.meta["kind"] = "model";
  ckpt.meta["genotype"] = serialize_genotype(net.plan().genotype);
  ckpt.meta["depth"] = std::to_string(net.plan().depth);
  ckpt.meta["init_channels"] = std::to_string(net.plan().init_channels);
  ckpt.meta["num_classes"] = std::to_string(net.plan().num_classes);
  return ckpt;
}

inline std::unique_ptr<DiscreteNetwork<float>> load_model(const Checkpoint& ckpt) {
  if (ckpt.meta_at("kind") != "model") throw CheckpointError("checkpoint is not a model checkpoint");
  NetworkPlan plan;
  plan.genotype = parse_genotype(ckpt.meta_at("genotype"));
  plan.depth = std::stoull(ckpt.meta_at("depth"));
  plan.init_channels = std::stoull(ckpt.meta_at("init_channels"));
  plan.num_classes = std::stoull(ckpt.meta_at("num_classes"));
  Rng rng(0);
  auto net = std::make_unique<DiscreteNetwork<float>>(plan, rng);
  import_state(net->state(), ckpt);
  return net;
}

}  // namespace cellsearch
