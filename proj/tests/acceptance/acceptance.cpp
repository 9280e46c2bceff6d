// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL/SKIP line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cellsearch/cli/commands.hpp"
#include "support/genotype_oracles.hpp"
#include "support/gradcheck.hpp"
#include "support/mfcc_oracle.hpp"
#include "support/temp_dir.hpp"

namespace {

using namespace cellsearch;
using testing::gradcheck;
using testing::projection_like;
using testing::random_tensor;

enum class Outcome { Pass, Fail, Skip };

struct Verdict {
  Outcome outcome = Outcome::Fail;
  std::string detail;
};

Verdict check(bool ok, std::string detail) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(detail)}; }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

std::vector<double> oracle_softmax(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (p[i] = std::exp(z[i] - mx));
  for (auto& v : p) v /= total;
  return p;
}

std::vector<OpPtr<double>> build_all(OpSet s, std::size_t c, std::size_t stride, Rng& rng) {
  std::vector<OpPtr<double>> ops;
  for (OpKind k : op_set_kinds(s)) ops.push_back(build_op<double>(k, c, stride, rng));
  return ops;
}

// --- gradient fidelity ------------------------------------------------------

Verdict gradient_fidelity() {
  const std::clock_t start = std::clock();
  std::size_t cases = 0;
  double worst = 0;
  std::string worst_case;
  auto record = [&](const testing::GradCheckResult& r, const std::string& name) {
    ++cases;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_case = name;
    }
  };

  struct ConvCase {
    std::size_t c_in, c_out, k, stride, padding, dilation, groups;
  };
  const std::vector<ConvCase> convs{{2, 3, 3, 1, 1, 1, 1}, {3, 2, 3, 2, 1, 1, 1}, {2, 2, 3, 1, 2, 2, 1},
                                    {4, 4, 5, 1, 2, 1, 4}, {4, 4, 3, 2, 2, 2, 4}, {2, 3, 1, 1, 0, 1, 1}};
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& p = convs[i];
    std::mt19937_64 data(100 + i);
    auto x = random_tensor({2, p.c_in, 6, 5}, data);
    auto w = random_tensor({p.c_out, p.c_in / p.groups, p.k, p.k}, data);
    Tensor<double> proj;
    auto r = gradcheck({x, w}, [&] {
      auto y = conv2d(x, w, {p.stride, p.padding, p.dilation, p.groups});
      if (!proj.defined()) proj = projection_like(y, 200 + i);
      return sum(mul(y, proj));
    });
    record(r, "conv2d#" + std::to_string(i));
  }

  for (Mode mode : {Mode::Train, Mode::Eval}) {
    std::mt19937_64 data(mode == Mode::Train ? 11 : 12);
    auto x = random_tensor({3, 2, 4, 3}, data);
    auto g = random_tensor({2}, data);
    auto b = random_tensor({2}, data);
    std::vector<double> rm{0.1, -0.2}, rv{0.8, 1.3};
    Tensor<double> proj;
    auto r = gradcheck({x, g, b}, [&] {
      auto y = batch_norm(x, g, b, std::span<double>(rm), std::span<double>(rv), mode);
      if (!proj.defined()) proj = projection_like(y, 13);
      return sum(mul(y, proj));
    });
    record(r, mode == Mode::Train ? "batch_norm/train" : "batch_norm/eval");
  }

  const OpKind convolutional[] = {OpKind::DilConv3, OpKind::DilConv5, OpKind::SepConv5, OpKind::SepConv7,
                                  OpKind::SepConv9, OpKind::RegConv3};
  for (OpKind k : convolutional)
    for (std::size_t stride : {1u, 2u}) {
      Rng rng(static_cast<std::uint64_t>(k) * 31 + stride);
      auto op = build_op<double>(k, 2, stride, rng);
      std::mt19937_64 data(static_cast<std::uint64_t>(k) * 17 + stride);
      auto x = random_tensor({2, 2, 5, 4}, data);
      testing::clear_kinks(x);
      std::vector<Tensor<double>> leaves{x};
      for (auto& p : op->parameters()) leaves.push_back(p);
      Tensor<double> proj;
      auto r = gradcheck(leaves, [&] {
        auto y = op->forward(x, Mode::Train);
        if (!proj.defined()) proj = projection_like(y, 300 + cases);
        return sum(mul(y, proj));
      });
      record(r, std::string(op_name(k)) + "/s" + std::to_string(stride));
    }

  for (OpSet s : {OpSet::Nas1, OpSet::Nas2}) {
    Rng rng(41);
    MixedEdge<double> edge(s, 2, 1, rng);
    std::mt19937_64 data(42);
    auto x = random_tensor({2, 2, 4, 4}, data);
    testing::clear_kinks(x);
    auto alpha = random_tensor({op_set_kinds(s).size()}, data, true, 0.5);
    std::vector<Tensor<double>> leaves{x, alpha};
    for (auto& p : edge.parameters()) leaves.push_back(p);
    Tensor<double> proj;
    auto r = gradcheck(leaves, [&] {
      auto y = edge.forward(x, softmax_rows(alpha), Mode::Train);
      if (!proj.defined()) proj = projection_like(y, 43);
      return sum(mul(y, proj));
    });
    record(r, std::string("mixed_edge/") + std::string(op_set_name(s)));
  }

  for (OpSet s : {OpSet::Nas1, OpSet::Nas2}) {
    Rng rng(21);
    SearchNetwork<double> net({1, 2, 3, s}, rng);
    std::mt19937_64 data(22);
    auto x = random_tensor({2, 1, 5, 4}, data, false);
    for (auto& a : net.arch().tensors())
      for (auto& z : a.mutable_values()) z = std::normal_distribution<double>(0, 0.5)(data);
    const std::vector<int> labels{0, 2};
    std::vector<Tensor<double>> leaves = net.parameters();
    for (auto& a : net.arch().tensors()) leaves.push_back(a);
    auto r = gradcheck(leaves, [&] { return softmax_cross_entropy(net.forward(x, Mode::Train), labels); });
    record(r, std::string("micro_supernet/") + std::string(op_set_name(s)));
  }

  const double cpu_s = static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
  return check(cases >= 20 && worst < 1e-4 && cpu_s < 120.0,
               std::to_string(cases) + " cases, max rel err " + fmt(worst) + " (" + worst_case + "), " + fmt(cpu_s) +
                   " s cpu");
}

// --- shape laws -------------------------------------------------------------

Verdict shape_laws() {
  std::mt19937_64 gen(77);
  std::uniform_int_distribution<std::size_t> batch(1, 3), ch(1, 3), ext(1, 16);
  std::size_t violations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = batch(gen), c = ch(gen), h = ext(gen), w = ext(gen);
    const OpSet s = trial % 2 == 0 ? OpSet::Nas1 : OpSet::Nas2;
    const std::size_t k = op_set_kinds(s).size();
    Rng rng(trial);
    auto x = Tensor<float>::full({n, 4 * c, h, w}, 0.5f);
    const auto weights = softmax_rows(Tensor<float>::zeros({14, k}));
    SearchCell<float> normal({false, false, 4 * c, 4 * c, c}, s, rng);
    SearchCell<float> reduce({true, false, 4 * c, 4 * c, 2 * c}, s, rng);
    if (normal.forward(x, x, weights, Mode::Train).shape() != x.shape()) ++violations;
    if (reduce.forward(x, x, weights, Mode::Train).shape() != Shape{n, 8 * c, halved(h, 2), halved(w, 2)})
      ++violations;
  }
  return check(violations == 0, "50 shapes, " + std::to_string(violations) + " violations");
}

// --- mixed-edge oracle ------------------------------------------------------

Verdict mixed_edge_oracle() {
  double worst = 0;
  bool sizes_ok = op_set_kinds(OpSet::Nas1).size() == 9 && op_set_kinds(OpSet::Nas2).size() == 7;
  for (OpSet s : {OpSet::Nas1, OpSet::Nas2})
    for (std::size_t stride : {1u, 2u})
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed + 10 * stride);
        auto ops = build_all(s, 3, stride, rng);
        std::mt19937_64 data(seed + 500);
        auto x = random_tensor({2, 3, 9, 7}, data, false);
        auto alpha = random_tensor({ops.size()}, data, false, 2.0);
        for (Mode mode : {Mode::Train, Mode::Eval}) {
          auto y = mixed_edge_forward(x, alpha, std::span<const OpPtr<double>>(ops), mode);
          const auto p = oracle_softmax(alpha.values());
          std::vector<double> expected(y.numel(), 0.0);
          for (std::size_t o = 0; o < ops.size(); ++o) {
            auto out = ops[o]->forward(x, mode);
            for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += p[o] * out.at(i);
          }
          for (std::size_t i = 0; i < expected.size(); ++i) worst = std::max(worst, std::abs(y.at(i) - expected[i]));
        }
      }
  return check(sizes_ok && worst < 1e-6, "|O| = 9 / 7, max abs err " + fmt(worst));
}

// --- derivation oracle ------------------------------------------------------

Verdict derivation_oracle() {
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, zeros = 0, tie_draws = 0;
  for (int draw = 0; draw < 50; ++draw) {
    const OpSet s = draw % 2 == 0 ? OpSet::Nas1 : OpSet::Nas2;
    const bool quantized = draw % 3 == 0;
    tie_draws += quantized;
    auto a = testing::random_alpha(s, rng, quantized);
    const Genotype g = derive_genotype(a);
    if (!(g == testing::oracle_derive(a))) ++mismatches;
    for (const auto* cell : {&g.normal, &g.reduce})
      for (const auto& e : *cell) zeros += e.op == OpKind::Zero;
  }
  return check(mismatches == 0 && zeros == 0 && tie_draws > 0,
               "50 draws (" + std::to_string(tie_draws) + " with ties), " + std::to_string(mismatches) +
                   " mismatches, " + std::to_string(zeros) + " zero ops");
}

// --- parameter count --------------------------------------------------------

Verdict parameter_count() {
  std::mt19937_64 gen(9);
  const std::vector<Genotype> genotypes{uniform_genotype(OpSet::Nas1, OpKind::SepConv5),
                                        testing::random_genotype(OpSet::Nas1, gen),
                                        testing::random_genotype(OpSet::Nas2, gen)};
  std::size_t configs = 0, mismatches = 0;
  for (const auto& g : genotypes)
    for (std::size_t depth : {6u, 12u})
      for (std::size_t c : {16u, 24u, 36u}) {
        NetworkPlan plan{g, depth, c, kNumLabels};
        Rng rng(1);
        DiscreteNetwork<float> net(plan, rng);
        ++configs;
        if (count_parameters(plan) != testing::enumerate_parameter_tensors(net)) ++mismatches;
      }
  return check(configs == 18 && mismatches == 0,
               std::to_string(configs) + " configurations, " + std::to_string(mismatches) + " mismatches");
}

// --- MFCC -------------------------------------------------------------------

Verdict mfcc_contract() {
  bool shapes_ok = true;
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int i = 0; i < 5; ++i) {
    WavClip c;
    c.samples.resize(16000);
    for (auto& s : c.samples) s = u(rng) * static_cast<float>(i) / 4.0f;
    const auto f = extract_mfcc(c);
    shapes_ok = shapes_ok && f.frames == 101 && f.coeffs == 40 && f.values.size() == 101 * 40;
  }
  WavClip tone;
  tone.samples.resize(16000);
  for (std::size_t n = 0; n < tone.samples.size(); ++n)
    tone.samples[n] = static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * 440.0 * static_cast<double>(n) / 16000));
  const auto f = extract_mfcc(tone);
  const auto ref = testing::reference_mfcc(tone.samples);
  double worst = 0;
  bool ref_ok = ref.size() == 101;
  for (std::size_t t = 0; ref_ok && t < 101; ++t) {
    ref_ok = ref[t].size() == 40;
    for (std::size_t k = 0; ref_ok && k < 40; ++k) worst = std::max(worst, std::abs(f.at(t, k) - ref[t][k]));
  }
  return check(shapes_ok && ref_ok && worst < 1e-6, "101x40 on 5 clips, tone max abs err " + fmt(worst));
}

// --- augmentation statistics ------------------------------------------------

Verdict augmentation_statistics() {
  std::mt19937_64 rng(2026);
  const std::vector<std::size_t> lengths{20000, 30000};
  constexpr int kDraws = 10000, kBins = 20;
  int fired = 0;
  std::vector<int> counts(kBins, 0);
  bool in_range = true;
  for (int i = 0; i < kDraws; ++i) {
    const auto d = draw_augment({}, lengths, 16000, rng);
    fired += d.noise;
    in_range = in_range && d.shift_ms >= -100.0 && d.shift_ms <= 100.0;
    ++counts[std::clamp(static_cast<int>((d.shift_ms + 100.0) / 200.0 * kBins), 0, kBins - 1)];
  }
  const double expected = static_cast<double>(kDraws) / kBins;
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const double rate = static_cast<double>(fired) / kDraws;
  // 36.191 is the upper 1% point of chi-square with 19 degrees of freedom.
  return check(std::abs(rate - 0.8) <= 0.015 && in_range && chi2 < 36.191,
               "noise rate " + fmt(rate) + ", shift chi2 " + fmt(chi2) + " (< 36.191)");
}

// --- search dynamics --------------------------------------------------------

Verdict search_dynamics() {
  const auto start = std::chrono::steady_clock::now();
  SyntheticSource source(SyntheticConfig{});
  SearchConfig cfg;
  cfg.epochs = 5;
  const auto r = run_search(source, {1, 8, source.num_classes(), OpSet::Nas1}, cfg, {});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& h = r.history;
  const double k = static_cast<double>(op_set_kinds(OpSet::Nas1).size());
  const bool near_uniform = h.initial_alpha_entropy >= 0.999 * std::log(k);
  const double final_loss = h.epochs.back().train_loss, final_entropy = h.epochs.back().alpha_entropy;
  return check(h.epochs.size() == 5 && final_loss < 0.5 * h.initial_train_loss && near_uniform &&
                   final_entropy < h.initial_alpha_entropy && seconds < 600.0,
               "loss " + fmt(h.initial_train_loss) + " -> " + fmt(final_loss) + ", entropy " +
                   std::to_string(h.initial_alpha_entropy) + " -> " + std::to_string(final_entropy) + ", " +
                   fmt(seconds) + " s");
}

// --- determinism ------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunConfig small_run(const std::filesystem::path& out) {
  ConfigOverrides o;
  o.seed = 17;
  o.out = out.string();
  o.synthetic = true;
  RunConfig cfg = resolve_config(std::nullopt, o, NetworkTarget::Final);
  cfg.synthetic_data.height = 24;
  cfg.synthetic_data.width = 12;
  cfg.synthetic_data.train_per_class = 16;
  cfg.synthetic_data.val_per_class = 16;
  cfg.synthetic_data.test_per_class = 16;
  cfg.supernet = {1, 4, 2, OpSet::Nas1};
  cfg.search.epochs = 2;
  cfg.search.batch_size = 8;
  cfg.network.depth = 3;
  cfg.network.init_channels = 4;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 8;
  return cfg;
}

Verdict determinism() {
  testing::TempDir dir;
  std::ostringstream sink;
  std::vector<std::string> genotypes;
  for (const char* run : {"search_a", "search_b"}) {
    cmd_search(small_run(dir.path() / run), sink);
    genotypes.push_back(slurp(dir.path() / run / "search.genotype"));
  }
  std::vector<double> accuracies;
  for (const char* run : {"train_a", "train_b"}) {
    cmd_train(small_run(dir.path() / run), (dir.path() / "search_a" / "search.genotype").string(), sink);
    accuracies.push_back(nlohmann::json::parse(slurp(dir.path() / run / "report.json")).at("test_accuracy"));
  }
  const bool same_genotype = !genotypes[0].empty() && genotypes[0] == genotypes[1];
  return check(same_genotype && accuracies[0] == accuracies[1],
               std::string("genotype files ") + (same_genotype ? "identical" : "differ") + ", accuracy " +
                   fmt(accuracies[0]) + " / " + fmt(accuracies[1]));
}

// --- full-data spot check ---------------------------------------------------

Genotype spot_check_genotype() {
  Genotype g;
  g.op_set = OpSet::Nas1;
  g.normal = {{{OpKind::SepConv5, 0}, {OpKind::SepConv5, 1}, {OpKind::SepConv5, 0}, {OpKind::DilConv3, 1},
               {OpKind::Identity, 0}, {OpKind::SepConv7, 2}, {OpKind::Identity, 1}, {OpKind::DilConv5, 3}}};
  g.reduce = {{{OpKind::MaxPool3, 0}, {OpKind::SepConv5, 1}, {OpKind::MaxPool3, 1}, {OpKind::Identity, 2},
               {OpKind::MaxPool3, 0}, {OpKind::SepConv5, 2}, {OpKind::Identity, 2}, {OpKind::AvgPool3, 3}}};
  return g;
}

Verdict full_data_spot_check() {
  const char* root = std::getenv("CELLSEARCH_DATA");
  if (!root || !*root || !std::filesystem::is_directory(root))
    return {Outcome::Skip, "CELLSEARCH_DATA does not name a dataset directory"};
  testing::TempDir dir;
  ConfigOverrides o;
  o.out = (dir.path() / "spot").string();
  o.data_root = root;
  RunConfig cfg = resolve_config(std::nullopt, o, NetworkTarget::Final);
  cfg.network.depth = 6;
  cfg.network.init_channels = 16;
  cfg.train.epochs = 20;
  const auto genotype_path = dir.path() / "spot.genotype";
  std::ofstream(genotype_path) << serialize_genotype(spot_check_genotype());
  std::ostringstream sink;
  cmd_train(cfg, genotype_path.string(), sink);
  const double acc = nlohmann::json::parse(slurp(dir.path() / "spot" / "report.json")).at("test_accuracy");
  return check(acc > 0.85, "test accuracy " + fmt(acc) + " (> 0.85)");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient_fidelity", gradient_fidelity},
      {"shape_laws", shape_laws},
      {"mixed_edge_oracle", mixed_edge_oracle},
      {"derivation_oracle", derivation_oracle},
      {"parameter_count_oracle", parameter_count},
      {"mfcc_contract", mfcc_contract},
      {"augmentation_statistics", augmentation_statistics},
      {"search_dynamics", search_dynamics},
      {"determinism", determinism},
      {"full_data_spot_check", full_data_spot_check},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = v.outcome == Outcome::Pass ? "PASS" : v.outcome == Outcome::Skip ? "SKIP" : "FAIL";
    failures += v.outcome == Outcome::Fail;
    std::cout << tag << ' ' << name << ": " << v.detail << std::endl;
  }
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
