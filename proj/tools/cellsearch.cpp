// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// cellsearch: search, train, eval, params, features.

#include <CLI11.hpp>

#include <iostream>

#include "cellsearch/cli/commands.hpp"

namespace {

using namespace cellsearch;

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string data_root, out, op_set;
  std::size_t depth = 0, channels = 0;
  bool synthetic = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "JSON run configuration");
  sub->add_option("--seed", f.seed, "Master seed");
  sub->add_option("--data-root", f.data_root, "Speech Commands root (fallback: $CELLSEARCH_DATA)");
  sub->add_option("--out", f.out, "Run directory");
  sub->add_option("--depth", f.depth, "Cells (supernet for search, final network otherwise)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--channels", f.channels, "Initial channels")->check(CLI::PositiveNumber);
  sub->add_option("--op-set", f.op_set, "Operation set")->check(CLI::IsMember({"nas1", "nas2"}));
  sub->add_flag("--synthetic", f.synthetic, "Use built-in Gaussian-blob data");
}

RunConfig resolve(const CLI::App* sub, const CommonFlags& f, NetworkTarget target) {
  ConfigOverrides o;
  if (sub->count("--seed")) o.seed = f.seed;
  if (sub->count("--data-root")) o.data_root = f.data_root;
  if (sub->count("--out")) o.out = f.out;
  if (sub->count("--depth")) o.depth = f.depth;
  if (sub->count("--channels")) o.channels = f.channels;
  if (sub->count("--op-set")) o.op_set = parse_op_set(f.op_set);
  o.synthetic = f.synthetic;
  std::optional<std::filesystem::path> file;
  if (!f.config.empty()) file = f.config;
  return resolve_config(file, o, target);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable cell search for keyword spotting"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::string genotype, model, wav, features_out;

  auto* search = app.add_subcommand("search", "Search cell genotypes on a supernet");
  add_common(search, flags);

  auto* train = app.add_subcommand("train", "Train a network built from a genotype");
  add_common(train, flags);
  train->add_option("genotype", genotype, "Genotype file (default: network.genotype)");

  auto* eval = app.add_subcommand("eval", "Evaluate a model checkpoint on the test split");
  add_common(eval, flags);
  eval->add_option("model", model, "Model checkpoint")->required();

  auto* params = app.add_subcommand("params", "Count trainable parameters of a genotype network");
  add_common(params, flags);
  params->add_option("genotype", genotype, "Genotype file (default: network.genotype)");

  auto* features = app.add_subcommand("features", "Write the MFCC matrix of a WAV file");
  add_common(features, flags);
  features->add_option("wav", wav, "Input WAV")->required();
  features->add_option("output", features_out, "Output .csv or feature-cache .bin")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  return run_command(
      [&] {
        if (search->parsed()) {
          cmd_search(resolve(search, flags, NetworkTarget::Supernet), std::cout);
        } else if (train->parsed()) {
          const RunConfig cfg = resolve(train, flags, NetworkTarget::Final);
          cmd_train(cfg, genotype.empty() ? cfg.network.genotype : genotype, std::cout);
        } else if (eval->parsed()) {
          cmd_eval(resolve(eval, flags, NetworkTarget::Final), model, std::cout);
        } else if (params->parsed()) {
          const RunConfig cfg = resolve(params, flags, NetworkTarget::Final);
          cmd_params(cfg, genotype.empty() ? cfg.network.genotype : genotype, std::cout);
        } else if (features->parsed()) {
          cmd_features(resolve(features, flags, NetworkTarget::Final), wav, features_out, std::cout);
        }
      },
      std::cerr);
}
