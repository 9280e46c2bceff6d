// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

// Discrete cell description, its derivation from architecture logits, and a
// line-oriented text format (see docs/genotype.md).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "cellsearch/cell_layout.hpp"
#include "cellsearch/supernet.hpp"

namespace cellsearch {

inline constexpr std::size_t kInputsPerNode = 2;
inline constexpr std::size_t kGenotypeEdges = kIntermediateNodes * kInputsPerNode;

struct GenotypeEdge {
  OpKind op = OpKind::Identity;
  std::size_t pred = 0;
  bool operator==(const GenotypeEdge&) const = default;
};

/// Entries [2k, 2k+1] are the two inputs of intermediate node k + 2.
using CellGenotype = std::array<GenotypeEdge, kGenotypeEdges>;

struct Genotype {
  OpSet op_set = OpSet::Nas1;
  CellGenotype normal{};
  CellGenotype reduce{};
  bool operator==(const Genotype&) const = default;
};

inline std::size_t genotype_node(std::size_t entry) { return kCellInputs + entry / kInputsPerNode; }

inline void validate(const Genotype& g) {
  for (const CellGenotype* cell : {&g.normal, &g.reduce}) {
    const char* which = cell == &g.normal ? "normal" : "reduce";
    for (std::size_t i = 0; i < kGenotypeEdges; ++i) {
      const auto& e = (*cell)[i];
      const std::size_t node = genotype_node(i);
      CELLSEARCH_REQUIRE(e.pred < node, "genotype: " << which << " node " << node << " has predecessor " << e.pred);
      CELLSEARCH_REQUIRE(e.op != OpKind::Zero, "genotype: " << which << " node " << node << " selects zero");
      CELLSEARCH_REQUIRE(op_set_contains(g.op_set, e.op), "genotype: op " << op_name(e.op) << " is not in op set "
                                                                         << op_set_name(g.op_set));
    }
    for (std::size_t k = 0; k < kIntermediateNodes; ++k)
      CELLSEARCH_REQUIRE((*cell)[2 * k].pred != (*cell)[2 * k + 1].pred,
                         "genotype: " << which << " node " << k + 2 << " selects predecessor "
                                      << (*cell)[2 * k].pred << " twice");
  }
}

namespace detail {

inline CellGenotype derive_cell(std::span<const double> logits, const std::vector<OpKind>& kinds) {
  const std::size_t k = kinds.size();
  struct Candidate {
    std::size_t pred;
    std::size_t op;
    double weight;
  };
  CellGenotype out{};
  for (std::size_t node = kCellInputs; node < kCellInputs + kIntermediateNodes; ++node) {
    std::vector<Candidate> cands;
    for (std::size_t pred = 0; pred < node; ++pred) {
      auto row = logits.subspan(edge_index(node, pred) * k, k);
      double mx = -INFINITY;
      for (double v : row) mx = std::max(mx, v);
      double z = 0;
      for (double v : row) z += std::exp(v - mx);
      Candidate best{pred, k, -1.0};
      for (std::size_t o = 0; o < k; ++o) {
        if (kinds[o] == OpKind::Zero) continue;
        const double w = std::exp(row[o] - mx) / z;
        if (w > best.weight) best = {pred, o, w};  // strict: earlier op wins ties
      }
      cands.push_back(best);
    }
    // Stable sort keeps lower predecessor first among equal weights.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.weight > b.weight; });
    if (cands[1].pred < cands[0].pred) std::swap(cands[0], cands[1]);
    const std::size_t base = (node - kCellInputs) * kInputsPerNode;
    for (std::size_t j = 0; j < kInputsPerNode; ++j) out[base + j] = {kinds[cands[j].op], cands[j].pred};
  }
  return out;
}

}  // namespace detail

/// Per edge, the strongest non-zero op by softmax weight; per node, the two
/// strongest incoming edges. Ties go to the lower predecessor, then to the
/// earlier op in the set's order. A node's two inputs are stored by
/// ascending predecessor.
template <typename T>
Genotype derive_genotype(const ArchParams<T>& alpha) {
  const auto& kinds = op_set_kinds(alpha.op_set);
  auto as_double = [](const Tensor<T>& t) {
    CELLSEARCH_REQUIRE(t.ndim() == 2 && t.dim(0) == kEdgesPerCell, "derive_genotype: alpha must be 14 x |O|");
    std::vector<double> v(t.values().begin(), t.values().end());
    for (double x : v) CELLSEARCH_REQUIRE(std::isfinite(x), "derive_genotype: non-finite alpha");
    return v;
  };
  CELLSEARCH_REQUIRE(alpha.normal.dim(1) == kinds.size() && alpha.reduce.dim(1) == kinds.size(),
                     "derive_genotype: alpha width does not match op set " << op_set_name(alpha.op_set));
  Genotype g;
  g.op_set = alpha.op_set;
  const auto n = as_double(alpha.normal);
  const auto r = as_double(alpha.reduce);
  g.normal = detail::derive_cell(n, kinds);
  g.reduce = detail::derive_cell(r, kinds);
  return g;
}

// --- text format -----------------------------------------------------------

inline constexpr std::string_view kGenotypeHeader = "cellsearch-genotype v1";

class GenotypeParseError : public std::runtime_error {
 public:
  GenotypeParseError(std::size_t line, const std::string& what)
      : std::runtime_error("genotype line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline std::string serialize_genotype(const Genotype& g) {
  std::ostringstream os;
  os << kGenotypeHeader << '\n' << "op_set " << op_set_name(g.op_set) << '\n';
  for (const auto& [tag, cell] : {std::pair{"normal", &g.normal}, std::pair{"reduce", &g.reduce}})
    for (std::size_t i = 0; i < kGenotypeEdges; ++i)
      os << tag << ' ' << genotype_node(i) << ' ' << op_name((*cell)[i].op) << ' ' << (*cell)[i].pred << '\n';
  return os.str();
}

inline Genotype parse_genotype(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::optional<OpSet> op_set;
  std::array<std::vector<GenotypeEdge>, kIntermediateNodes> normal, reduce;
  std::size_t last_line = 0;
  auto parse_index = [&](const std::string& tok, const char* field) -> std::size_t {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || tok.empty() || tok[0] == '-')
      throw GenotypeParseError(lineno, std::string("field '") + field + "' is not an index: '" + tok + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    last_line = lineno;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (!header) {
      if (line.substr(first) != kGenotypeHeader)
        throw GenotypeParseError(lineno, "expected header '" + std::string(kGenotypeHeader) + "', got '" + line + "'");
      header = true;
      continue;
    }
    if (tok[0] == "op_set") {
      if (tok.size() != 2) throw GenotypeParseError(lineno, "op_set takes one value");
      if (op_set) throw GenotypeParseError(lineno, "duplicate op_set");
      op_set = parse_op_set(tok[1]);
      if (!op_set) throw GenotypeParseError(lineno, "unknown op set '" + tok[1] + "'");
      continue;
    }
    if (tok[0] != "normal" && tok[0] != "reduce")
      throw GenotypeParseError(lineno, "unknown record '" + tok[0] + "'");
    if (tok.size() != 4)
      throw GenotypeParseError(lineno, "expected '<cell> <node> <op> <pred>', got " + std::to_string(tok.size()) +
                                           " fields");
    const std::size_t node = parse_index(tok[1], "node");
    if (node < kCellInputs || node >= kCellInputs + kIntermediateNodes)
      throw GenotypeParseError(lineno, "node " + tok[1] + " outside [2, 5]");
    auto op = parse_op_name(tok[2]);
    if (!op) throw GenotypeParseError(lineno, "unknown op '" + tok[2] + "'");
    const std::size_t pred = parse_index(tok[3], "pred");
    if (pred >= node) throw GenotypeParseError(lineno, "predecessor " + tok[3] + " of node " + tok[1] + " must be < node");
    auto& slots = (tok[0] == "normal" ? normal : reduce)[node - kCellInputs];
    if (slots.size() == kInputsPerNode)
      throw GenotypeParseError(lineno, tok[0] + " node " + tok[1] + " has more than two inputs");
    slots.push_back({*op, pred});
  }
  if (!header) throw GenotypeParseError(lineno, "empty genotype text");
  if (!op_set) throw GenotypeParseError(last_line, "missing op_set tag");
  Genotype g;
  g.op_set = *op_set;
  for (auto [tag, src, dst] : {std::tuple{"normal", &normal, &g.normal}, std::tuple{"reduce", &reduce, &g.reduce}})
    for (std::size_t k = 0; k < kIntermediateNodes; ++k) {
      if ((*src)[k].size() != kInputsPerNode)
        throw GenotypeParseError(last_line, std::string(tag) + " node " + std::to_string(k + kCellInputs) + " has " +
                                                std::to_string((*src)[k].size()) + " inputs, expected 2");
      (*dst)[2 * k] = (*src)[k][0];
      (*dst)[2 * k + 1] = (*src)[k][1];
    }
  try {
    validate(g);
  } catch (const ContractViolation& e) {
    throw GenotypeParseError(last_line, e.what());
  }
  return g;
}

/// Every node takes inputs 0 and 1 through the same op.
inline Genotype uniform_genotype(OpSet op_set, OpKind op) {
  Genotype g;
  g.op_set = op_set;
  for (std::size_t i = 0; i < kGenotypeEdges; ++i) g.normal[i] = g.reduce[i] = {op, i % 2};
  return g;
}

}  // namespace cellsearch
