#pragma once

// Independent reference computations used to check the workloads. They walk
// the matrix cell by cell with std::set and never touch the bitset paths.

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "circulate/workloads.hpp"

namespace circulate::testing {

using GeneSet = std::set<std::string>;

inline std::size_t count_expressing(const ExpressionMatrix& m, const GeneSet& genes) {
  std::size_t c = 0;
  for (std::size_t r = 0; r < m.n_regions(); ++r) {
    bool all = true;
    for (std::size_t g = 0; g < m.n_genes() && all; ++g) {
      if (genes.contains(m.genes()[g]) && !m.at(r, g)) all = false;
    }
    c += all;
  }
  return c;
}

// Every disjoint (A, B) pair of non-empty gene sets with |A ∪ B| <= max_itemset
// that clears both thresholds, keyed by (A, B).
inline std::map<std::pair<GeneSet, GeneSet>, AssociationRule> brute_force_rules(
    const ExpressionMatrix& m, const MiningParams& p) {
  std::map<std::pair<GeneSet, GeneSet>, AssociationRule> out;
  const std::size_t g = m.n_genes();
  const double n = static_cast<double>(m.n_regions());
  // Assign each gene to A (1), B (2) or neither (0): all 3^g labelings.
  std::size_t total = 1;
  for (std::size_t i = 0; i < g; ++i) total *= 3;
  for (std::size_t code = 0; code < total; ++code) {
    GeneSet a, b;
    std::size_t c = code;
    for (std::size_t i = 0; i < g; ++i, c /= 3) {
      if (c % 3 == 1) a.insert(m.genes()[i]);
      if (c % 3 == 2) b.insert(m.genes()[i]);
    }
    if (a.empty() || b.empty() || static_cast<int>(a.size() + b.size()) > p.max_itemset) continue;
    GeneSet both = a;
    both.insert(b.begin(), b.end());
    const auto joint = count_expressing(m, both);
    if (static_cast<double>(joint) / n < p.min_support) continue;
    const auto ca = count_expressing(m, a);
    const double confidence = static_cast<double>(joint) / static_cast<double>(ca);
    if (confidence < p.min_confidence) continue;
    const auto cb = count_expressing(m, b);
    AssociationRule r{{a.begin(), a.end()}, {b.begin(), b.end()}, static_cast<double>(joint) / n,
                      confidence, confidence / (static_cast<double>(cb) / n)};
    out.emplace(std::make_pair(a, b), r);
  }
  return out;
}

inline std::set<std::size_t> regions_of(const ExpressionMatrix& m, std::size_t gene) {
  std::set<std::size_t> s;
  for (std::size_t r = 0; r < m.n_regions(); ++r) {
    if (m.at(r, gene)) s.insert(r);
  }
  return s;
}

inline double set_jaccard(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
  std::vector<std::size_t> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  if (uni.empty()) return 1.0;
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

// Best similarity over every tree with one leaf or two distinct leaves.
inline double exhaustive_best_similarity(const ExpressionMatrix& m,
                                         const std::set<std::size_t>& target, int max_leaves) {
  double best = 0.0;
  for (std::size_t a = 0; a < m.n_genes(); ++a) {
    const auto sa = regions_of(m, a);
    best = std::max(best, set_jaccard(target, sa));
    if (max_leaves < 2) continue;
    for (std::size_t b = 0; b < m.n_genes(); ++b) {
      if (a == b) continue;
      const auto sb = regions_of(m, b);
      std::set<std::size_t> u, i, d;
      std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(u, u.end()));
      std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(i, i.end()));
      std::set_difference(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(d, d.end()));
      best = std::max({best, set_jaccard(target, u), set_jaccard(target, i), set_jaccard(target, d)});
    }
  }
  return best;
}

inline ExpressionMatrix random_matrix(std::mt19937_64& rng, std::size_t max_genes,
                                      std::size_t max_regions) {
  const auto g = std::uniform_int_distribution<std::size_t>(1, max_genes)(rng);
  const auto r = std::uniform_int_distribution<std::size_t>(1, max_regions)(rng);
  const double density = std::uniform_real_distribution<double>(0.15, 0.85)(rng);
  return gen_expression(rng(), g, r, density);
}

}  // namespace circulate::testing
