#pragma once

// Deterministic services hosted by proxies: synthetic spatial gene-expression
// sources, collation, association-rule mining over regions, and composition
// of gene patterns toward a target region set.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "circulate/service.hpp"

namespace circulate {

// Fixed-size bitset over regions.
class RegionSet {
 public:
  RegionSet() = default;
  explicit RegionSet(std::size_t n) : n_(n), words_((n + 63) / 64, 0) {}

  std::size_t universe() const { return n_; }
  bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1U; }
  void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
  std::size_t count() const;

  RegionSet operator|(const RegionSet& o) const;
  RegionSet operator&(const RegionSet& o) const;
  RegionSet operator-(const RegionSet& o) const;
  std::size_t intersection_count(const RegionSet& o) const;
  std::size_t union_count(const RegionSet& o) const;

  friend bool operator==(const RegionSet&, const RegionSet&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

// Boolean regions x genes matrix, stored as row-major bit-packed rows padded
// to a byte (most significant bit = first gene).
class ExpressionMatrix {
 public:
  ExpressionMatrix() = default;
  // Throws BadParams on duplicate names.
  ExpressionMatrix(std::vector<std::string> genes, std::vector<std::string> regions);

  const std::vector<std::string>& genes() const { return genes_; }
  const std::vector<std::string>& regions() const { return regions_; }
  std::size_t n_genes() const { return genes_.size(); }
  std::size_t n_regions() const { return regions_.size(); }
  std::size_t row_stride() const { return stride_; }

  bool at(std::size_t region, std::size_t gene) const {
    return (cells_[region * stride_ + gene / 8] >> (7 - gene % 8)) & 1U;
  }
  void set(std::size_t region, std::size_t gene, bool value);

  const std::vector<std::uint8_t>& packed() const { return cells_; }
  std::vector<std::uint8_t>& packed() { return cells_; }

  std::optional<std::size_t> gene_index(std::string_view gene) const;
  RegionSet gene_regions(std::size_t gene) const;
  // Copy with one gene column removed.
  ExpressionMatrix without_gene(std::size_t gene) const;

  friend bool operator==(const ExpressionMatrix&, const ExpressionMatrix&) = default;

 private:
  std::vector<std::string> genes_;
  std::vector<std::string> regions_;
  std::size_t stride_ = 0;
  std::vector<std::uint8_t> cells_;
};

// {"genes":[...],"regions":[...],"cells":"<base64>"}
std::string encode_matrix(const ExpressionMatrix& m);
ExpressionMatrix decode_matrix(std::string_view json_text);

// prefix + index zero-padded to the width of count-1 (at least 3 digits).
std::string indexed_name(std::string_view prefix, std::size_t i, std::size_t count);

// Genes g000.., regions <prefix>000..; each cell is set with probability
// `density`, driven by mt19937_64 raw output so the bits are portable.
ExpressionMatrix gen_expression(std::uint64_t seed, std::size_t n_genes, std::size_t n_regions,
                                double density, std::string_view region_prefix = "r");

// Row concatenation. Throws GeneMismatch / DuplicateRegion.
ExpressionMatrix collate(std::span<const ExpressionMatrix> parts);

struct AssociationRule {
  std::vector<std::string> antecedent;
  std::vector<std::string> consequent;
  double support = 0.0;
  double confidence = 0.0;
  double lift = 0.0;

  friend bool operator==(const AssociationRule&, const AssociationRule&) = default;
};

struct MiningParams {
  double min_support = 0.1;
  double min_confidence = 0.5;
  int max_itemset = 3;
};

// Apriori over regions-as-transactions. Sorted by lift desc, support desc,
// then (antecedent, consequent) names.
std::vector<AssociationRule> mine_rules(const ExpressionMatrix& m, const MiningParams& params);

std::string encode_rules(const std::vector<AssociationRule>& rules);
std::vector<AssociationRule> decode_rules(std::string_view json_text);

enum class PatternOp { kUnion, kIntersect, kSubtract };
std::string_view to_string(PatternOp op);

// Leaf when `op` is empty; otherwise exactly two children.
struct ExprTree {
  std::string gene;
  std::optional<PatternOp> op;
  std::vector<ExprTree> children;

  static ExprTree leaf(std::string gene) { return {std::move(gene), std::nullopt, {}}; }
  static ExprTree node(PatternOp op, ExprTree left, ExprTree right);

  bool is_leaf() const { return !op.has_value(); }
  std::size_t leaf_count() const;

  friend bool operator==(const ExprTree&, const ExprTree&) = default;
};

RegionSet evaluate(const ExprTree& tree, const ExpressionMatrix& m);
// |a ∩ b| / |a ∪ b|, and 1 when both are empty.
double jaccard(const RegionSet& a, const RegionSet& b);

struct CompositionResult {
  ExprTree tree;
  double similarity = 0.0;
  // Similarity after each accepted step, first entry is the seed.
  std::vector<double> steps;
};

// Best pattern of at most `max_leaves` genes matching `target`. The seed is
// the best tree with up to two leaves (found exhaustively); further leaves
// are added greedily, each step keeping the strictly best (op, gene)
// extension, ties resolved by op order then gene name.
CompositionResult compose_pattern(const ExpressionMatrix& m, const RegionSet& target,
                                  int max_leaves);
// Target given as region ids. Throws BadParams on unknown regions.
CompositionResult compose_pattern(const ExpressionMatrix& m,
                                  const std::vector<std::string>& target_regions, int max_leaves);

std::string encode_composition(const CompositionResult& result);
CompositionResult decode_composition(std::string_view json_text);

// Registered operations: echo, gen_expression, collate, denoise, mine_rules,
// compose_pattern. Parameterised operations take a JSON object as their first
// input and data payloads after it.
ServiceRegistry builtin_services();
// "all" or a comma-separated list of operation names.
ServiceRegistry select_services(std::string_view spec);

}  // namespace circulate
