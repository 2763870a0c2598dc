#include "circulate/workloads.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include <json.hpp>
#include <rapidjson/document.h>
#include <rapidjson/error/en.h>
#include <rapidjson/stringbuffer.h>
#include <rapidjson/writer.h>

#include "circulate/codec.hpp"
#include "circulate/error.hpp"

namespace circulate {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RegionSet

// Counting loops get a hardware popcount clone where the CPU has one.
#if defined(__x86_64__) && defined(__GNUC__)
#define CIRCULATE_POPCOUNT_CLONES __attribute__((target_clones("popcnt", "default")))
#else
#define CIRCULATE_POPCOUNT_CLONES
#endif

CIRCULATE_POPCOUNT_CLONES
std::size_t RegionSet::count() const {
  std::size_t c = 0;
  for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
  return c;
}

RegionSet RegionSet::operator|(const RegionSet& o) const {
  RegionSet r = *this;
  for (std::size_t i = 0; i < words_.size(); ++i) r.words_[i] |= o.words_[i];
  return r;
}

RegionSet RegionSet::operator&(const RegionSet& o) const {
  RegionSet r = *this;
  for (std::size_t i = 0; i < words_.size(); ++i) r.words_[i] &= o.words_[i];
  return r;
}

RegionSet RegionSet::operator-(const RegionSet& o) const {
  RegionSet r = *this;
  for (std::size_t i = 0; i < words_.size(); ++i) r.words_[i] &= ~o.words_[i];
  return r;
}

CIRCULATE_POPCOUNT_CLONES
std::size_t RegionSet::intersection_count(const RegionSet& o) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    c += static_cast<std::size_t>(std::popcount(words_[i] & o.words_[i]));
  }
  return c;
}

CIRCULATE_POPCOUNT_CLONES
std::size_t RegionSet::union_count(const RegionSet& o) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    c += static_cast<std::size_t>(std::popcount(words_[i] | o.words_[i]));
  }
  return c;
}

// ---------------------------------------------------------------------------
// ExpressionMatrix

namespace {

// Open addressing over indices; much cheaper than a node-based set for the
// hundreds of thousands of region ids a large matrix carries.
void require_unique(const std::vector<std::string>& names, const char* what) {
  constexpr std::size_t kEmpty = static_cast<std::size_t>(-1);
  const std::size_t cap = std::bit_ceil(names.size() * 2 + 2);
  std::vector<std::size_t> slots(cap, kEmpty);
  const std::hash<std::string_view> hash;
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t h = hash(names[i]) & (cap - 1);; h = (h + 1) & (cap - 1)) {
      if (slots[h] == kEmpty) {
        slots[h] = i;
        break;
      }
      if (names[slots[h]] == names[i]) {
        throw Error(ErrorCode::kBadParams, std::string("duplicate ") + what + " '" + names[i] + "'");
      }
    }
  }
}

}  // namespace

std::string indexed_name(std::string_view prefix, std::size_t i, std::size_t count) {
  std::size_t width = 3;
  for (std::size_t top = count == 0 ? 0 : count - 1; top >= 1000; top /= 10) ++width;
  char digits[24];
  const auto end = std::to_chars(digits, digits + sizeof digits, i).ptr;
  const auto n = static_cast<std::size_t>(end - digits);
  std::string out;
  out.reserve(prefix.size() + std::max(width, n));
  out.append(prefix);
  if (n < width) out.append(width - n, '0');
  out.append(digits, n);
  return out;
}

ExpressionMatrix::ExpressionMatrix(std::vector<std::string> genes, std::vector<std::string> regions)
    : genes_(std::move(genes)),
      regions_(std::move(regions)),
      stride_((genes_.size() + 7) / 8),
      cells_(stride_ * regions_.size(), 0) {
  require_unique(genes_, "gene");
  require_unique(regions_, "region");
}

void ExpressionMatrix::set(std::size_t region, std::size_t gene, bool value) {
  auto& byte = cells_[region * stride_ + gene / 8];
  const auto mask = static_cast<std::uint8_t>(0x80U >> (gene % 8));
  byte = value ? (byte | mask) : (byte & ~mask);
}

std::optional<std::size_t> ExpressionMatrix::gene_index(std::string_view gene) const {
  for (std::size_t i = 0; i < genes_.size(); ++i) {
    if (genes_[i] == gene) return i;
  }
  return std::nullopt;
}

RegionSet ExpressionMatrix::gene_regions(std::size_t gene) const {
  RegionSet s(regions_.size());
  const std::uint8_t* p = cells_.data() + gene / 8;
  const unsigned shift = 7 - gene % 8;
  for (std::size_t r = 0; r < regions_.size(); ++r, p += stride_) {
    if ((*p >> shift) & 1U) s.set(r);
  }
  return s;
}

ExpressionMatrix ExpressionMatrix::without_gene(std::size_t gene) const {
  std::vector<std::string> genes;
  for (std::size_t g = 0; g < genes_.size(); ++g) {
    if (g != gene) genes.push_back(genes_[g]);
  }
  ExpressionMatrix out(std::move(genes), regions_);
  for (std::size_t r = 0; r < regions_.size(); ++r) {
    for (std::size_t g = 0, k = 0; g < genes_.size(); ++g) {
      if (g == gene) continue;
      if (at(r, g)) out.set(r, k, true);
      ++k;
    }
  }
  return out;
}

// The matrix codec sits on the hot path of every benchmark task, so it uses
// RapidJSON rather than building a DOM of hundreds of thousands of strings.
std::string encode_matrix(const ExpressionMatrix& m) {
  rapidjson::StringBuffer buf;
  buf.Reserve(m.packed().size() * 4 / 3 + m.n_regions() * 16 + 64);
  rapidjson::Writer<rapidjson::StringBuffer> w(buf);
  auto names = [&](const char* key, const std::vector<std::string>& list) {
    w.Key(key);
    w.StartArray();
    for (const auto& n : list) w.String(n.data(), static_cast<rapidjson::SizeType>(n.size()));
    w.EndArray();
  };
  w.StartObject();
  names("genes", m.genes());
  names("regions", m.regions());
  const auto& packed = m.packed();
  const auto cells =
      base64_encode(std::string_view(reinterpret_cast<const char*>(packed.data()), packed.size()));
  w.Key("cells");
  w.String(cells.data(), static_cast<rapidjson::SizeType>(cells.size()));
  w.EndObject();
  return std::string(buf.GetString(), buf.GetSize());
}

ExpressionMatrix decode_matrix(std::string_view json_text) {
  auto malformed = [](const std::string& why) {
    return Error(ErrorCode::kMalformedDocument, "expression matrix: " + why);
  };
  rapidjson::Document doc;
  doc.Parse(json_text.data(), json_text.size());
  if (doc.HasParseError()) {
    throw malformed(std::string(rapidjson::GetParseError_En(doc.GetParseError())) + " at offset " +
                    std::to_string(doc.GetErrorOffset()));
  }
  if (!doc.IsObject()) throw malformed("not an object");
  auto names = [&](const char* key) {
    const auto it = doc.FindMember(key);
    if (it == doc.MemberEnd() || !it->value.IsArray()) throw malformed(std::string("missing ") + key);
    std::vector<std::string> out;
    out.reserve(it->value.Size());
    for (const auto& v : it->value.GetArray()) {
      if (!v.IsString()) throw malformed(std::string(key) + " must hold strings");
      out.emplace_back(v.GetString(), v.GetStringLength());
    }
    return out;
  };
  ExpressionMatrix m(names("genes"), names("regions"));
  const auto cells_it = doc.FindMember("cells");
  if (cells_it == doc.MemberEnd() || !cells_it->value.IsString()) throw malformed("missing cells");
  const Bytes cells = base64_decode(
      std::string_view(cells_it->value.GetString(), cells_it->value.GetStringLength()));
  if (cells.size() != m.packed().size()) {
    throw malformed("cells length does not match the matrix shape");
  }
  std::copy(cells.begin(), cells.end(), m.packed().begin());
  return m;
}

ExpressionMatrix gen_expression(std::uint64_t seed, std::size_t n_genes, std::size_t n_regions,
                                double density, std::string_view region_prefix) {
  if (n_genes < 1 || n_regions < 1) {
    throw Error(ErrorCode::kBadParams, "n_genes and n_regions must be at least 1");
  }
  if (!(density > 0.0 && density < 1.0)) {
    throw Error(ErrorCode::kBadParams, "density must lie in (0, 1)");
  }
  std::vector<std::string> genes;
  genes.reserve(n_genes);
  for (std::size_t g = 0; g < n_genes; ++g) genes.push_back(indexed_name("g", g, n_genes));
  std::vector<std::string> regions;
  regions.reserve(n_regions);
  for (std::size_t r = 0; r < n_regions; ++r) regions.push_back(indexed_name(region_prefix, r, n_regions));

  ExpressionMatrix m(std::move(genes), std::move(regions));
  // A cell is set when the top 53 bits of a draw, read as u in [0, 1), fall
  // below density; comparing integers against ceil(density * 2^53) is the
  // same test without the conversion.
  const auto threshold = static_cast<std::uint64_t>(std::ceil(std::ldexp(density, 53)));
  std::mt19937_64 rng(seed);
  auto* row = m.packed().data();
  const std::size_t stride = m.row_stride();
  for (std::size_t r = 0; r < n_regions; ++r, row += stride) {
    for (std::size_t g = 0; g < n_genes; ++g) {
      if ((rng() >> 11) < threshold) row[g / 8] |= static_cast<std::uint8_t>(0x80U >> (g % 8));
    }
  }
  return m;
}

ExpressionMatrix collate(std::span<const ExpressionMatrix> parts) {
  if (parts.empty()) throw Error(ErrorCode::kBadParams, "collate needs at least one part");
  const auto& genes = parts.front().genes();
  std::vector<std::string> regions;
  for (const auto& p : parts) {
    if (p.genes() != genes) throw Error(ErrorCode::kGeneMismatch, "parts disagree on gene list");
    regions.insert(regions.end(), p.regions().begin(), p.regions().end());
  }
  ExpressionMatrix out;
  try {
    out = ExpressionMatrix(genes, std::move(regions));
  } catch (const Error& e) {
    throw Error(ErrorCode::kDuplicateRegion, e.detail());
  }
  auto dst = out.packed().begin();
  for (const auto& p : parts) dst = std::copy(p.packed().begin(), p.packed().end(), dst);
  return out;
}

// ---------------------------------------------------------------------------
// Association rules

namespace {

using Itemset = std::vector<std::size_t>;  // indices into name-sorted genes

struct RuleCounts {
  AssociationRule rule;
  std::uint64_t joint = 0;       // regions expressing antecedent ∪ consequent
  std::uint64_t antecedent = 0;  // regions expressing the antecedent
  std::uint64_t consequent = 0;  // regions expressing the consequent
};

bool frequent_enough(std::uint64_t count, std::size_t n, double min_support) {
  return static_cast<double>(count) / static_cast<double>(n) >= min_support;
}

}  // namespace

std::vector<AssociationRule> mine_rules(const ExpressionMatrix& m, const MiningParams& params) {
  if (!(params.min_support > 0.0 && params.min_support <= 1.0) ||
      !(params.min_confidence > 0.0 && params.min_confidence <= 1.0) || params.max_itemset < 2) {
    throw Error(ErrorCode::kBadParams,
                "need 0 < min_support <= 1, 0 < min_confidence <= 1, max_itemset >= 2");
  }
  const std::size_t n = m.n_regions();
  if (n == 0) return {};

  std::vector<std::size_t> by_name(m.n_genes());
  std::iota(by_name.begin(), by_name.end(), 0);
  std::sort(by_name.begin(), by_name.end(),
            [&](auto a, auto b) { return m.genes()[a] < m.genes()[b]; });
  std::vector<RegionSet> cols;
  cols.reserve(by_name.size());
  for (auto g : by_name) cols.push_back(m.gene_regions(g));

  auto regions_of = [&](const Itemset& items) {
    RegionSet acc = cols[items[0]];
    for (std::size_t i = 1; i < items.size(); ++i) acc = acc & cols[items[i]];
    return acc;
  };

  std::map<Itemset, std::uint64_t> frequent;
  std::vector<Itemset> level;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const auto c = cols[i].count();
    if (frequent_enough(c, n, params.min_support)) {
      frequent[{i}] = c;
      level.push_back({i});
    }
  }

  for (int k = 2; k <= params.max_itemset && level.size() >= 2; ++k) {
    std::vector<Itemset> next;
    for (std::size_t a = 0; a < level.size(); ++a) {
      // Candidates extending level[a] all share its region set.
      std::optional<RegionSet> prefix;
      for (std::size_t b = a + 1; b < level.size(); ++b) {
        if (!std::equal(level[a].begin(), level[a].end() - 1, level[b].begin())) break;
        Itemset cand = level[a];
        cand.push_back(level[b].back());
        bool all_subsets_frequent = true;
        for (std::size_t drop = 0; drop + 2 < cand.size() && all_subsets_frequent; ++drop) {
          Itemset sub = cand;
          sub.erase(sub.begin() + static_cast<std::ptrdiff_t>(drop));
          all_subsets_frequent = frequent.contains(sub);
        }
        if (!all_subsets_frequent) continue;
        if (!prefix) prefix = regions_of(level[a]);
        const auto c = prefix->intersection_count(cols[cand.back()]);
        if (frequent_enough(c, n, params.min_support)) {
          frequent[cand] = c;
          next.push_back(std::move(cand));
        }
      }
    }
    level = std::move(next);
  }

  const auto& names = m.genes();
  auto to_names = [&](const Itemset& items) {
    std::vector<std::string> out;
    for (auto i : items) out.push_back(names[by_name[i]]);
    return out;
  };

  std::vector<RuleCounts> rules;
  const double dn = static_cast<double>(n);
  for (const auto& [items, joint] : frequent) {
    if (items.size() < 2) continue;
    const unsigned full = (1U << items.size()) - 1;
    for (unsigned mask = 1; mask < full; ++mask) {
      Itemset a, b;
      for (std::size_t i = 0; i < items.size(); ++i) ((mask >> i) & 1U ? a : b).push_back(items[i]);
      const auto ca = frequent.at(a);
      const auto cb = frequent.at(b);
      const double confidence = static_cast<double>(joint) / static_cast<double>(ca);
      if (confidence < params.min_confidence) continue;
      RuleCounts rc;
      rc.rule.antecedent = to_names(a);
      rc.rule.consequent = to_names(b);
      rc.rule.support = static_cast<double>(joint) / dn;
      rc.rule.confidence = confidence;
      rc.rule.lift = confidence / (static_cast<double>(cb) / dn);
      rc.joint = joint;
      rc.antecedent = ca;
      rc.consequent = cb;
      rules.push_back(std::move(rc));
    }
  }

  // lift = joint * n / (antecedent * consequent); compare exactly.
  std::sort(rules.begin(), rules.end(), [n](const RuleCounts& x, const RuleCounts& y) {
    using u128 = unsigned __int128;
    const u128 lx = u128{x.joint} * n * y.antecedent * y.consequent;
    const u128 ly = u128{y.joint} * n * x.antecedent * x.consequent;
    if (lx != ly) return lx > ly;
    if (x.joint != y.joint) return x.joint > y.joint;
    return std::tie(x.rule.antecedent, x.rule.consequent) <
           std::tie(y.rule.antecedent, y.rule.consequent);
  });

  std::vector<AssociationRule> out;
  out.reserve(rules.size());
  for (auto& rc : rules) out.push_back(std::move(rc.rule));
  return out;
}

std::string encode_rules(const std::vector<AssociationRule>& rules) {
  json arr = json::array();
  for (const auto& r : rules) {
    arr.push_back({{"antecedent", r.antecedent},
                   {"consequent", r.consequent},
                   {"support", r.support},
                   {"confidence", r.confidence},
                   {"lift", r.lift}});
  }
  return arr.dump();
}

std::vector<AssociationRule> decode_rules(std::string_view json_text) {
  try {
    std::vector<AssociationRule> rules;
    for (const auto& j : json::parse(json_text)) {
      rules.push_back({j.at("antecedent").get<std::vector<std::string>>(),
                       j.at("consequent").get<std::vector<std::string>>(),
                       j.at("support").get<double>(), j.at("confidence").get<double>(),
                       j.at("lift").get<double>()});
    }
    return rules;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("rules: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pattern composition

namespace {

constexpr std::array<PatternOp, 3> kOps = {PatternOp::kUnion, PatternOp::kIntersect,
                                           PatternOp::kSubtract};

RegionSet apply(PatternOp op, const RegionSet& a, const RegionSet& b) {
  switch (op) {
    case PatternOp::kUnion:
      return a | b;
    case PatternOp::kIntersect:
      return a & b;
    case PatternOp::kSubtract:
      return a - b;
  }
  return a;
}

// Jaccard as an exact fraction so comparisons never hinge on rounding.
struct Score {
  std::size_t inter = 1;
  std::size_t uni = 1;

  static Score of(const RegionSet& target, const RegionSet& pattern) {
    const auto u = target.union_count(pattern);
    if (u == 0) return {1, 1};
    return {target.intersection_count(pattern), u};
  }
  bool beats(const Score& o) const { return inter * o.uni > o.inter * uni; }
  double value() const { return static_cast<double>(inter) / static_cast<double>(uni); }
};

PatternOp op_from_string(std::string_view s) {
  for (auto op : kOps) {
    if (to_string(op) == s) return op;
  }
  throw Error(ErrorCode::kMalformedDocument, "unknown pattern op '" + std::string(s) + "'");
}

json tree_to_json(const ExprTree& t) {
  if (t.is_leaf()) return {{"gene", t.gene}};
  return {{"op", to_string(*t.op)},
          {"left", tree_to_json(t.children[0])},
          {"right", tree_to_json(t.children[1])}};
}

ExprTree tree_from_json(const json& j) {
  if (j.contains("gene")) return ExprTree::leaf(j.at("gene").get<std::string>());
  return ExprTree::node(op_from_string(j.at("op").get<std::string>()),
                        tree_from_json(j.at("left")), tree_from_json(j.at("right")));
}

}  // namespace

std::string_view to_string(PatternOp op) {
  switch (op) {
    case PatternOp::kUnion:
      return "union";
    case PatternOp::kIntersect:
      return "intersect";
    case PatternOp::kSubtract:
      return "subtract";
  }
  return "?";
}

ExprTree ExprTree::node(PatternOp op, ExprTree left, ExprTree right) {
  ExprTree t;
  t.op = op;
  t.children.push_back(std::move(left));
  t.children.push_back(std::move(right));
  return t;
}

std::size_t ExprTree::leaf_count() const {
  if (is_leaf()) return 1;
  return children[0].leaf_count() + children[1].leaf_count();
}

RegionSet evaluate(const ExprTree& tree, const ExpressionMatrix& m) {
  if (tree.is_leaf()) {
    const auto g = m.gene_index(tree.gene);
    if (!g) throw Error(ErrorCode::kBadParams, "unknown gene '" + tree.gene + "'");
    return m.gene_regions(*g);
  }
  return apply(*tree.op, evaluate(tree.children[0], m), evaluate(tree.children[1], m));
}

double jaccard(const RegionSet& a, const RegionSet& b) { return Score::of(a, b).value(); }

CompositionResult compose_pattern(const ExpressionMatrix& m, const RegionSet& target,
                                  int max_leaves) {
  if (max_leaves < 1) throw Error(ErrorCode::kBadParams, "max_leaves must be at least 1");
  if (m.n_genes() == 0) throw Error(ErrorCode::kBadParams, "matrix has no genes");
  if (target.universe() != m.n_regions()) {
    throw Error(ErrorCode::kBadParams, "target does not range over the matrix regions");
  }

  std::vector<std::size_t> by_name(m.n_genes());
  std::iota(by_name.begin(), by_name.end(), 0);
  std::sort(by_name.begin(), by_name.end(),
            [&](auto a, auto b) { return m.genes()[a] < m.genes()[b]; });
  std::vector<RegionSet> cols;
  for (auto g : by_name) cols.push_back(m.gene_regions(g));
  auto name = [&](std::size_t i) { return m.genes()[by_name[i]]; };

  std::size_t best_gene = 0;
  Score best = Score::of(target, cols[0]);
  for (std::size_t i = 1; i < cols.size(); ++i) {
    const Score s = Score::of(target, cols[i]);
    if (s.beats(best)) {
      best = s;
      best_gene = i;
    }
  }
  CompositionResult result{ExprTree::leaf(name(best_gene)), best.value(), {best.value()}};
  RegionSet pattern = cols[best_gene];
  std::set<std::size_t> used{best_gene};

  if (max_leaves >= 2) {
    std::optional<std::tuple<std::size_t, PatternOp, std::size_t>> pair;
    for (std::size_t a = 0; a < cols.size(); ++a) {
      for (auto op : kOps) {
        for (std::size_t b = 0; b < cols.size(); ++b) {
          if (a == b) continue;
          const Score s = Score::of(target, apply(op, cols[a], cols[b]));
          if (s.beats(best)) {
            best = s;
            pair.emplace(a, op, b);
          }
        }
      }
    }
    if (!pair) return result;
    const auto [a, op, b] = *pair;
    result.tree = ExprTree::node(op, ExprTree::leaf(name(a)), ExprTree::leaf(name(b)));
    result.similarity = best.value();
    result.steps.push_back(best.value());
    pattern = apply(op, cols[a], cols[b]);
    used = {a, b};
  }

  for (std::size_t leaves = used.size(); static_cast<int>(leaves) < max_leaves; ++leaves) {
    std::optional<std::pair<PatternOp, std::size_t>> step;
    for (auto op : kOps) {
      for (std::size_t g = 0; g < cols.size(); ++g) {
        if (used.contains(g)) continue;
        const Score s = Score::of(target, apply(op, pattern, cols[g]));
        if (s.beats(best)) {
          best = s;
          step.emplace(op, g);
        }
      }
    }
    if (!step) break;
    const auto [op, g] = *step;
    result.tree = ExprTree::node(op, std::move(result.tree), ExprTree::leaf(name(g)));
    result.similarity = best.value();
    result.steps.push_back(best.value());
    pattern = apply(op, pattern, cols[g]);
    used.insert(g);
  }
  return result;
}

CompositionResult compose_pattern(const ExpressionMatrix& m,
                                  const std::vector<std::string>& target_regions, int max_leaves) {
  std::map<std::string_view, std::size_t> index;
  for (std::size_t r = 0; r < m.n_regions(); ++r) index.emplace(m.regions()[r], r);
  RegionSet target(m.n_regions());
  for (const auto& id : target_regions) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorCode::kBadParams, "target region '" + id + "' unknown");
    target.set(it->second);
  }
  return compose_pattern(m, target, max_leaves);
}

std::string encode_composition(const CompositionResult& result) {
  return json{{"tree", tree_to_json(result.tree)}, {"similarity", result.similarity},
              {"steps", result.steps}}
      .dump();
}

CompositionResult decode_composition(std::string_view json_text) {
  try {
    const json doc = json::parse(json_text);
    CompositionResult r;
    r.tree = tree_from_json(doc.at("tree"));
    r.similarity = doc.at("similarity").get<double>();
    if (doc.contains("steps")) r.steps = doc.at("steps").get<std::vector<double>>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("composition: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Service wrappers

namespace {

json params_of(std::span<const std::string_view> inputs, std::string_view op) {
  if (inputs.empty()) throw Error(ErrorCode::kBadParams, std::string(op) + ": missing parameters");
  try {
    json p = json::parse(inputs[0]);
    if (!p.is_object()) throw Error(ErrorCode::kBadParams, std::string(op) + ": params not an object");
    return p;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kBadParams, std::string(op) + ": " + e.what());
  }
}

// Data inputs after the parameter object, collated into one matrix.
ExpressionMatrix data_matrix(std::span<const std::string_view> inputs, std::string_view op) {
  if (inputs.size() < 2) throw Error(ErrorCode::kBadParams, std::string(op) + ": no data inputs");
  std::vector<ExpressionMatrix> parts;
  for (std::size_t i = 1; i < inputs.size(); ++i) parts.push_back(decode_matrix(inputs[i]));
  if (parts.size() == 1) return std::move(parts.front());
  return collate(parts);
}

template <typename F>
Bytes guarded(std::string_view op, F&& body) {
  try {
    return body();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadParams, std::string(op) + ": " + e.what());
  }
}

ExpressionMatrix denoise(const ExpressionMatrix& m, double min_gene_frequency,
                         std::size_t min_region_genes) {
  std::vector<bool> keep_gene(m.n_genes());
  for (std::size_t g = 0; g < m.n_genes(); ++g) {
    keep_gene[g] = static_cast<double>(m.gene_regions(g).count()) /
                       static_cast<double>(std::max<std::size_t>(m.n_regions(), 1)) >=
                   min_gene_frequency;
  }
  std::vector<std::uint8_t> mask(m.row_stride(), 0);
  for (std::size_t g = 0; g < m.n_genes(); ++g) {
    if (keep_gene[g]) mask[g / 8] |= static_cast<std::uint8_t>(0x80U >> (g % 8));
  }
  ExpressionMatrix out = m;
  auto* row = out.packed().data();
  for (std::size_t r = 0; r < m.n_regions(); ++r, row += m.row_stride()) {
    std::size_t expressed = 0;
    for (std::size_t b = 0; b < m.row_stride(); ++b) {
      row[b] &= mask[b];
      expressed += static_cast<std::size_t>(std::popcount(row[b]));
    }
    if (expressed < min_region_genes) std::fill(row, row + m.row_stride(), 0);
  }
  return out;
}

}  // namespace

ServiceRegistry builtin_services() {
  ServiceRegistry reg;
  reg["echo"] = [](std::span<const std::string_view> inputs) {
    Bytes out;
    for (auto in : inputs) out.append(in);
    return out;
  };
  reg["gen_expression"] = [](std::span<const std::string_view> inputs) {
    return guarded("gen_expression", [&] {
      const json p = params_of(inputs, "gen_expression");
      return encode_matrix(gen_expression(
          p.at("seed").get<std::uint64_t>(), p.at("n_genes").get<std::size_t>(),
          p.at("n_regions").get<std::size_t>(), p.at("density").get<double>(),
          p.value("region_prefix", std::string("r"))));
    });
  };
  reg["collate"] = [](std::span<const std::string_view> inputs) {
    std::vector<ExpressionMatrix> parts;
    for (auto in : inputs) parts.push_back(decode_matrix(in));
    return encode_matrix(collate(parts));
  };
  reg["denoise"] = [](std::span<const std::string_view> inputs) {
    return guarded("denoise", [&] {
      const json p = params_of(inputs, "denoise");
      const auto m = data_matrix(inputs, "denoise");
      return encode_matrix(denoise(m, p.value("min_gene_frequency", 0.0),
                                   p.value("min_region_genes", std::size_t{0})));
    });
  };
  reg["mine_rules"] = [](std::span<const std::string_view> inputs) {
    return guarded("mine_rules", [&] {
      const json p = params_of(inputs, "mine_rules");
      MiningParams mp;
      mp.min_support = p.value("min_support", mp.min_support);
      mp.min_confidence = p.value("min_confidence", mp.min_confidence);
      mp.max_itemset = p.value("max_itemset", mp.max_itemset);
      return encode_rules(mine_rules(data_matrix(inputs, "mine_rules"), mp));
    });
  };
  reg["compose_pattern"] = [](std::span<const std::string_view> inputs) {
    return guarded("compose_pattern", [&] {
      const json p = params_of(inputs, "compose_pattern");
      const int max_leaves = p.value("max_leaves", 3);
      auto m = data_matrix(inputs, "compose_pattern");
      if (p.contains("target_gene")) {
        const auto name = p.at("target_gene").get<std::string>();
        const auto g = m.gene_index(name);
        if (!g) throw Error(ErrorCode::kBadParams, "unknown target gene '" + name + "'");
        const RegionSet target = m.gene_regions(*g);
        return encode_composition(compose_pattern(m.without_gene(*g), target, max_leaves));
      }
      return encode_composition(compose_pattern(
          m, p.at("target_regions").get<std::vector<std::string>>(), max_leaves));
    });
  };
  return reg;
}

ServiceRegistry select_services(std::string_view spec) {
  ServiceRegistry all = builtin_services();
  if (spec.empty() || spec == "all" || spec == "builtin") return all;
  ServiceRegistry chosen;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const auto comma = spec.find(',', pos);
    const auto name = spec.substr(pos, comma == std::string_view::npos ? spec.npos : comma - pos);
    if (!name.empty()) {
      auto it = all.find(name);
      if (it == all.end()) throw Error(ErrorCode::kUnknownServiceOp, std::string(name));
      chosen.insert(*it);
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return chosen;
}

}  // namespace circulate
