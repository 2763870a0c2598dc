// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "circulate/bench.hpp"
#include "circulate/transport.hpp"
#include "circulate/workloads.hpp"
#include "oracles.hpp"
#include "pattern_oracle.hpp"
#include "test_util.hpp"

using namespace circulate;
using namespace circulate::testing;

namespace {

const std::filesystem::path kConfigs = CIRCULATE_CONFIG_DIR;
constexpr std::uint64_t kMB = 1000 * 1000;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

BenchmarkSpec spec_of(Pattern p, int n, double mb, int reps = 3) {
  BenchmarkSpec s;
  s.pattern = p;
  s.n = n;
  s.payload_mb = mb;
  s.repetitions = reps;
  s.seed = 42;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<Pattern> kPatterns{Pattern::kPipeline, Pattern::kFanIn, Pattern::kFanOut,
                                     Pattern::kFig3Scenario};

void speedup_on_wan(Verdict& v) {
  const auto topo = load_topology((kConfigs / "wan.json").string());
  struct Case {
    Pattern pattern;
    double low, high;
  };
  for (const auto& c : {Case{Pattern::kFanIn, 1.5, 6.0}, Case{Pattern::kPipeline, 1.5, INFINITY},
                        Case{Pattern::kFig3Scenario, 1.5, INFINITY}}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_benchmark(spec_of(c.pattern, 3, 10), topo);
    const double elapsed = seconds_since(t0);
    v.detail << " " << to_string(c.pattern) << "=" << std::fixed << std::setprecision(2)
             << r.speedup << " (" << std::setprecision(0) << elapsed << "s)";
    v.expect(r.speedup >= c.low && r.speedup <= c.high,
             std::string(to_string(c.pattern)) + " ratio out of band");
    v.expect(elapsed <= 180.0, std::string(to_string(c.pattern)) + " took over 3 minutes");
  }
}

void traffic_exactness(Verdict& v, std::optional<PatternCheck>& fan_in_10mb) {
  const auto topo = load_topology((kConfigs / "free.json").string());
  int runs = 0;
  for (auto p : kPatterns) {
    for (int n : {1, 3}) {
      for (double mb : {1.0, 10.0}) {
        auto check = check_pattern(spec_of(p, n, mb, 1), topo);
        runs += 2;
        const std::string label = std::string(to_string(p)) + " n=" + std::to_string(n) + " " +
                                  std::to_string(static_cast<int>(mb)) + "MB";
        v.expect(check.pure.bytes_match, label + " pure counters");
        v.expect(check.circulate.bytes_match, label + " circulate counters");
        v.expect(check.pure.digests_match_local && check.circulate.digests_match_local,
                 label + " digests");
        if (p == Pattern::kFanIn && n == 3 && mb == 10.0) fan_in_10mb = std::move(check);
      }
    }
  }
  v.detail << " " << runs << " runs compared against the traffic model";
}

void zero_intermediate(Verdict& v, const std::optional<PatternCheck>& check) {
  if (!check) {
    v.expect(false, "fan_in n=3 10MB run missing");
    return;
  }
  std::uint64_t smallest_intermediate = UINT64_MAX, largest_sink = 0;
  for (const auto& t : check->def.tasks) {
    const bool sink = std::find(check->def.sinks.begin(), check->def.sinks.end(), t.task_id) !=
                      check->def.sinks.end();
    const auto size = check->sizes.at(t.task_id);
    if (sink) largest_sink = std::max(largest_sink, size);
    else smallest_intermediate = std::min(smallest_intermediate, size);
  }
  const auto engine = check->circulate.report.engine_payload_bytes;
  v.detail << " engine_payload_bytes=" << engine << " smallest intermediate=" << smallest_intermediate
           << " sink=" << largest_sink;
  v.expect(smallest_intermediate >= static_cast<std::uint64_t>(9.5 * kMB),
           "intermediates are not ~10 MB");
  v.expect(largest_sink <= kMB, "sink output above 1 MB");
  v.expect(engine < 2 * kMB, "engine carried 2 MB or more");
}

void mode_equivalence(Verdict& v) {
  const auto specs = parse_suite(slurp(kConfigs / "suite.json"), kConfigs);
  for (const auto& s : specs) {
    v.expect(s.seed == 42, "suite seed is not 42");
    const auto check = check_pattern(s, load_topology(s.topology_file));
    v.expect(check.modes_agree, std::string(to_string(s.pattern)) + " n=" + std::to_string(s.n) +
                                    " digests differ between modes");
    v.expect(check.pure.digests_match_local, "pure digests differ from local evaluation");
  }
  v.detail << " " << specs.size() << " suite specs";
}

void miner_oracle(Verdict& v) {
  std::mt19937_64 rng(5);
  const MiningParams p{0.1, 0.5, 3};
  std::size_t rules_checked = 0;
  for (int i = 0; i < 100; ++i) {
    const auto m = random_matrix(rng, 8, 50);
    const auto rules = mine_rules(m, p);
    const auto oracle = brute_force_rules(m, p);
    bool same = rules.size() == oracle.size();
    for (const auto& r : rules) {
      GeneSet a(r.antecedent.begin(), r.antecedent.end());
      GeneSet b(r.consequent.begin(), r.consequent.end());
      const auto it = oracle.find({a, b});
      same = same && it != oracle.end() &&
             std::abs(it->second.support - r.support) <= 1e-12 &&
             std::abs(it->second.confidence - r.confidence) <= 1e-12 &&
             std::abs(it->second.lift - r.lift) <= 1e-12 * std::max(1.0, r.lift);
      const double support_b =
          static_cast<double>(count_expressing(m, b)) / static_cast<double>(m.n_regions());
      v.expect(r.confidence >= r.support, "confidence below support");
      v.expect(std::abs(r.lift * support_b - r.confidence) <= 1e-12, "lift identity");
      ++rules_checked;
    }
    v.expect(same, "matrix " + std::to_string(i) + " differs from brute force");
  }
  v.detail << " 100 matrices, " << rules_checked << " rules";
}

void composer(Verdict& v) {
  std::mt19937_64 rng(6);
  int cases = 0;
  for (int i = 0; i < 300; ++i) {
    const auto m = random_matrix(rng, 5, 30);
    std::set<std::size_t> target;
    RegionSet t(m.n_regions());
    for (std::size_t r = 0; r < m.n_regions(); ++r) {
      if (rng() & 1) {
        target.insert(r);
        t.set(r);
      }
    }
    for (int leaves : {1, 2}) {
      const auto result = compose_pattern(m, t, leaves);
      v.expect(result.similarity == exhaustive_best_similarity(m, target, leaves),
               "composer below exhaustive search");
      ++cases;
    }
  }
  const auto m = gen_expression(9, 6, 40, 0.5);
  v.expect(compose_pattern(m, m.gene_regions(2), 2).similarity == 1.0, "identity target");

  const std::vector<AssociationRule> rule{{{"Brap", "Zfp354b"}, {"9830124H08Rik"}, 0.060, 0.979, 10.2}};
  v.expect(decode_rules(encode_rules(rule)) == rule, "rule record round-trip");
  CompositionResult tree;
  tree.tree = ExprTree::node(PatternOp::kUnion,
                             ExprTree::node(PatternOp::kIntersect, ExprTree::leaf("Rnf34"),
                                            ExprTree::leaf("Pax5")),
                             ExprTree::leaf("Anapc11"));
  tree.similarity = 0.753;
  const auto back = decode_composition(encode_composition(tree));
  v.expect(back.tree == tree.tree && back.tree.leaf_count() == 3 && back.similarity == 0.753,
           "three-leaf composition round-trip");
  v.detail << " " << cases << " exhaustive comparisons";
}

void protocol_round_trip(Verdict& v) {
  std::mt19937_64 rng(7);
  constexpr int kCases = 1200;
  std::size_t max_payload = 0;
  for (int i = 0; i < kCases; ++i) {
    const auto type = static_cast<MsgType>(i % 9);
    const auto msg = random_message(rng, type, payload_size_for(rng, i));
    const bool ok = decode(encode(msg)) == msg;
    v.expect(ok, "case " + std::to_string(i));
    if (!ok) break;
    max_payload = std::max(max_payload, msg.payload.size());
  }
  v.expect(max_payload == (1U << 20), "1 MiB payload not exercised");
  v.detail << " " << kCases << " messages, largest payload " << max_payload << " B";
}

void free_network(Verdict& v) {
  const auto topo = load_topology((kConfigs / "free.json").string());
  for (auto p : kPatterns) {
    const auto r = run_benchmark(spec_of(p, 3, 10), topo);
    v.detail << " " << to_string(p) << "=" << std::fixed << std::setprecision(2) << r.speedup;
    v.expect(r.speedup >= 0.8 && r.speedup <= 1.25, std::string(to_string(p)) + " out of band");
  }
}

}  // namespace

int main() {
  std::optional<PatternCheck> fan_in_10mb;
  const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria{
      {"1 speedup on WAN profile", speedup_on_wan},
      {"2 traffic oracle exactness", [&](Verdict& v) { traffic_exactness(v, fan_in_10mb); }},
      {"3 zero-intermediate property", [&](Verdict& v) { zero_intermediate(v, fan_in_10mb); }},
      {"4 mode equivalence over suite", mode_equivalence},
      {"5 miner oracle equivalence", miner_oracle},
      {"6 composer sanity", composer},
      {"7 protocol round-trip", protocol_round_trip},
      {"8 degenerate-network neutrality", free_network},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Verdict v;
    try {
      run(v);
    } catch (const std::exception& e) {
      v.expect(false, std::string("exception: ") + e.what());
    }
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << name << ":" << v.detail.str()
              << std::endl;
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
