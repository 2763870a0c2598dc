#pragma once

// Benchmark harness: the canonical workflow patterns, paired pure/circulate
// runs over an in-process proxy cluster, and CSV / text / SVG reports.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "circulate/orchestrator.hpp"
#include "circulate/service.hpp"
#include "circulate/workflow.hpp"

namespace circulate {

enum class Pattern { kPipeline, kFanIn, kFanOut, kFig3Scenario };

std::string_view to_string(Pattern p);
Pattern parse_pattern(std::string_view text);

struct BenchmarkSpec {
  Pattern pattern = Pattern::kFanIn;
  int n = 3;
  double payload_mb = 10.0;  // decimal megabytes per source output
  std::string topology_file;
  std::uint64_t seed = 42;
  int repetitions = 3;

  void validate() const;  // throws BadParams
};

// Workload knobs shared by every generated pattern.
struct PatternWorkload {
  std::size_t n_genes = 16;
  double density = 0.5;
  double min_support = 0.2;
  double min_confidence = 0.5;
  int max_itemset = 3;
  int max_leaves = 3;
  double min_gene_frequency = 0.05;
  std::size_t min_region_genes = 2;
};

// Regions a source needs so its encoded matrix is about `payload_mb`.
std::size_t regions_for_payload(double payload_mb, std::size_t n_genes,
                                std::string_view region_prefix);

// Throws TooFewSites when the topology lacks the proxy sites the pattern needs.
WorkflowDefinition build_pattern(const BenchmarkSpec& spec, const Topology& topology,
                                 const PatternWorkload& workload = {});

struct ModeStats {
  ExecutionMode mode = ExecutionMode::kCirculate;
  double median_makespan_s = 0.0;
  std::vector<double> makespans_s;
  std::uint64_t engine_payload_bytes = 0;
  std::uint64_t engine_control_bytes = 0;
  std::uint64_t p2p_payload_bytes = 0;
};

struct BenchmarkResult {
  BenchmarkSpec spec;
  ModeStats pure;
  ModeStats circulate;
  double speedup = 0.0;  // pure median / circulate median
  std::map<std::string, std::string> result_digests;
};

// Starts one proxy per topology site on local ephemeral ports, then runs
// both modes `repetitions` times with identical inputs. Throws
// EquivalenceViolation if the modes disagree on any sink digest and
// CounterDrift if byte counters vary between repetitions.
BenchmarkResult run_benchmark(const BenchmarkSpec& spec, const Topology& topology,
                              const PatternWorkload& workload = {});
// Loads spec.topology_file.
BenchmarkResult run_benchmark(const BenchmarkSpec& spec);

// Runs the workflow in-process, no network: every task's output bytes.
std::map<std::string, Bytes> execute_locally(const WorkflowDefinition& def,
                                             const ServiceRegistry& services);

std::vector<BenchmarkSpec> parse_suite(std::string_view json_text,
                                       const std::filesystem::path& base_dir = {});

struct CsvRow {
  std::string pattern;
  int n = 0;
  double payload_mb = 0.0;
  std::string mode;
  double makespan_s = 0.0;
  std::uint64_t engine_payload_bytes = 0;
  std::uint64_t p2p_payload_bytes = 0;
  double speedup = 0.0;

  friend bool operator==(const CsvRow&, const CsvRow&) = default;
};

std::vector<CsvRow> to_csv_rows(const std::vector<BenchmarkResult>& results);
std::vector<CsvRow> read_results_csv(const std::filesystem::path& path);

// Writes results.csv, summary.txt and speedup.svg into `out_dir`.
void emit_report(const std::vector<BenchmarkResult>& results, const std::filesystem::path& out_dir);

}  // namespace circulate
