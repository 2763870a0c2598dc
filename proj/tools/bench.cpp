// Benchmark driver: paired pure / circulate runs of the canonical patterns.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "circulate/bench.hpp"
#include "circulate/error.hpp"

namespace {

using circulate::BenchmarkResult;
using circulate::BenchmarkSpec;

void add_spec_options(CLI::App* cmd, BenchmarkSpec& spec, std::string& pattern) {
  cmd->add_option("--pattern", pattern, "pipeline | fan_in | fan_out | fig3_scenario")->required();
  cmd->add_option("--n", spec.n, "Pattern width or length");
  cmd->add_option("--payload-mb", spec.payload_mb, "Source output size in MB");
  cmd->add_option("--topology", spec.topology_file, "Topology JSON")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", spec.seed, "Workload seed");
}

void print(const BenchmarkResult& r) {
  std::cout << std::left << std::setw(14) << circulate::to_string(r.spec.pattern) << " n=" << r.spec.n
            << " " << r.spec.payload_mb << " MB  pure " << std::fixed << std::setprecision(3)
            << r.pure.median_makespan_s << " s  circulate " << r.circulate.median_makespan_s
            << " s  speedup " << std::setprecision(2) << r.speedup << std::defaultfloat
            << "  engine bytes " << r.pure.engine_payload_bytes << " -> "
            << r.circulate.engine_payload_bytes << std::endl;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw circulate::Error(circulate::ErrorCode::kIoFailure, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Workflow pattern benchmarks"};
  app.require_subcommand(1);

  BenchmarkSpec spec;
  std::string pattern, out_dir = "results", config, workflow_out;

  auto* run = app.add_subcommand("run", "Benchmark one pattern");
  add_spec_options(run, spec, pattern);
  run->add_option("--reps", spec.repetitions, "Repetitions per mode");
  run->add_option("--out", out_dir, "Report directory");

  auto* suite = app.add_subcommand("suite", "Benchmark every spec in a suite file");
  suite->add_option("--config", config, "JSON list of specs")->required()->check(CLI::ExistingFile);
  suite->add_option("--out", out_dir, "Report directory");

  auto* emit = app.add_subcommand("emit-workflow", "Write a pattern's workflow document");
  add_spec_options(emit, spec, pattern);
  emit->add_option("--out", workflow_out, "Output file (stdout if absent)");

  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<BenchmarkResult> results;
    if (*emit) {
      spec.pattern = circulate::parse_pattern(pattern);
      spec.validate();
      const auto def = circulate::build_pattern(spec, circulate::load_topology(spec.topology_file));
      const auto text = circulate::serialize_workflow(def);
      if (workflow_out.empty()) {
        std::cout << text << "\n";
      } else {
        std::ofstream(workflow_out, std::ios::binary) << text << "\n";
      }
      return 0;
    }
    if (*run) {
      spec.pattern = circulate::parse_pattern(pattern);
      spec.validate();
      results.push_back(circulate::run_benchmark(spec));
      print(results.back());
    } else {
      const auto specs = circulate::parse_suite(slurp(config),
                                                std::filesystem::path(config).parent_path());
      for (const auto& s : specs) {
        results.push_back(circulate::run_benchmark(s));
        print(results.back());
      }
    }
    circulate::emit_report(results, out_dir);
    std::cout << "wrote " << (std::filesystem::path(out_dir) / "results.csv").string() << std::endl;
  } catch (const circulate::Error& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
