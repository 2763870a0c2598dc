// Runs one workflow through the proxies named in a topology and writes the
// run report. With --spawn-proxies the proxies are started in-process on
// local ephemeral ports instead of being reached at their listed addresses.

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "circulate/error.hpp"
#include "circulate/orchestrator.hpp"
#include "circulate/proxy.hpp"
#include "circulate/workloads.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw circulate::Error(circulate::ErrorCode::kIoFailure, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Workflow engine"};
  app.require_subcommand(1);
  auto* run = app.add_subcommand("run", "Execute a workflow document");
  std::string workflow_file, mode_text = "circulate", topology_file, report_file, workloads = "all";
  std::uint64_t seed = 0;
  bool spawn = false;
  run->add_option("--workflow", workflow_file, "Workflow JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", mode_text, "pure | circulate")
      ->check(CLI::IsMember({"pure", "pure_orchestration", "circulate"}));
  run->add_option("--topology", topology_file, "Topology JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Recorded in the report");
  run->add_option("--report", report_file, "Where to write the run report (stdout if absent)");
  run->add_flag("--spawn-proxies", spawn, "Start every proxy in this process");
  run->add_option("--workloads", workloads, "Operations for spawned proxies");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto def = circulate::parse_workflow(slurp(workflow_file));
    const auto mode = circulate::parse_execution_mode(mode_text);
    auto topology = circulate::load_topology(topology_file);

    std::unique_ptr<circulate::LocalCluster> cluster;
    if (spawn) {
      cluster = std::make_unique<circulate::LocalCluster>(topology,
                                                          circulate::select_services(workloads));
    }
    const auto& topo = cluster ? cluster->topology() : topology;
    const auto report = circulate::execute(def, mode, topo);

    auto doc = nlohmann::json::parse(circulate::serialize_report(report));
    doc["seed"] = seed;
    doc["workflow_id"] = def.workflow_id;
    const auto text = doc.dump(2) + "\n";
    if (report_file.empty()) {
      std::cout << text;
    } else {
      std::ofstream out(report_file, std::ios::binary);
      out << text;
      if (!out) throw circulate::Error(circulate::ErrorCode::kIoFailure, "cannot write " + report_file);
      std::cerr << circulate::to_string(mode) << " makespan " << report.makespan_s << " s, engine "
                << report.engine_payload_bytes << " B, p2p " << report.p2p_payload_bytes << " B\n";
    }
  } catch (const circulate::Error& e) {
    std::cerr << "engine: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "engine: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
