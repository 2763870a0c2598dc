#pragma once

// The central engine. Control always flows through it; in circulate mode it
// only ever sees references, while proxies move intermediate payloads among
// themselves on its instruction.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "circulate/transport.hpp"
#include "circulate/workflow.hpp"

namespace circulate {

struct TaskSpan {
  std::string task_id;
  double start_s = 0.0;  // relative to run start
  double end_s = 0.0;
};

struct RunReport {
  std::string run_id;
  ExecutionMode mode = ExecutionMode::kCirculate;
  double makespan_s = 0.0;
  std::uint64_t engine_payload_bytes = 0;
  std::uint64_t engine_control_bytes = 0;
  std::uint64_t p2p_payload_bytes = 0;
  std::map<std::string, std::uint64_t> message_counts;
  std::vector<TaskSpan> task_timeline;
  std::map<std::string, std::string> result_digests;
};

std::string serialize_report(const RunReport& report);
RunReport parse_report(std::string_view json_text);

struct RunState {
  std::set<std::string> completed;
  std::set<std::string> in_flight;
  std::map<std::string, DataReference> ref_of;
  // Sites holding a copy of each ref_id besides its producer.
  std::map<std::string, std::set<std::string>> replicas;

  bool resident(const DataReference& ref, const std::string& site) const;
};

struct PlannedTransfer {
  std::string source_site;
  TransferRequest request;
};

// One request per source proxy, naming the refs `task` needs that are not
// yet resident at its site; sources in ascending site order, refs in input
// order without repeats.
std::vector<PlannedTransfer> plan_transfers(const WorkflowDefinition& def, const TaskNode& task,
                                            const RunState& state);

struct TrafficPrediction {
  std::uint64_t engine_payload_bytes = 0;
  std::uint64_t p2p_payload_bytes = 0;
};

// Analytic payload-byte counts for a run. Literal inputs always travel from
// the engine; pure mode also brings every output in and re-sends one copy
// per edge, circulate moves each (ref, consumer site) pair once between
// proxies and brings only sinks back.
TrafficPrediction traffic_model(const WorkflowDefinition& def,
                                const std::map<std::string, std::uint64_t>& output_sizes,
                                ExecutionMode mode);

// Observes every exchange the engine makes, in completion order.
struct TapEvent {
  std::string site;
  Message request;
  Message reply;
  std::uint64_t request_frame_bytes = 0;
  std::uint64_t reply_frame_bytes = 0;
  std::chrono::steady_clock::time_point sent_at;
  std::chrono::steady_clock::time_point replied_at;
};

struct EngineOptions {
  std::size_t max_in_flight = 16;
  std::string run_id;  // generated when empty
  std::function<void(const TapEvent&)> tap;
};

RunReport execute(const WorkflowDefinition& def, ExecutionMode mode, const Topology& topology,
                  const EngineOptions& options = {});

}  // namespace circulate
