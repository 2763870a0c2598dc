#pragma once

// Workflow model: DAGs of service invocations bound to sites, the references
// that name task outputs held at proxies, and the two execution modes.

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "circulate/codec.hpp"

namespace circulate {

struct InputBinding {
  enum class Kind { kEdge, kLiteral };

  Kind kind = Kind::kLiteral;
  std::string source_task;  // kEdge only
  Bytes literal_bytes;      // kLiteral only

  static InputBinding edge(std::string producer) {
    return {Kind::kEdge, std::move(producer), {}};
  }
  static InputBinding literal(Bytes bytes) { return {Kind::kLiteral, {}, std::move(bytes)}; }

  bool is_edge() const { return kind == Kind::kEdge; }
  friend bool operator==(const InputBinding&, const InputBinding&) = default;
};

struct TaskNode {
  std::string task_id;
  std::string site_id;
  std::string service_op;
  std::vector<InputBinding> inputs;
  std::string output_name;

  friend bool operator==(const TaskNode&, const TaskNode&) = default;
};

struct WorkflowDefinition {
  std::string workflow_id;
  std::vector<TaskNode> tasks;
  std::vector<std::string> sinks;

  // nullptr when absent.
  const TaskNode* find(std::string_view task_id) const;
  std::set<std::string> task_ids() const;

  friend bool operator==(const WorkflowDefinition&, const WorkflowDefinition&) = default;
};

// Names a payload held at a proxy. The `$R-WS1` of the protocol walk.
struct DataReference {
  std::string ref_id;      // canonical UUID
  std::string proxy_site;  // site that produced and holds it
  std::uint64_t size_bytes = 0;
  std::string content_digest;  // SHA-256 hex

  friend bool operator==(const DataReference&, const DataReference&) = default;
};

enum class ExecutionMode { kPureOrchestration, kCirculate };

std::string_view to_string(ExecutionMode mode);
// Accepts "pure", "pure_orchestration" and "circulate".
ExecutionMode parse_execution_mode(std::string_view text);

// Parses the JSON workflow document. When "sinks" is omitted, every task that
// no other task consumes is a sink.
WorkflowDefinition parse_workflow(std::string_view document);
std::string serialize_workflow(const WorkflowDefinition& def);

// Kahn's algorithm, ties broken by ascending task_id.
std::vector<std::string> validate_dag(const WorkflowDefinition& def);

std::set<std::string> ready_tasks(const WorkflowDefinition& def,
                                  const std::set<std::string>& completed);

}  // namespace circulate
