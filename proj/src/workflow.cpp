#include "circulate/workflow.hpp"

#include <algorithm>
#include <map>
#include <queue>

#include <json.hpp>

#include "circulate/error.hpp"

namespace circulate {

using nlohmann::json;

const TaskNode* WorkflowDefinition::find(std::string_view task_id) const {
  for (const auto& t : tasks) {
    if (t.task_id == task_id) return &t;
  }
  return nullptr;
}

std::set<std::string> WorkflowDefinition::task_ids() const {
  std::set<std::string> ids;
  for (const auto& t : tasks) ids.insert(t.task_id);
  return ids;
}

std::string_view to_string(ExecutionMode mode) {
  return mode == ExecutionMode::kCirculate ? "circulate" : "pure_orchestration";
}

ExecutionMode parse_execution_mode(std::string_view text) {
  if (text == "circulate") return ExecutionMode::kCirculate;
  if (text == "pure" || text == "pure_orchestration") return ExecutionMode::kPureOrchestration;
  throw Error(ErrorCode::kBadParams, "unknown execution mode '" + std::string(text) + "'");
}

namespace {

std::string required_string(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw Error(ErrorCode::kMalformedDocument,
                where + ": missing or non-string field '" + key + "'");
  }
  return it->get<std::string>();
}

InputBinding parse_binding(const json& j, const std::string& where) {
  if (!j.is_object() || j.size() != 1) {
    throw Error(ErrorCode::kMalformedDocument,
                where + ": input must be {\"edge\": ...} or {\"literal_b64\": ...}");
  }
  if (auto it = j.find("edge"); it != j.end() && it->is_string()) {
    return InputBinding::edge(it->get<std::string>());
  }
  if (auto it = j.find("literal_b64"); it != j.end() && it->is_string()) {
    return InputBinding::literal(base64_decode(it->get<std::string>()));
  }
  throw Error(ErrorCode::kMalformedDocument, where + ": unrecognised input binding");
}

}  // namespace

WorkflowDefinition parse_workflow(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedDocument, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kMalformedDocument, "document is not an object");

  WorkflowDefinition def;
  def.workflow_id = required_string(doc, "workflow_id", "workflow");
  auto tasks = doc.find("tasks");
  if (tasks == doc.end() || !tasks->is_array()) {
    throw Error(ErrorCode::kMalformedDocument, "workflow: missing array 'tasks'");
  }

  std::set<std::string> seen;
  for (const auto& jt : *tasks) {
    if (!jt.is_object()) throw Error(ErrorCode::kMalformedDocument, "task is not an object");
    TaskNode t;
    t.task_id = required_string(jt, "task_id", "task");
    const std::string where = "task '" + t.task_id + "'";
    t.site_id = required_string(jt, "site_id", where);
    t.service_op = required_string(jt, "service_op", where);
    t.output_name = required_string(jt, "output_name", where);
    auto inputs = jt.find("inputs");
    if (inputs == jt.end() || !inputs->is_array()) {
      throw Error(ErrorCode::kMalformedDocument, where + ": missing array 'inputs'");
    }
    for (const auto& ji : *inputs) t.inputs.push_back(parse_binding(ji, where));
    if (!seen.insert(t.task_id).second) {
      throw Error(ErrorCode::kDuplicateTaskId, t.task_id);
    }
    def.tasks.push_back(std::move(t));
  }

  std::set<std::string> consumed;
  for (const auto& t : def.tasks) {
    for (const auto& in : t.inputs) {
      if (!in.is_edge()) continue;
      if (in.source_task == t.task_id || !seen.contains(in.source_task)) {
        throw Error(ErrorCode::kDanglingEdge,
                    "task '" + t.task_id + "' consumes '" + in.source_task + "'");
      }
      consumed.insert(in.source_task);
    }
  }

  if (auto sinks = doc.find("sinks"); sinks != doc.end()) {
    if (!sinks->is_array()) throw Error(ErrorCode::kMalformedDocument, "'sinks' is not an array");
    std::set<std::string> unique;
    for (const auto& s : *sinks) {
      if (!s.is_string()) throw Error(ErrorCode::kMalformedDocument, "sink is not a string");
      auto id = s.get<std::string>();
      if (!seen.contains(id)) throw Error(ErrorCode::kMalformedDocument, "unknown sink '" + id + "'");
      if (!unique.insert(id).second) {
        throw Error(ErrorCode::kMalformedDocument, "duplicate sink '" + id + "'");
      }
      def.sinks.push_back(std::move(id));
    }
  } else {
    for (const auto& t : def.tasks) {
      if (!consumed.contains(t.task_id)) def.sinks.push_back(t.task_id);
    }
  }
  return def;
}

std::string serialize_workflow(const WorkflowDefinition& def) {
  json tasks = json::array();
  for (const auto& t : def.tasks) {
    json inputs = json::array();
    for (const auto& in : t.inputs) {
      if (in.is_edge()) {
        inputs.push_back({{"edge", in.source_task}});
      } else {
        inputs.push_back({{"literal_b64", base64_encode(in.literal_bytes)}});
      }
    }
    tasks.push_back({{"task_id", t.task_id},
                     {"site_id", t.site_id},
                     {"service_op", t.service_op},
                     {"inputs", std::move(inputs)},
                     {"output_name", t.output_name}});
  }
  json doc = {{"workflow_id", def.workflow_id}, {"tasks", std::move(tasks)}, {"sinks", def.sinks}};
  return doc.dump(2);
}

std::vector<std::string> validate_dag(const WorkflowDefinition& def) {
  // consumers[p] lists every task with an edge from p; one entry per binding.
  std::map<std::string, std::vector<std::string>> consumers;
  std::map<std::string, std::size_t> indegree;
  for (const auto& t : def.tasks) indegree.emplace(t.task_id, 0);
  for (const auto& t : def.tasks) {
    for (const auto& in : t.inputs) {
      if (!in.is_edge()) continue;
      if (!indegree.contains(in.source_task)) {
        throw Error(ErrorCode::kDanglingEdge,
                    "task '" + t.task_id + "' consumes '" + in.source_task + "'");
      }
      consumers[in.source_task].push_back(t.task_id);
      ++indegree[t.task_id];
    }
  }

  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& [id, deg] : indegree) {
    if (deg == 0) ready.push(id);
  }
  std::vector<std::string> order;
  order.reserve(def.tasks.size());
  while (!ready.empty()) {
    std::string id = ready.top();
    ready.pop();
    for (const auto& c : consumers[id]) {
      if (--indegree[c] == 0) ready.push(c);
    }
    order.push_back(std::move(id));
  }
  if (order.size() == def.tasks.size()) return order;

  // Every leftover task lies on or downstream of a cycle; walking producers
  // among the leftovers must revisit a node.
  std::string start;
  for (const auto& [id, deg] : indegree) {
    if (deg > 0) {
      start = id;
      break;
    }
  }
  std::vector<std::string> path;
  std::map<std::string, std::size_t> position;
  std::string cur = start;
  while (!position.contains(cur)) {
    position[cur] = path.size();
    path.push_back(cur);
    const TaskNode* node = def.find(cur);
    for (const auto& in : node->inputs) {
      if (in.is_edge() && indegree[in.source_task] > 0) {
        cur = in.source_task;
        break;
      }
    }
  }
  std::string cycle;
  for (std::size_t i = position[cur]; i < path.size(); ++i) {
    if (!cycle.empty()) cycle += " <- ";
    cycle += path[i];
  }
  throw Error(ErrorCode::kCycleDetected, cycle);
}

std::set<std::string> ready_tasks(const WorkflowDefinition& def,
                                  const std::set<std::string>& completed) {
  std::set<std::string> ready;
  for (const auto& t : def.tasks) {
    if (completed.contains(t.task_id)) continue;
    const bool satisfied = std::all_of(t.inputs.begin(), t.inputs.end(), [&](const auto& in) {
      return !in.is_edge() || completed.contains(in.source_task);
    });
    if (satisfied) ready.insert(t.task_id);
  }
  return ready;
}

}  // namespace circulate
