#include "circulate/orchestrator.hpp"

#include <algorithm>
#include <condition_variable>
#include <future>
#include <memory>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "circulate/error.hpp"
#include "circulate/net.hpp"

namespace circulate {

using nlohmann::json;

std::string serialize_report(const RunReport& r) {
  json timeline = json::array();
  for (const auto& s : r.task_timeline) {
    timeline.push_back({{"task_id", s.task_id}, {"start_s", s.start_s}, {"end_s", s.end_s}});
  }
  json doc = {{"run_id", r.run_id},
              {"mode", to_string(r.mode)},
              {"makespan_s", r.makespan_s},
              {"engine_payload_bytes", r.engine_payload_bytes},
              {"engine_control_bytes", r.engine_control_bytes},
              {"p2p_payload_bytes", r.p2p_payload_bytes},
              {"message_counts", r.message_counts},
              {"task_timeline", std::move(timeline)},
              {"result_digests", r.result_digests}};
  return doc.dump(2);
}

RunReport parse_report(std::string_view json_text) {
  try {
    const json doc = json::parse(json_text);
    RunReport r;
    r.run_id = doc.at("run_id").get<std::string>();
    r.mode = parse_execution_mode(doc.at("mode").get<std::string>());
    r.makespan_s = doc.at("makespan_s").get<double>();
    r.engine_payload_bytes = doc.at("engine_payload_bytes").get<std::uint64_t>();
    r.engine_control_bytes = doc.at("engine_control_bytes").get<std::uint64_t>();
    r.p2p_payload_bytes = doc.at("p2p_payload_bytes").get<std::uint64_t>();
    r.message_counts = doc.at("message_counts").get<std::map<std::string, std::uint64_t>>();
    for (const auto& s : doc.at("task_timeline")) {
      r.task_timeline.push_back({s.at("task_id").get<std::string>(), s.at("start_s").get<double>(),
                                 s.at("end_s").get<double>()});
    }
    r.result_digests = doc.at("result_digests").get<std::map<std::string, std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("run report: ") + e.what());
  }
}

bool RunState::resident(const DataReference& ref, const std::string& site) const {
  if (ref.proxy_site == site) return true;
  auto it = replicas.find(ref.ref_id);
  return it != replicas.end() && it->second.contains(site);
}

std::vector<PlannedTransfer> plan_transfers(const WorkflowDefinition&, const TaskNode& task,
                                            const RunState& state) {
  std::map<std::string, TransferRequest> by_source;
  std::set<std::string> seen;
  for (const auto& in : task.inputs) {
    if (!in.is_edge()) continue;
    const DataReference& ref = state.ref_of.at(in.source_task);
    if (state.resident(ref, task.site_id) || !seen.insert(ref.ref_id).second) continue;
    auto& req = by_source[ref.proxy_site];
    req.target_site = task.site_id;
    req.refs.push_back(ref.ref_id);
  }
  std::vector<PlannedTransfer> plan;
  for (auto& [source, req] : by_source) plan.push_back({source, std::move(req)});
  return plan;
}

TrafficPrediction traffic_model(const WorkflowDefinition& def,
                                const std::map<std::string, std::uint64_t>& output_sizes,
                                ExecutionMode mode) {
  TrafficPrediction p;
  std::set<std::pair<std::string, std::string>> moved;  // (producer, consumer site)
  for (const auto& t : def.tasks) {
    if (mode == ExecutionMode::kPureOrchestration) {
      p.engine_payload_bytes += output_sizes.at(t.task_id);
    }
    for (const auto& in : t.inputs) {
      if (!in.is_edge()) {
        p.engine_payload_bytes += in.literal_bytes.size();
        continue;
      }
      const auto size = output_sizes.at(in.source_task);
      if (mode == ExecutionMode::kPureOrchestration) {
        p.engine_payload_bytes += size;
      } else if (def.find(in.source_task)->site_id != t.site_id &&
                 moved.emplace(in.source_task, t.site_id).second) {
        p.p2p_payload_bytes += size;
      }
    }
  }
  if (mode == ExecutionMode::kCirculate) {
    for (const auto& s : def.sinks) p.engine_payload_bytes += output_sizes.at(s);
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

class Run {
 public:
  Run(const WorkflowDefinition& def, ExecutionMode mode, const Topology& topology,
      const EngineOptions& options)
      : def_(def), mode_(mode), topology_(topology), options_(options) {
    report_.run_id = options.run_id.empty() ? "run-" + new_uuid() : options.run_id;
    report_.mode = mode;
  }

  RunReport go();

 private:
  Exchange call(const std::string& site, const Message& request, std::string_view frame = {});
  void run_task(const TaskNode& task);
  void stage_inputs(const TaskNode& task);
  void finish_sinks();
  void flush_all(bool swallow_errors);
  double since_start(Clock::time_point t) const {
    return std::chrono::duration<double>(t - start_).count();
  }

  const WorkflowDefinition& def_;
  ExecutionMode mode_;
  const Topology& topology_;
  const EngineOptions& options_;
  Clock::time_point start_;

  std::mutex mu_;
  std::condition_variable cv_;
  RunState state_;
  std::map<std::string, std::shared_ptr<const Bytes>> payload_of_;  // pure mode
  std::map<std::pair<std::string, std::string>, std::shared_future<void>> transfers_;
  std::exception_ptr failure_;
  RunReport report_;
  std::mutex tap_mu_;
};

Exchange Run::call(const std::string& site, const Message& request, std::string_view frame) {
  LinkClient link(topology_, std::string(Topology::kEngineSite), site);
  const auto sent = Clock::now();
  Exchange ex = frame.empty() ? link.exchange(request) : link.exchange_frame(frame);
  const auto replied = Clock::now();
  {
    std::lock_guard lock(mu_);
    report_.engine_payload_bytes += request.payload.size() + ex.reply.payload.size();
    report_.engine_control_bytes += (ex.request_frame_bytes - request.payload.size()) +
                                    (ex.reply_frame_bytes - ex.reply.payload.size());
    ++report_.message_counts[std::string(to_string(request.type()))];
    ++report_.message_counts[std::string(to_string(ex.reply.type()))];
  }
  if (options_.tap) {
    std::lock_guard lock(tap_mu_);
    options_.tap(TapEvent{site, request, ex.reply, ex.request_frame_bytes, ex.reply_frame_bytes,
                          sent, replied});
  }
  return ex;
}

void Run::stage_inputs(const TaskNode& task) {
  std::vector<std::shared_future<void>> waits;
  std::vector<std::pair<std::string, TransferRequest>> to_issue;
  std::vector<std::shared_ptr<std::promise<void>>> promises;
  {
    std::lock_guard lock(mu_);
    for (auto& planned : plan_transfers(def_, task, state_)) {
      TransferRequest fresh{{}, planned.request.target_site, std::nullopt};
      for (const auto& ref_id : planned.request.refs) {
        auto key = std::make_pair(ref_id, task.site_id);
        if (auto it = transfers_.find(key); it != transfers_.end()) {
          waits.push_back(it->second);
          continue;
        }
        auto promise = std::make_shared<std::promise<void>>();
        transfers_.emplace(key, promise->get_future().share());
        promises.push_back(promise);
        fresh.refs.push_back(ref_id);
      }
      if (!fresh.refs.empty()) to_issue.emplace_back(planned.source_site, std::move(fresh));
    }
  }

  std::size_t next_promise = 0;
  std::vector<std::future<void>> issued;
  for (auto& [source, req] : to_issue) {
    std::vector<std::shared_ptr<std::promise<void>>> mine(
        promises.begin() + static_cast<std::ptrdiff_t>(next_promise),
        promises.begin() + static_cast<std::ptrdiff_t>(next_promise + req.refs.size()));
    next_promise += req.refs.size();
    issued.push_back(std::async(std::launch::async, [this, source = source, req = req, mine] {
      try {
        Exchange ex = call(source, Message{report_.run_id, req, {}});
        raise_if_error(ex.reply);
        const auto& ack = std::get<TransferAck>(ex.reply.body);
        std::lock_guard lock(mu_);
        report_.p2p_payload_bytes += ack.p2p_payload_bytes;
        for (const auto& id : req.refs) state_.replicas[id].insert(req.target_site);
      } catch (...) {
        for (auto& p : mine) p->set_exception(std::current_exception());
        throw;
      }
      for (auto& p : mine) p->set_value();
    }));
  }
  for (auto& f : issued) f.get();
  for (auto& w : waits) w.get();
}

void Run::run_task(const TaskNode& task) {
  if (mode_ == ExecutionMode::kCirculate) stage_inputs(task);

  InvokeRequest req{task.task_id, task.service_op, {}, mode_ == ExecutionMode::kPureOrchestration};
  Message msg{report_.run_id, {}, {}};
  {
    std::lock_guard lock(mu_);
    for (const auto& in : task.inputs) {
      if (!in.is_edge()) {
        req.inputs.push_back({std::nullopt, in.literal_bytes.size()});
        msg.payload += in.literal_bytes;
      } else if (mode_ == ExecutionMode::kCirculate) {
        req.inputs.push_back({state_.ref_of.at(in.source_task), 0});
      } else {
        const Bytes& bytes = *payload_of_.at(in.source_task);
        req.inputs.push_back({std::nullopt, bytes.size()});
        msg.payload += bytes;
      }
    }
  }
  msg.body = std::move(req);

  const double started = since_start(Clock::now());
  Exchange ex = call(task.site_id, msg);
  const double ended = since_start(Clock::now());
  raise_if_error(ex.reply);
  const auto& resp = std::get<InvokeResponse>(ex.reply.body);
  if (!resp.ref) throw Error(ErrorCode::kBadHeader, "invoke response without a reference");

  std::lock_guard lock(mu_);
  state_.ref_of[task.task_id] = *resp.ref;
  if (mode_ == ExecutionMode::kPureOrchestration) {
    payload_of_[task.task_id] = std::make_shared<const Bytes>(std::move(ex.reply.payload));
  }
  report_.task_timeline.push_back({task.task_id, started, ended});
}

void Run::finish_sinks() {
  if (mode_ == ExecutionMode::kPureOrchestration) {
    for (const auto& sink : def_.sinks) {
      const auto& ref = state_.ref_of.at(sink);
      if (sha256_hex(*payload_of_.at(sink)) != ref.content_digest) {
        throw Error(ErrorCode::kIntegrityViolation, "result of " + sink + " fails its digest");
      }
      report_.result_digests[sink] = ref.content_digest;
    }
    return;
  }
  std::vector<std::future<void>> pending;
  for (const auto& sink : def_.sinks) {
    const DataReference ref = state_.ref_of.at(sink);
    pending.push_back(std::async(std::launch::async, [this, sink, ref] {
      Exchange ex = call(ref.proxy_site, Message{report_.run_id, MaterializeRequest{ref.ref_id}, {}});
      raise_if_error(ex.reply);
      if (ex.reply.payload.size() != ref.size_bytes ||
          sha256_hex(ex.reply.payload) != ref.content_digest) {
        throw Error(ErrorCode::kIntegrityViolation, "materialized " + sink + " fails its digest");
      }
      std::lock_guard lock(mu_);
      report_.result_digests[sink] = ref.content_digest;
    }));
  }
  std::exception_ptr first;
  for (auto& f : pending) {
    try {
      f.get();
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

void Run::flush_all(bool swallow_errors) {
  std::vector<std::future<void>> pending;
  for (const auto& site : topology_.proxy_sites()) {
    pending.push_back(std::async(std::launch::async, [this, site] {
      raise_if_error(call(site, Message{report_.run_id, FlushRequest{}, {}}).reply);
    }));
  }
  std::exception_ptr first;
  for (auto& f : pending) {
    try {
      f.get();
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first && !swallow_errors) std::rethrow_exception(first);
}

RunReport Run::go() {
  validate_dag(def_);
  for (const auto& t : def_.tasks) {
    if (!topology_.contains(t.site_id) || t.site_id == Topology::kEngineSite) {
      throw Error(ErrorCode::kUnknownSite, "task '" + t.task_id + "' runs at '" + t.site_id + "'");
    }
  }
  const std::size_t limit = std::max<std::size_t>(options_.max_in_flight, 1);

  start_ = Clock::now();
  std::vector<std::thread> workers;
  {
    std::unique_lock lock(mu_);
    while (!failure_ && state_.completed.size() < def_.tasks.size()) {
      for (const auto& id : ready_tasks(def_, state_.completed)) {
        if (state_.in_flight.size() >= limit) break;
        if (state_.in_flight.contains(id)) continue;
        state_.in_flight.insert(id);
        const TaskNode* task = def_.find(id);
        workers.emplace_back([this, task] {
          std::exception_ptr err;
          try {
            run_task(*task);
          } catch (const Error& e) {
            ErrorCode cause = e.code();
            if (e.code() == ErrorCode::kUnreachable) {
              err = std::current_exception();
            } else {
              err = std::make_exception_ptr(
                  Error(ErrorCode::kTaskFailed, task->task_id + ": " + e.what(), cause));
            }
          } catch (const std::exception& e) {
            err = std::make_exception_ptr(
                Error(ErrorCode::kTaskFailed, task->task_id + ": " + e.what()));
          }
          std::lock_guard guard(mu_);
          state_.in_flight.erase(task->task_id);
          if (err) {
            if (!failure_) failure_ = err;
          } else {
            state_.completed.insert(task->task_id);
          }
          cv_.notify_all();
        });
      }
      const std::size_t done = state_.completed.size();
      cv_.wait(lock, [&] { return failure_ || state_.completed.size() != done; });
    }
  }
  for (auto& w : workers) w.join();

  std::exception_ptr failure = failure_;
  if (!failure) {
    try {
      finish_sinks();
    } catch (...) {
      failure = std::current_exception();
    }
  }
  report_.makespan_s = since_start(Clock::now());
  flush_all(failure != nullptr);
  if (failure) std::rethrow_exception(failure);

  std::sort(report_.task_timeline.begin(), report_.task_timeline.end(),
            [](const TaskSpan& a, const TaskSpan& b) {
              return std::tie(a.start_s, a.task_id) < std::tie(b.start_s, b.task_id);
            });
  return report_;
}

}  // namespace

RunReport execute(const WorkflowDefinition& def, ExecutionMode mode, const Topology& topology,
                  const EngineOptions& options) {
  return Run(def, mode, topology, options).go();
}

}  // namespace circulate
