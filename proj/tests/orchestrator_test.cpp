#include <doctest.h>

#include <mutex>
#include <random>

#include "circulate/codec.hpp"
#include "circulate/orchestrator.hpp"
#include "circulate/proxy.hpp"
#include "circulate/workloads.hpp"
#include "test_util.hpp"

using namespace circulate;
using namespace circulate::testing;

namespace {

constexpr std::uint64_t kMB = 1000 * 1000;

ServiceRegistry test_services() {
  ServiceRegistry s = builtin_services();
  s["fail"] = [](std::span<const std::string_view>) -> Bytes {
    throw Error(ErrorCode::kBadParams, "refused");
  };
  s["grow"] = [](std::span<const std::string_view>) -> Bytes { return Bytes(200000, 'g'); };
  s["head"] = [](std::span<const std::string_view> in) -> Bytes {
    return in.empty() || in[0].empty() ? Bytes{} : Bytes(in[0].substr(0, 1));
  };
  return s;
}

// Every echo task's output is its inputs concatenated in binding order.
std::map<std::string, Bytes> echo_oracle(const WorkflowDefinition& def) {
  std::map<std::string, Bytes> out;
  for (const auto& id : validate_dag(def)) {
    const auto* t = def.find(id);
    Bytes b;
    for (const auto& in : t->inputs) b += in.is_edge() ? out.at(in.source_task) : in.literal_bytes;
    out[id] = b;
  }
  return out;
}

std::map<std::string, std::uint64_t> sizes_of(const std::map<std::string, Bytes>& outputs) {
  std::map<std::string, std::uint64_t> s;
  for (const auto& [k, v] : outputs) s[k] = v.size();
  return s;
}

TaskNode task(std::string id, std::string site, std::vector<InputBinding> inputs) {
  return TaskNode{std::move(id), std::move(site), "echo", std::move(inputs), "out"};
}

DataReference ref_at(const std::string& id, const std::string& site) {
  return DataReference{"ref-" + id, site, 10, sha256_hex(id)};
}

struct Tap {
  std::mutex mu;
  std::vector<TapEvent> events;
  EngineOptions options(std::string run_id) {
    EngineOptions o;
    o.run_id = std::move(run_id);
    o.tap = [this](const TapEvent& e) {
      std::lock_guard lock(mu);
      events.push_back(e);
    };
    return o;
  }
};

}  // namespace

TEST_CASE("plan_transfers groups needed refs by source") {
  auto def = parse_workflow(kThreeLabDocument);
  RunState state;
  for (const char* t : {"WS-1", "WS-2", "WS-3"}) {
    state.completed.insert(t);
    state.ref_of[t] = ref_at(t, def.find(t)->site_id);
  }

  SUBCASE("one request per remote producer") {
    auto plan = plan_transfers(def, *def.find("mine"), state);
    REQUIRE(plan.size() == 3);
    CHECK(plan[0].source_site == "A");
    CHECK(plan[1].source_site == "B");
    CHECK(plan[2].source_site == "C");
    for (const auto& p : plan) {
      CHECK(p.request.target_site == "D");
      CHECK(p.request.refs.size() == 1);
    }
    CHECK(plan[0].request.refs[0] == "ref-WS-1");
  }
  SUBCASE("already resident refs are skipped") {
    state.replicas["ref-WS-2"].insert("D");
    auto plan = plan_transfers(def, *def.find("mine"), state);
    CHECK(plan.size() == 2);
  }
  SUBCASE("colocated producer needs nothing") {
    WorkflowDefinition local{"w", {task("a", "P-1", {InputBinding::literal("x")}),
                                   task("b", "P-1", {InputBinding::edge("a")})},
                             {"b"}};
    RunState s;
    s.completed.insert("a");
    s.ref_of["a"] = ref_at("a", "P-1");
    CHECK(plan_transfers(local, *local.find("b"), s).empty());
  }
  SUBCASE("two refs at one source share a request") {
    WorkflowDefinition two{"w", {task("a", "P-1", {InputBinding::literal("x")}),
                                 task("b", "P-1", {InputBinding::literal("y")}),
                                 task("c", "P-4", {InputBinding::edge("a"), InputBinding::edge("b"),
                                                   InputBinding::edge("a")})},
                           {"c"}};
    RunState s;
    s.ref_of["a"] = ref_at("a", "P-1");
    s.ref_of["b"] = ref_at("b", "P-1");
    s.completed = {"a", "b"};
    auto plan = plan_transfers(two, *two.find("c"), s);
    REQUIRE(plan.size() == 1);
    CHECK(plan[0].source_site == "P-1");
    CHECK(plan[0].request.refs == std::vector<std::string>{"ref-a", "ref-b"});
    CHECK(plan[0].request.target_site == "P-4");
  }
}

TEST_CASE("traffic_model examples") {
  SUBCASE("fan-in of three") {
    WorkflowDefinition def{"fan", {task("s1", "P-1", {}), task("s2", "P-2", {}),
                                   task("s3", "P-3", {}),
                                   task("mine", "P-4", {InputBinding::edge("s1"),
                                                        InputBinding::edge("s2"),
                                                        InputBinding::edge("s3")})},
                           {"mine"}};
    std::map<std::string, std::uint64_t> sizes{
        {"s1", 10 * kMB}, {"s2", 10 * kMB}, {"s3", 10 * kMB}, {"mine", kMB}};
    auto pure = traffic_model(def, sizes, ExecutionMode::kPureOrchestration);
    CHECK(pure.engine_payload_bytes == 61 * kMB);
    CHECK(pure.p2p_payload_bytes == 0);
    auto circ = traffic_model(def, sizes, ExecutionMode::kCirculate);
    CHECK(circ.engine_payload_bytes == kMB);
    CHECK(circ.p2p_payload_bytes == 30 * kMB);
  }
  SUBCASE("single task") {
    WorkflowDefinition def{"one", {task("t", "P-1", {})}, {"t"}};
    std::map<std::string, std::uint64_t> sizes{{"t", 5 * kMB}};
    CHECK(traffic_model(def, sizes, ExecutionMode::kPureOrchestration).engine_payload_bytes ==
          5 * kMB);
    auto circ = traffic_model(def, sizes, ExecutionMode::kCirculate);
    CHECK(circ.engine_payload_bytes == 5 * kMB);
    CHECK(circ.p2p_payload_bytes == 0);
  }
  SUBCASE("three-stage chain") {
    WorkflowDefinition def{"chain", {task("A", "P-1", {}),
                                     task("B", "P-2", {InputBinding::edge("A")}),
                                     task("C", "P-3", {InputBinding::edge("B")})},
                           {"C"}};
    std::map<std::string, std::uint64_t> sizes{{"A", 10 * kMB}, {"B", 10 * kMB}, {"C", 10 * kMB}};
    CHECK(traffic_model(def, sizes, ExecutionMode::kPureOrchestration).engine_payload_bytes ==
          50 * kMB);
    auto circ = traffic_model(def, sizes, ExecutionMode::kCirculate);
    CHECK(circ.engine_payload_bytes == 10 * kMB);
    CHECK(circ.p2p_payload_bytes == 20 * kMB);
  }
  SUBCASE("one ref to two consumers at one site moves once") {
    WorkflowDefinition def{"fan", {task("a", "P-1", {}),
                                   task("b", "P-2", {InputBinding::edge("a")}),
                                   task("c", "P-2", {InputBinding::edge("a")}),
                                   task("d", "P-1", {InputBinding::edge("a")})},
                           {"b", "c", "d"}};
    std::map<std::string, std::uint64_t> sizes{{"a", 7}, {"b", 1}, {"c", 2}, {"d", 3}};
    auto circ = traffic_model(def, sizes, ExecutionMode::kCirculate);
    CHECK(circ.p2p_payload_bytes == 7);
    CHECK(circ.engine_payload_bytes == 6);
    CHECK(traffic_model(def, sizes, ExecutionMode::kPureOrchestration).engine_payload_bytes ==
          13 + 21);
  }
}

TEST_CASE("three-laboratory scenario in both modes") {
  LocalCluster cluster(Topology::uniform({"A", "B", "C", "D"}, 0, 0), test_services());
  const auto def = parse_workflow(kThreeLabDocument);
  const auto expected = sha256_hex("lab1lab2lab3");

  SUBCASE("circulate") {
    Tap tap;
    auto report = execute(def, ExecutionMode::kCirculate, cluster.topology(), tap.options("lab-c"));
    CHECK(report.mode == ExecutionMode::kCirculate);
    CHECK(report.result_digests.at("mine") == expected);
    // 12 literal bytes out, the 12-byte result back.
    CHECK(report.engine_payload_bytes == 24);
    CHECK(report.p2p_payload_bytes == 12);
    CHECK(report.message_counts.at("InvokeRequest") == 4);
    CHECK(report.message_counts.at("TransferRequest") == 3);
    CHECK(report.message_counts.at("MaterializeRequest") == 1);
    CHECK(report.message_counts.at("FlushRequest") == 4);
    CHECK(report.engine_control_bytes > 0);
    for (const auto& e : tap.events) {
      if (e.reply.type() == MsgType::kInvokeResponse) CHECK(e.reply.payload.empty());
    }
    CHECK(report.task_timeline.size() == 4);
    CHECK(report.task_timeline.back().task_id == "mine");
    CHECK(cluster.stored_for_run("lab-c") == 0);
  }
  SUBCASE("pure") {
    auto report = execute(def, ExecutionMode::kPureOrchestration, cluster.topology(),
                          {.run_id = "lab-p"});
    CHECK(report.result_digests.at("mine") == expected);
    // literals 12, outputs 12 + 12 in, 12 re-sent.
    CHECK(report.engine_payload_bytes == 48);
    CHECK(report.p2p_payload_bytes == 0);
    CHECK(!report.message_counts.contains("TransferRequest"));
    CHECK(!report.message_counts.contains("MaterializeRequest"));
    CHECK(cluster.stored_for_run("lab-p") == 0);
  }
}

TEST_CASE("independent tasks overlap and transfers precede invokes") {
  LocalCluster cluster(Topology::uniform({"A", "B", "C", "D"}, 60, 0), test_services());
  const auto def = parse_workflow(kThreeLabDocument);
  Tap tap;
  auto report = execute(def, ExecutionMode::kCirculate, cluster.topology(), tap.options("lat"));

  std::map<std::string, TaskSpan> span;
  for (const auto& s : report.task_timeline) span[s.task_id] = s;
  for (const char* a : {"WS-1", "WS-2", "WS-3"}) {
    for (const char* b : {"WS-1", "WS-2", "WS-3"}) {
      CHECK(span[a].start_s < span[b].end_s);
    }
    CHECK(span[a].end_s <= span["mine"].start_s);
  }
  double first = 1e9, last = 0;
  for (const auto& s : report.task_timeline) {
    first = std::min(first, s.start_s);
    last = std::max(last, s.end_s);
  }
  CHECK(report.makespan_s >= last - first);
  // Serial execution would take at least 4 round trips of 120 ms for the sources alone.
  CHECK(report.makespan_s < 0.36 + 0.24 + 0.24 + 0.5);

  std::optional<std::chrono::steady_clock::time_point> mine_sent;
  std::vector<std::chrono::steady_clock::time_point> acks;
  for (const auto& e : tap.events) {
    if (const auto* inv = std::get_if<InvokeRequest>(&e.request.body); inv && inv->task_id == "mine") {
      mine_sent = e.sent_at;
    }
    if (e.request.type() == MsgType::kTransferRequest) acks.push_back(e.replied_at);
  }
  REQUIRE(mine_sent.has_value());
  REQUIRE(acks.size() == 3);
  for (auto t : acks) CHECK(t <= *mine_sent);
}

TEST_CASE("single echo task returns its literal") {
  LocalCluster cluster(Topology::uniform({"A"}, 0, 0), test_services());
  WorkflowDefinition def{"one", {task("t", "A", {InputBinding::literal("hello")})}, {"t"}};
  for (auto mode : {ExecutionMode::kPureOrchestration, ExecutionMode::kCirculate}) {
    auto report = execute(def, mode, cluster.topology());
    CHECK(report.result_digests.at("t") == sha256_hex("hello"));
    CHECK(report.engine_payload_bytes == 10);
    CHECK(cluster.stored_for_run(report.run_id) == 0);
    CHECK(parse_report(serialize_report(report)).result_digests == report.result_digests);
  }
}

TEST_CASE("circulate keeps intermediates away from the engine") {
  LocalCluster cluster(Topology::uniform({"A", "B", "C"}, 0, 0), test_services());
  WorkflowDefinition def{"chain",
                         {TaskNode{"big", "A", "grow", {InputBinding::literal("x")}, "out"},
                          task("copy", "B", {InputBinding::edge("big")}),
                          TaskNode{"small", "C", "head", {InputBinding::edge("copy")}, "out"}},
                         {"small"}};
  auto circ = execute(def, ExecutionMode::kCirculate, cluster.topology());
  CHECK(circ.engine_payload_bytes == 2);
  CHECK(circ.p2p_payload_bytes == 400000);
  auto pure = execute(def, ExecutionMode::kPureOrchestration, cluster.topology());
  CHECK(pure.engine_payload_bytes == 1 + 200000 * 4 + 1);
  CHECK(pure.result_digests == circ.result_digests);
}

TEST_CASE("failures abort the run and still flush") {
  LocalCluster cluster(Topology::uniform({"A", "B"}, 0, 0), test_services());
  WorkflowDefinition def{"bad",
                         {task("ok", "A", {InputBinding::literal("fine")}),
                          TaskNode{"boom", "B", "fail", {InputBinding::edge("ok")}, "out"},
                          task("after", "A", {InputBinding::edge("boom")})},
                         {"after"}};
  for (auto mode : {ExecutionMode::kPureOrchestration, ExecutionMode::kCirculate}) {
    const std::string run = std::string("fail-") + std::string(to_string(mode));
    try {
      execute(def, mode, cluster.topology(), {.run_id = run});
      FAIL("expected TaskFailed");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTaskFailed);
      CHECK(e.cause() == ErrorCode::kServiceFailure);
      CHECK(std::string(e.what()).find("boom") != std::string::npos);
    }
    CHECK(cluster.stored_for_run(run) == 0);
  }
}

TEST_CASE("unreachable proxies surface as Unreachable") {
  auto topo = Topology::uniform({"A"}, 0, 0);
  std::uint16_t dead = 0;
  {
    FrameServer probe("127.0.0.1", 0, [](const Message& m) { return m; });
    probe.start();
    dead = probe.port();
    probe.stop();
  }
  topo.set_address("A", "127.0.0.1", dead);
  WorkflowDefinition def{"one", {task("t", "A", {InputBinding::literal("x")})}, {"t"}};
  CHECK(code_of([&] { execute(def, ExecutionMode::kCirculate, topo); }) == ErrorCode::kUnreachable);
}

TEST_CASE("invalid workflows are refused before any traffic") {
  LocalCluster cluster(Topology::uniform({"A"}, 0, 0), test_services());
  WorkflowDefinition cyc{"c", {task("a", "A", {InputBinding::edge("b")}),
                               task("b", "A", {InputBinding::edge("a")})},
                         {}};
  CHECK(code_of([&] { execute(cyc, ExecutionMode::kCirculate, cluster.topology()); }) ==
        ErrorCode::kCycleDetected);
  WorkflowDefinition nowhere{"n", {task("a", "Z", {})}, {"a"}};
  CHECK(code_of([&] { execute(nowhere, ExecutionMode::kCirculate, cluster.topology()); }) ==
        ErrorCode::kUnknownSite);
}

TEST_CASE("random DAGs match the local oracle and the traffic model") {
  const std::vector<std::string> sites{"A", "B", "C", "D"};
  LocalCluster cluster(Topology::uniform(sites, 0, 0), test_services());
  std::mt19937_64 rng(31337);
  for (int i = 0; i < 25; ++i) {
    const auto n = std::uniform_int_distribution<std::size_t>(1, 15)(rng);
    auto def = random_dag(rng, n, sites);
    const auto outputs = echo_oracle(def);
    const auto sizes = sizes_of(outputs);
    for (auto mode : {ExecutionMode::kPureOrchestration, ExecutionMode::kCirculate}) {
      Tap tap;
      auto report = execute(def, mode, cluster.topology(), tap.options("dag-" + std::to_string(i)));
      const auto predicted = traffic_model(def, sizes, mode);
      CHECK(report.engine_payload_bytes == predicted.engine_payload_bytes);
      CHECK(report.p2p_payload_bytes == predicted.p2p_payload_bytes);
      REQUIRE(report.result_digests.size() == def.sinks.size());
      for (const auto& s : def.sinks) CHECK(report.result_digests.at(s) == sha256_hex(outputs.at(s)));
      CHECK(report.task_timeline.size() == n);
      CHECK(cluster.stored_for_run(report.run_id) == 0);
      std::size_t invokes = 0;
      for (const auto& e : tap.events) {
        if (e.request.type() == MsgType::kInvokeRequest) ++invokes;
        if (mode == ExecutionMode::kCirculate && e.reply.type() == MsgType::kInvokeResponse) {
          CHECK(e.reply.payload.empty());
        }
      }
      CHECK(invokes == n);
    }
  }
}
