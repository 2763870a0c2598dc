#pragma once

// Shared fixtures for the unit suites.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "circulate/error.hpp"
#include "circulate/workflow.hpp"

namespace circulate::testing {

// Code of the Error thrown by `fn`, kNone when it returns normally.
inline ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kNone;
}

// The three-laboratory scenario: WS-1..WS-3 at sites A, B, C feed "mine" at D.
inline constexpr const char* kThreeLabDocument = R"({
  "workflow_id": "three-lab",
  "tasks": [
    {"task_id": "WS-1", "site_id": "A", "service_op": "echo",
     "inputs": [{"literal_b64": "bGFiMQ=="}], "output_name": "R-WS1"},
    {"task_id": "WS-2", "site_id": "B", "service_op": "echo",
     "inputs": [{"literal_b64": "bGFiMg=="}], "output_name": "R-WS2"},
    {"task_id": "WS-3", "site_id": "C", "service_op": "echo",
     "inputs": [{"literal_b64": "bGFiMw=="}], "output_name": "R-WS3"},
    {"task_id": "mine", "site_id": "D", "service_op": "echo",
     "inputs": [{"edge": "WS-1"}, {"edge": "WS-2"}, {"edge": "WS-3"}], "output_name": "R-DM"}
  ],
  "sinks": ["mine"]
})";

// Random DAG over `n` tasks: edges only point from lower to higher index, so
// it is acyclic by construction. Task ids are shuffled so the topological
// order is not simply the id order. Every task runs "echo" with one literal.
inline WorkflowDefinition random_dag(std::mt19937_64& rng, std::size_t n,
                                     const std::vector<std::string>& sites) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("t" + std::to_string(i));
  std::shuffle(ids.begin(), ids.end(), rng);
  std::bernoulli_distribution edge(n > 0 ? std::min(1.0, 2.5 / static_cast<double>(n)) : 0.0);
  std::uniform_int_distribution<std::size_t> site(0, sites.size() - 1);
  std::uniform_int_distribution<int> len(0, 64);

  WorkflowDefinition def;
  def.workflow_id = "random";
  std::vector<bool> consumed(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    TaskNode t{ids[i], sites[site(rng)], "echo", {}, "out"};
    t.inputs.push_back(InputBinding::literal(std::string(static_cast<std::size_t>(len(rng)), 'a' + static_cast<char>(i % 26))));
    for (std::size_t j = 0; j < i; ++j) {
      if (edge(rng)) {
        t.inputs.push_back(InputBinding::edge(ids[j]));
        consumed[j] = true;
      }
    }
    def.tasks.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!consumed[i]) def.sinks.push_back(ids[i]);
  }
  return def;
}

}  // namespace circulate::testing

#include "circulate/transport.hpp"

namespace circulate::testing {

inline std::string random_token(std::mt19937_64& rng, std::size_t max_len = 12) {
  static const std::vector<std::string> kPieces = [] {
    std::vector<std::string> p;
    for (char c : std::string("abcdefghijklmnopqrstuvwxyz0123456789-_\"\\/ \t\n")) p.emplace_back(1, c);
    p.emplace_back("\xc3\xa9");  // two-byte UTF-8
    return p;
  }();
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, kPieces.size() - 1);
  std::string s;
  for (std::size_t i = len(rng); i > 0; --i) s += kPieces[pick(rng)];
  return s;
}

inline DataReference random_ref(std::mt19937_64& rng) {
  return {random_token(rng, 36), random_token(rng, 6), rng() >> 20, random_token(rng, 64)};
}

// Payload size for message `i` of a generated run: the endpoints 0 and
// 1 MiB appear explicitly, the rest is log-uniform over the range.
inline std::size_t payload_size_for(std::mt19937_64& rng, int i) {
  constexpr std::size_t kMiB = 1 << 20;
  if (i % 97 == 0) return 0;
  if (i % 97 == 1) return kMiB;
  const double e = std::uniform_real_distribution<double>(0.0, 20.0)(rng);
  return std::min<std::size_t>(kMiB, static_cast<std::size_t>(std::exp2(e)) - 1);
}

inline Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n, '\0');
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const auto w = rng();
    std::memcpy(b.data() + i, &w, 8);
  }
  for (; i < n; ++i) b[i] = static_cast<char>(rng());
  return b;
}

// Message of the given type with random fields; payload only where allowed.
inline Message random_message(std::mt19937_64& rng, MsgType type, std::size_t payload_size) {
  Message m;
  m.run_id = random_token(rng);
  std::uniform_int_distribution<int> count(0, 4);
  switch (type) {
    case MsgType::kInvokeRequest: {
      InvokeRequest r{random_token(rng), random_token(rng), {}, (rng() & 1) != 0};
      const int k = count(rng);
      std::size_t remaining = payload_size;
      bool has_literal = false;
      for (int i = 0; i < k; ++i) {
        if (rng() & 1) {
          r.inputs.push_back({random_ref(rng), 0});
        } else {
          const std::size_t part = remaining / 2;
          r.inputs.push_back({std::nullopt, part});
          remaining -= part;
          has_literal = true;
        }
      }
      if (payload_size > 0 || !has_literal) r.inputs.push_back({std::nullopt, remaining});
      else r.inputs.back().literal_size += remaining;
      m.body = r;
      m.payload = random_bytes(rng, payload_size);
      break;
    }
    case MsgType::kInvokeResponse: {
      InvokeResponse r{random_token(rng), std::nullopt};
      if (rng() & 1) r.ref = random_ref(rng);
      m.body = r;
      m.payload = random_bytes(rng, payload_size);
      break;
    }
    case MsgType::kTransferRequest: {
      TransferRequest r;
      for (int i = count(rng); i > 0; --i) r.refs.push_back(random_token(rng, 36));
      r.target_site = random_token(rng, 6);
      if (rng() & 1) r.pushed = random_ref(rng);
      m.body = r;
      m.payload = random_bytes(rng, payload_size);
      break;
    }
    case MsgType::kTransferAck: {
      TransferAck r;
      for (int i = count(rng); i > 0; --i) r.refs.push_back(random_token(rng, 36));
      r.p2p_payload_bytes = rng() >> 16;
      r.p2p_frame_bytes = rng() >> 16;
      m.body = r;
      break;
    }
    case MsgType::kMaterializeRequest:
      m.body = MaterializeRequest{random_token(rng, 36)};
      break;
    case MsgType::kMaterializeResponse:
      m.body = MaterializeResponse{random_token(rng, 36)};
      m.payload = random_bytes(rng, payload_size);
      break;
    case MsgType::kFlushRequest:
      m.body = FlushRequest{};
      break;
    case MsgType::kFlushAck:
      m.body = FlushAck{};
      break;
    case MsgType::kError:
      m.body = ErrorReply{random_token(rng), random_token(rng, 40)};
      break;
  }
  return m;
}

}  // namespace circulate::testing
