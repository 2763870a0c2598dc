#pragma once

// Wire protocol shared by the engine and proxies, and the topology that
// prices every link of the simulated multi-site network.
//
// Frame layout: 4-byte big-endian length N, then N bytes made of a JSON
// header, one 0x0A separator and the raw payload (possibly empty).

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "circulate/codec.hpp"
#include "circulate/workflow.hpp"

namespace circulate {

enum class MsgType {
  kInvokeRequest,
  kInvokeResponse,
  kTransferRequest,
  kTransferAck,
  kMaterializeRequest,
  kMaterializeResponse,
  kFlushRequest,
  kFlushAck,
  kError,
};

std::string_view to_string(MsgType type);
std::optional<MsgType> msg_type_from_string(std::string_view name);
// Only these types may carry payload bytes.
bool may_carry_payload(MsgType type);

// One invocation input. Literal bytes are carried in the message payload,
// concatenated in input order; `literal_size` delimits them.
struct InvokeInput {
  std::optional<DataReference> ref;
  std::uint64_t literal_size = 0;

  friend bool operator==(const InvokeInput&, const InvokeInput&) = default;
};

struct InvokeRequest {
  std::string task_id;
  std::string service_op;
  std::vector<InvokeInput> inputs;
  bool return_payload = false;
  friend bool operator==(const InvokeRequest&, const InvokeRequest&) = default;
};

struct InvokeResponse {
  std::string task_id;
  std::optional<DataReference> ref;
  friend bool operator==(const InvokeResponse&, const InvokeResponse&) = default;
};

// Engine -> source proxy: push `refs` to `target_site`.
// Source proxy -> target proxy: `pushed` describes the one ref whose bytes
// ride in the payload.
struct TransferRequest {
  std::vector<std::string> refs;
  std::string target_site;
  std::optional<DataReference> pushed;
  friend bool operator==(const TransferRequest&, const TransferRequest&) = default;
};

// p2p_* report what the source proxy put on proxy-to-proxy links.
struct TransferAck {
  std::vector<std::string> refs;
  std::uint64_t p2p_payload_bytes = 0;
  std::uint64_t p2p_frame_bytes = 0;
  friend bool operator==(const TransferAck&, const TransferAck&) = default;
};

struct MaterializeRequest {
  std::string ref_id;
  friend bool operator==(const MaterializeRequest&, const MaterializeRequest&) = default;
};

struct MaterializeResponse {
  std::string ref_id;
  friend bool operator==(const MaterializeResponse&, const MaterializeResponse&) = default;
};

struct FlushRequest {
  friend bool operator==(const FlushRequest&, const FlushRequest&) = default;
};

struct FlushAck {
  friend bool operator==(const FlushAck&, const FlushAck&) = default;
};

struct ErrorReply {
  std::string code;
  std::string detail;
  friend bool operator==(const ErrorReply&, const ErrorReply&) = default;
};

// Alternative order matches MsgType.
using MessageBody = std::variant<InvokeRequest, InvokeResponse, TransferRequest, TransferAck,
                                 MaterializeRequest, MaterializeResponse, FlushRequest, FlushAck,
                                 ErrorReply>;

struct Message {
  std::string run_id;
  MessageBody body;
  Bytes payload;

  MsgType type() const { return static_cast<MsgType>(body.index()); }
  friend bool operator==(const Message&, const Message&) = default;
};

inline constexpr std::size_t kFramePrefixBytes = 4;

// Throws PayloadOnControlMessage.
Bytes encode(const Message& msg);
// Header JSON alone (no prefix, separator or payload).
std::string encode_header(const Message& msg);
// `frame` must hold exactly one frame. Throws TruncatedFrame / BadHeader.
Message decode(std::string_view frame);
// Parses the N bytes that follow the length prefix.
Message decode_body(std::string_view body);

struct SiteAddress {
  std::string id;
  std::string host;
  std::uint16_t port = 0;

  std::string addr() const { return host + ":" + std::to_string(port); }
};

// Sites with their addresses plus per-pair latency and bandwidth. Index 0 is
// always the engine. Bandwidth 0 means uncapped.
class Topology {
 public:
  static constexpr std::string_view kEngineSite = "engine";

  Topology() = default;
  Topology(std::vector<SiteAddress> sites, std::vector<std::vector<double>> latency_ms,
           std::vector<std::vector<double>> bandwidth_bytes_per_s);

  // Engine plus `proxy_sites`, every distinct pair priced identically.
  static Topology uniform(const std::vector<std::string>& proxy_sites, double latency_ms,
                          double bandwidth_mbit);

  const std::vector<SiteAddress>& sites() const { return sites_; }
  // Proxy sites in listed order (engine excluded).
  std::vector<std::string> proxy_sites() const;
  bool contains(std::string_view site) const;
  std::size_t index_of(std::string_view site) const;  // throws UnknownSite
  const SiteAddress& address_of(std::string_view site) const;
  void set_address(std::string_view site, std::string host, std::uint16_t port);

  double latency_ms(std::string_view from, std::string_view to) const;
  double bandwidth_bytes_per_s(std::string_view from, std::string_view to) const;

 private:
  std::vector<SiteAddress> sites_;
  std::vector<std::vector<double>> latency_ms_;
  std::vector<std::vector<double>> bandwidth_;
};

// {"sites":[{"id","addr"}], "latency_ms":[[..]], "bandwidth_mbit":[[..]]}
Topology parse_topology(std::string_view document);
std::string serialize_topology(const Topology& topology);
Topology load_topology(const std::string& path);

using Seconds = std::chrono::duration<double>;

// latency + serialization time; zero between a site and itself.
Seconds link_delay(const Topology& topology, std::string_view from_site, std::string_view to_site,
                   std::uint64_t n_bytes);

}  // namespace circulate
