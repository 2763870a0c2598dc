#include "circulate/transport.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "circulate/error.hpp"

namespace circulate {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 9> kTypeNames = {
    "InvokeRequest",      "InvokeResponse", "TransferRequest", "TransferAck", "MaterializeRequest",
    "MaterializeResponse", "FlushRequest",   "FlushAck",        "Error",
};

json ref_to_json(const DataReference& r) {
  return {{"ref_id", r.ref_id},
          {"proxy_site", r.proxy_site},
          {"size_bytes", r.size_bytes},
          {"content_digest", r.content_digest}};
}

DataReference ref_from_json(const json& j) {
  DataReference r;
  r.ref_id = j.at("ref_id").get<std::string>();
  r.proxy_site = j.at("proxy_site").get<std::string>();
  r.size_bytes = j.at("size_bytes").get<std::uint64_t>();
  r.content_digest = j.at("content_digest").get<std::string>();
  return r;
}

struct HeaderWriter {
  json& h;

  void operator()(const InvokeRequest& b) const {
    json inputs = json::array();
    for (const auto& in : b.inputs) {
      if (in.ref) {
        inputs.push_back({{"ref", ref_to_json(*in.ref)}});
      } else {
        inputs.push_back({{"literal", true}, {"size_bytes", in.literal_size}});
      }
    }
    h["task_id"] = b.task_id;
    h["service_op"] = b.service_op;
    h["inputs"] = std::move(inputs);
    h["return_payload"] = b.return_payload;
  }
  void operator()(const InvokeResponse& b) const {
    h["task_id"] = b.task_id;
    if (b.ref) h["ref"] = ref_to_json(*b.ref);
  }
  void operator()(const TransferRequest& b) const {
    h["refs"] = b.refs;
    h["target_site"] = b.target_site;
    if (b.pushed) h["pushed"] = ref_to_json(*b.pushed);
  }
  void operator()(const TransferAck& b) const {
    h["refs"] = b.refs;
    h["p2p_payload_bytes"] = b.p2p_payload_bytes;
    h["p2p_frame_bytes"] = b.p2p_frame_bytes;
  }
  void operator()(const MaterializeRequest& b) const { h["ref_id"] = b.ref_id; }
  void operator()(const MaterializeResponse& b) const { h["ref_id"] = b.ref_id; }
  void operator()(const FlushRequest&) const {}
  void operator()(const FlushAck&) const {}
  void operator()(const ErrorReply& b) const {
    h["code"] = b.code;
    h["detail"] = b.detail;
  }
};

MessageBody body_from_json(MsgType type, const json& h) {
  switch (type) {
    case MsgType::kInvokeRequest: {
      InvokeRequest b;
      b.task_id = h.at("task_id").get<std::string>();
      b.service_op = h.at("service_op").get<std::string>();
      b.return_payload = h.at("return_payload").get<bool>();
      for (const auto& ji : h.at("inputs")) {
        InvokeInput in;
        if (ji.contains("ref")) {
          in.ref = ref_from_json(ji.at("ref"));
        } else if (ji.value("literal", false)) {
          in.literal_size = ji.at("size_bytes").get<std::uint64_t>();
        } else {
          throw Error(ErrorCode::kBadHeader, "input is neither ref nor literal");
        }
        b.inputs.push_back(std::move(in));
      }
      return b;
    }
    case MsgType::kInvokeResponse: {
      InvokeResponse b;
      b.task_id = h.at("task_id").get<std::string>();
      if (h.contains("ref")) b.ref = ref_from_json(h.at("ref"));
      return b;
    }
    case MsgType::kTransferRequest: {
      TransferRequest b;
      b.refs = h.at("refs").get<std::vector<std::string>>();
      b.target_site = h.at("target_site").get<std::string>();
      if (h.contains("pushed")) b.pushed = ref_from_json(h.at("pushed"));
      return b;
    }
    case MsgType::kTransferAck: {
      TransferAck b;
      b.refs = h.at("refs").get<std::vector<std::string>>();
      b.p2p_payload_bytes = h.value("p2p_payload_bytes", std::uint64_t{0});
      b.p2p_frame_bytes = h.value("p2p_frame_bytes", std::uint64_t{0});
      return b;
    }
    case MsgType::kMaterializeRequest:
      return MaterializeRequest{h.at("ref_id").get<std::string>()};
    case MsgType::kMaterializeResponse:
      return MaterializeResponse{h.at("ref_id").get<std::string>()};
    case MsgType::kFlushRequest:
      return FlushRequest{};
    case MsgType::kFlushAck:
      return FlushAck{};
    case MsgType::kError:
      return ErrorReply{h.at("code").get<std::string>(), h.value("detail", std::string{})};
  }
  throw Error(ErrorCode::kBadHeader, "unhandled msg_type");
}

std::uint64_t literal_total(const InvokeRequest& req) {
  std::uint64_t total = 0;
  for (const auto& in : req.inputs) {
    if (!in.ref) total += in.literal_size;
  }
  return total;
}

}  // namespace

std::string_view to_string(MsgType type) { return kTypeNames[static_cast<std::size_t>(type)]; }

std::optional<MsgType> msg_type_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (kTypeNames[i] == name) return static_cast<MsgType>(i);
  }
  return std::nullopt;
}

bool may_carry_payload(MsgType type) {
  return type == MsgType::kInvokeRequest || type == MsgType::kInvokeResponse ||
         type == MsgType::kTransferRequest || type == MsgType::kMaterializeResponse;
}

std::string encode_header(const Message& msg) {
  json h = {{"msg_type", to_string(msg.type())}, {"run_id", msg.run_id}};
  std::visit(HeaderWriter{h}, msg.body);
  try {
    return h.dump();
  } catch (const json::type_error& e) {
    throw Error(ErrorCode::kBadHeader, e.what());
  }
}

Bytes encode(const Message& msg) {
  if (!msg.payload.empty() && !may_carry_payload(msg.type())) {
    throw Error(ErrorCode::kPayloadOnControlMessage, std::string(to_string(msg.type())));
  }
  if (const auto* req = std::get_if<InvokeRequest>(&msg.body)) {
    if (literal_total(*req) != msg.payload.size()) {
      throw Error(ErrorCode::kBadHeader, "literal sizes do not add up to the payload length");
    }
  }
  const std::string header = encode_header(msg);
  const std::uint64_t n = header.size() + 1 + msg.payload.size();
  if (n > 0xffffffffULL) throw Error(ErrorCode::kIoFailure, "frame exceeds 4 GiB");

  Bytes frame;
  frame.reserve(kFramePrefixBytes + n);
  for (int shift = 24; shift >= 0; shift -= 8) {
    frame.push_back(static_cast<char>((n >> shift) & 0xff));
  }
  frame += header;
  frame.push_back('\n');
  frame += msg.payload;
  return frame;
}

Message decode_body(std::string_view body) {
  const auto sep = body.find('\n');
  if (sep == std::string_view::npos) throw Error(ErrorCode::kBadHeader, "missing header separator");

  json h;
  try {
    h = json::parse(body.substr(0, sep));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kBadHeader, e.what());
  }
  if (!h.is_object() || !h.contains("msg_type") || !h["msg_type"].is_string()) {
    throw Error(ErrorCode::kBadHeader, "missing msg_type");
  }
  const auto type = msg_type_from_string(h["msg_type"].get<std::string>());
  if (!type) throw Error(ErrorCode::kBadHeader, "unknown msg_type " + h["msg_type"].dump());

  Message msg;
  try {
    msg.run_id = h.value("run_id", std::string{});
    msg.body = body_from_json(*type, h);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadHeader, e.what());
  }
  msg.payload.assign(body.substr(sep + 1));
  if (!msg.payload.empty() && !may_carry_payload(*type)) {
    throw Error(ErrorCode::kPayloadOnControlMessage, std::string(to_string(*type)));
  }
  if (const auto* req = std::get_if<InvokeRequest>(&msg.body)) {
    if (literal_total(*req) != msg.payload.size()) {
      throw Error(ErrorCode::kBadHeader, "literal sizes do not add up to the payload length");
    }
  }
  return msg;
}

Message decode(std::string_view frame) {
  if (frame.size() < kFramePrefixBytes) throw Error(ErrorCode::kTruncatedFrame, "short prefix");
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < kFramePrefixBytes; ++i) {
    n = (n << 8) | static_cast<unsigned char>(frame[i]);
  }
  const std::size_t available = frame.size() - kFramePrefixBytes;
  if (n > available) {
    throw Error(ErrorCode::kTruncatedFrame,
                "declared " + std::to_string(n) + " bytes, have " + std::to_string(available));
  }
  if (n < available) throw Error(ErrorCode::kBadHeader, "trailing bytes after frame");
  return decode_body(frame.substr(kFramePrefixBytes));
}

// ---------------------------------------------------------------------------
// Topology

Topology::Topology(std::vector<SiteAddress> sites, std::vector<std::vector<double>> latency_ms,
                   std::vector<std::vector<double>> bandwidth_bytes_per_s)
    : sites_(std::move(sites)),
      latency_ms_(std::move(latency_ms)),
      bandwidth_(std::move(bandwidth_bytes_per_s)) {
  const std::size_t n = sites_.size();
  if (n == 0 || sites_[0].id != kEngineSite) {
    throw Error(ErrorCode::kMalformedDocument, "topology row 0 must be the engine site");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (sites_[i].id == sites_[j].id) {
        throw Error(ErrorCode::kMalformedDocument, "duplicate site '" + sites_[i].id + "'");
      }
    }
  }
  auto check = [n](const std::vector<std::vector<double>>& m, const char* what) {
    if (m.size() != n) {
      throw Error(ErrorCode::kMalformedDocument, std::string(what) + " has wrong row count");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (m[i].size() != n) {
        throw Error(ErrorCode::kMalformedDocument, std::string(what) + " is not square");
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (!(m[i][j] >= 0.0) || !std::isfinite(m[i][j])) {
          throw Error(ErrorCode::kMalformedDocument,
                      std::string(what) + " entries must be finite and non-negative");
        }
      }
      if (m[i][i] != 0.0) {
        throw Error(ErrorCode::kMalformedDocument, std::string(what) + " diagonal must be 0");
      }
    }
  };
  check(latency_ms_, "latency_ms");
  check(bandwidth_, "bandwidth");
}

Topology Topology::uniform(const std::vector<std::string>& proxy_sites, double latency_ms,
                           double bandwidth_mbit) {
  std::vector<SiteAddress> sites{{std::string(kEngineSite), "127.0.0.1", 0}};
  for (const auto& s : proxy_sites) sites.push_back({s, "127.0.0.1", 0});
  const std::size_t n = sites.size();
  std::vector<std::vector<double>> lat(n, std::vector<double>(n, latency_ms));
  std::vector<std::vector<double>> bw(n, std::vector<double>(n, bandwidth_mbit * 1e6 / 8.0));
  for (std::size_t i = 0; i < n; ++i) lat[i][i] = bw[i][i] = 0.0;
  return Topology(std::move(sites), std::move(lat), std::move(bw));
}

std::vector<std::string> Topology::proxy_sites() const {
  std::vector<std::string> out;
  for (std::size_t i = 1; i < sites_.size(); ++i) out.push_back(sites_[i].id);
  return out;
}

bool Topology::contains(std::string_view site) const {
  for (const auto& s : sites_) {
    if (s.id == site) return true;
  }
  return false;
}

std::size_t Topology::index_of(std::string_view site) const {
  for (std::size_t i = 0; i < sites_.size(); ++i) {
    if (sites_[i].id == site) return i;
  }
  throw Error(ErrorCode::kUnknownSite, std::string(site));
}

const SiteAddress& Topology::address_of(std::string_view site) const {
  return sites_[index_of(site)];
}

void Topology::set_address(std::string_view site, std::string host, std::uint16_t port) {
  auto& s = sites_[index_of(site)];
  s.host = std::move(host);
  s.port = port;
}

double Topology::latency_ms(std::string_view from, std::string_view to) const {
  return latency_ms_[index_of(from)][index_of(to)];
}

double Topology::bandwidth_bytes_per_s(std::string_view from, std::string_view to) const {
  return bandwidth_[index_of(from)][index_of(to)];
}

namespace {

SiteAddress parse_addr(const std::string& id, const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCode::kMalformedDocument, "address '" + addr + "' lacks a port");
  }
  const int port = std::stoi(addr.substr(colon + 1));
  if (port < 0 || port > 65535) {
    throw Error(ErrorCode::kMalformedDocument, "port out of range in '" + addr + "'");
  }
  return {id, addr.substr(0, colon), static_cast<std::uint16_t>(port)};
}

}  // namespace

Topology parse_topology(std::string_view document) {
  try {
    const json doc = json::parse(document);
    std::vector<SiteAddress> sites;
    for (const auto& s : doc.at("sites")) {
      sites.push_back(parse_addr(s.at("id").get<std::string>(),
                                 s.at("addr").get<std::string>()));
    }
    auto lat = doc.at("latency_ms").get<std::vector<std::vector<double>>>();
    auto bw = doc.at("bandwidth_mbit").get<std::vector<std::vector<double>>>();
    for (auto& row : bw) {
      for (auto& v : row) v = v * 1e6 / 8.0;
    }
    return Topology(std::move(sites), std::move(lat), std::move(bw));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("topology: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("topology: ") + e.what());
  }
}

std::string serialize_topology(const Topology& topology) {
  json sites = json::array();
  const auto& all = topology.sites();
  const std::size_t n = all.size();
  std::vector<std::vector<double>> lat(n, std::vector<double>(n));
  std::vector<std::vector<double>> bw(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    sites.push_back({{"id", all[i].id}, {"addr", all[i].addr()}});
    for (std::size_t j = 0; j < n; ++j) {
      lat[i][j] = topology.latency_ms(all[i].id, all[j].id);
      bw[i][j] = topology.bandwidth_bytes_per_s(all[i].id, all[j].id) * 8.0 / 1e6;
    }
  }
  return json{{"sites", sites}, {"latency_ms", lat}, {"bandwidth_mbit", bw}}.dump(2);
}

Topology load_topology(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open topology '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_topology(buf.str());
}

Seconds link_delay(const Topology& topology, std::string_view from_site, std::string_view to_site,
                   std::uint64_t n_bytes) {
  const std::size_t i = topology.index_of(from_site);
  const std::size_t j = topology.index_of(to_site);
  if (i == j) return Seconds{0.0};
  const double bw = topology.bandwidth_bytes_per_s(from_site, to_site);
  const double serialization = bw == 0.0 ? 0.0 : static_cast<double>(n_bytes) / bw;
  return Seconds{topology.latency_ms(from_site, to_site) / 1000.0 + serialization};
}

}  // namespace circulate
