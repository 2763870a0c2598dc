#include "circulate/proxy.hpp"

#include <mutex>
#include <thread>

#include "circulate/error.hpp"

namespace circulate {

void ProxyStore::insert(const std::string& ref_id, std::shared_ptr<const Bytes> payload,
                        std::string digest, const std::string& run_id) {
  std::unique_lock lock(mu_);
  auto it = entries_.find(ref_id);
  if (it != entries_.end()) {
    if (it->second.digest == digest && *it->second.payload == *payload) return;
    throw Error(ErrorCode::kWriteConflict, "ref " + ref_id + " already holds different bytes");
  }
  entries_.emplace(ref_id, StoredEntry{std::move(payload), std::move(digest), run_id,
                                       std::chrono::system_clock::now()});
}

std::optional<StoredEntry> ProxyStore::get(const std::string& ref_id) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(ref_id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool ProxyStore::contains(const std::string& ref_id) const {
  std::shared_lock lock(mu_);
  return entries_.contains(ref_id);
}

std::size_t ProxyStore::flush(const std::string& run_id) {
  std::unique_lock lock(mu_);
  return std::erase_if(entries_, [&](const auto& kv) { return kv.second.run_id == run_id; });
}

std::size_t ProxyStore::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

std::size_t ProxyStore::count_for_run(const std::string& run_id) const {
  std::shared_lock lock(mu_);
  std::size_t n = 0;
  for (const auto& [id, e] : entries_) n += e.run_id == run_id;
  return n;
}

// ---------------------------------------------------------------------------

Proxy::Proxy(std::string site, const Topology& topology, ServiceRegistry services,
             RetryPolicy retry)
    : site_(std::move(site)), topology_(topology), services_(std::move(services)), retry_(retry) {
  topology_.index_of(site_);
}

Message Proxy::handle(const Message& request) {
  try {
    switch (request.type()) {
      case MsgType::kInvokeRequest:
        return handle_invoke(request.run_id, std::get<InvokeRequest>(request.body),
                             request.payload);
      case MsgType::kTransferRequest: {
        const auto& req = std::get<TransferRequest>(request.body);
        if (req.pushed) return {request.run_id, accept_push(request.run_id, req, request.payload), {}};
        return {request.run_id, handle_transfer(request.run_id, req), {}};
      }
      case MsgType::kMaterializeRequest:
        return handle_materialize(request.run_id, std::get<MaterializeRequest>(request.body));
      case MsgType::kFlushRequest:
        return {request.run_id, handle_flush(request.run_id), {}};
      default:
        throw Error(ErrorCode::kBadHeader,
                    "proxy does not accept " + std::string(to_string(request.type())));
    }
  } catch (const Error& e) {
    return error_message(request.run_id, e.code(), e.detail());
  }
}

Message Proxy::handle_invoke(const std::string& run_id, const InvokeRequest& req,
                             std::string_view literals) {
  auto service = services_.find(req.service_op);
  if (service == services_.end()) {
    throw Error(ErrorCode::kUnknownServiceOp, req.service_op + " at " + site_);
  }

  std::vector<std::shared_ptr<const Bytes>> held;  // keeps ref payloads alive
  std::vector<std::string_view> inputs;
  std::size_t offset = 0;
  for (const auto& in : req.inputs) {
    if (in.ref) {
      auto entry = store_.get(in.ref->ref_id);
      if (!entry) {
        throw Error(ErrorCode::kReferenceNotStaged, in.ref->ref_id + " is not at " + site_);
      }
      if (entry->digest != in.ref->content_digest) {
        throw Error(ErrorCode::kIntegrityViolation, "digest mismatch for " + in.ref->ref_id);
      }
      inputs.emplace_back(*entry->payload);
      held.push_back(std::move(entry->payload));
    } else {
      if (offset + in.literal_size > literals.size()) {
        throw Error(ErrorCode::kBadHeader, "literal inputs overrun the payload");
      }
      inputs.push_back(literals.substr(offset, in.literal_size));
      offset += in.literal_size;
    }
  }

  Bytes output;
  try {
    output = service->second(inputs);
  } catch (const Error& e) {
    throw Error(ErrorCode::kServiceFailure, req.service_op + ": " + e.what(), e.code());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kServiceFailure, req.service_op + ": " + e.what());
  }

  DataReference ref{new_uuid(), site_, output.size(), sha256_hex(output)};
  auto stored = std::make_shared<const Bytes>(std::move(output));
  store_.insert(ref.ref_id, stored, ref.content_digest, run_id);

  Message reply{run_id, InvokeResponse{req.task_id, ref}, {}};
  if (req.return_payload) reply.payload = *stored;
  return reply;
}

TransferAck Proxy::handle_transfer(const std::string& run_id, const TransferRequest& req) {
  if (!topology_.contains(req.target_site) || req.target_site == Topology::kEngineSite) {
    throw Error(ErrorCode::kUnknownSite, "transfer target '" + req.target_site + "'");
  }
  std::vector<std::pair<std::string, StoredEntry>> entries;
  for (const auto& id : req.refs) {
    auto entry = store_.get(id);
    if (!entry) throw Error(ErrorCode::kReferenceNotFound, id + " is not at " + site_);
    entries.emplace_back(id, std::move(*entry));
  }

  TransferAck ack{req.refs, 0, 0};
  if (req.target_site == site_) return ack;

  std::optional<LinkClient> link;
  for (const auto& [id, entry] : entries) {
    Message push{run_id,
                 TransferRequest{{id}, req.target_site,
                                 DataReference{id, site_, entry.payload->size(), entry.digest}},
                 *entry.payload};
    const Bytes frame = encode(push);

    auto backoff = retry_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      try {
        if (!link) link.emplace(topology_, site_, req.target_site);
        Exchange ex = link->exchange_frame(frame);
        raise_if_error(ex.reply);
        ack.p2p_payload_bytes += entry.payload->size();
        ack.p2p_frame_bytes += ex.request_frame_bytes + ex.reply_frame_bytes;
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kUnreachable && e.code() != ErrorCode::kIoFailure) throw;
        link.reset();
        if (attempt >= retry_.attempts) {
          throw Error(ErrorCode::kTargetUnreachable,
                      req.target_site + " after " + std::to_string(attempt) + " attempts: " +
                          e.detail());
        }
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
    }
  }
  return ack;
}

TransferAck Proxy::accept_push(const std::string& run_id, const TransferRequest& req,
                               Bytes payload) {
  const DataReference& ref = *req.pushed;
  if (req.target_site != site_) {
    throw Error(ErrorCode::kUnknownSite, "push for " + req.target_site + " arrived at " + site_);
  }
  if (payload.size() != ref.size_bytes || sha256_hex(payload) != ref.content_digest) {
    throw Error(ErrorCode::kIntegrityViolation, "pushed bytes do not match " + ref.ref_id);
  }
  store_.insert(ref.ref_id, std::make_shared<const Bytes>(std::move(payload)), ref.content_digest,
                run_id);
  return TransferAck{{ref.ref_id}, 0, 0};
}

Message Proxy::handle_materialize(const std::string& run_id, const MaterializeRequest& req) const {
  auto entry = store_.get(req.ref_id);
  if (!entry) throw Error(ErrorCode::kReferenceNotFound, req.ref_id + " is not at " + site_);
  return Message{run_id, MaterializeResponse{req.ref_id}, *entry->payload};
}

FlushAck Proxy::handle_flush(const std::string& run_id) {
  store_.flush(run_id);
  return {};
}

// ---------------------------------------------------------------------------

ProxyServer::ProxyServer(std::string site, const Topology& topology, ServiceRegistry services,
                         std::string host, std::uint16_t port, RetryPolicy retry)
    : proxy_(std::move(site), topology, std::move(services), retry),
      server_(std::move(host), port, [this](const Message& m) { return proxy_.handle(m); }) {}

LocalCluster::LocalCluster(Topology topology, const ServiceRegistry& services, RetryPolicy retry)
    : topology_(std::make_unique<Topology>(std::move(topology))) {
  for (const auto& site : topology_->proxy_sites()) {
    auto server = std::make_unique<ProxyServer>(site, *topology_, services, "127.0.0.1", 0, retry);
    server->start();
    topology_->set_address(site, "127.0.0.1", server->port());
    servers_.push_back(std::move(server));
  }
}

LocalCluster::~LocalCluster() {
  for (auto& s : servers_) s->stop();
}

Proxy& LocalCluster::proxy(std::string_view site) {
  for (auto& s : servers_) {
    if (s->proxy().site() == site) return s->proxy();
  }
  throw Error(ErrorCode::kUnknownSite, std::string(site));
}

std::size_t LocalCluster::stored_for_run(const std::string& run_id) const {
  std::size_t n = 0;
  for (const auto& s : servers_) n += s->proxy().store().count_for_run(run_id);
  return n;
}

}  // namespace circulate
