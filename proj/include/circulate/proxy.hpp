#pragma once

// The daemon colocated with a site's services. It invokes the local service,
// keeps each output under a fresh reference, pushes payloads to peer proxies
// when the engine says so, and hands bytes back on materialization.

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include "circulate/net.hpp"
#include "circulate/service.hpp"
#include "circulate/transport.hpp"

namespace circulate {

struct StoredEntry {
  std::shared_ptr<const Bytes> payload;
  std::string digest;
  std::string run_id;
  std::chrono::system_clock::time_point created_at;
};

// Write-once ref_id -> payload map. Re-inserting identical bytes is a no-op;
// different bytes under an existing id throw WriteConflict.
class ProxyStore {
 public:
  void insert(const std::string& ref_id, std::shared_ptr<const Bytes> payload,
              std::string digest, const std::string& run_id);
  std::optional<StoredEntry> get(const std::string& ref_id) const;
  bool contains(const std::string& ref_id) const;
  // Removes every entry of `run_id`; returns how many went.
  std::size_t flush(const std::string& run_id);
  std::size_t size() const;
  std::size_t count_for_run(const std::string& run_id) const;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, StoredEntry> entries_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{100};
};

class Proxy {
 public:
  Proxy(std::string site, const Topology& topology, ServiceRegistry services,
        RetryPolicy retry = {});

  // Dispatches any request; failures come back as Error messages.
  Message handle(const Message& request);

  // `literals` holds the request's literal inputs back to back.
  Message handle_invoke(const std::string& run_id, const InvokeRequest& req,
                        std::string_view literals);
  TransferAck handle_transfer(const std::string& run_id, const TransferRequest& req);
  // Receiving side of a proxy-to-proxy push.
  TransferAck accept_push(const std::string& run_id, const TransferRequest& req, Bytes payload);
  Message handle_materialize(const std::string& run_id, const MaterializeRequest& req) const;
  FlushAck handle_flush(const std::string& run_id);

  const std::string& site() const { return site_; }
  const ProxyStore& store() const { return store_; }

 private:
  std::string site_;
  const Topology& topology_;
  ServiceRegistry services_;
  RetryPolicy retry_;
  ProxyStore store_;
};

// A Proxy listening on a TCP port.
class ProxyServer {
 public:
  // Port 0 picks an ephemeral port; read it back with port().
  ProxyServer(std::string site, const Topology& topology, ServiceRegistry services,
              std::string host = "127.0.0.1", std::uint16_t port = 0, RetryPolicy retry = {});

  void start() { server_.start(); }
  void stop() { server_.stop(); }
  std::uint16_t port() const { return server_.port(); }
  Proxy& proxy() { return proxy_; }
  const Proxy& proxy() const { return proxy_; }

 private:
  Proxy proxy_;
  FrameServer server_;
};

// One ProxyServer per proxy site of `topology`, on ephemeral local ports;
// the topology addresses are rewritten to match.
class LocalCluster {
 public:
  LocalCluster(Topology topology, const ServiceRegistry& services, RetryPolicy retry = {});
  ~LocalCluster();

  const Topology& topology() const { return *topology_; }
  Proxy& proxy(std::string_view site);
  std::size_t stored_for_run(const std::string& run_id) const;

 private:
  std::unique_ptr<Topology> topology_;
  std::vector<std::unique_ptr<ProxyServer>> servers_;
};

}  // namespace circulate
