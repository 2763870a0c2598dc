#pragma once

// Blocking TCP plumbing for the framed protocol. Link costs are injected on
// the initiating side: the client sleeps link_delay(from, to, frame) before a
// request leaves and link_delay(to, from, frame) before a reply is handed
// back, so the serving side never needs to know who called it.

#include <atomic>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "circulate/error.hpp"
#include "circulate/transport.hpp"

namespace circulate {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket();

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void shutdown();

 private:
  int fd_ = -1;
};

// Throws Unreachable when nothing is listening.
Socket connect_to(const std::string& host, std::uint16_t port);

void send_frame(Socket& sock, std::string_view frame);
// Reads one frame and returns the bytes after the length prefix; nullopt on a
// clean EOF between frames. Throws TruncatedFrame on EOF inside a frame.
std::optional<Bytes> read_frame_body(Socket& sock);

struct Exchange {
  Message reply;
  std::uint64_t request_frame_bytes = 0;
  std::uint64_t reply_frame_bytes = 0;
};

// One FIFO connection from `from_site` to `to_site`, opened lazily.
class LinkClient {
 public:
  LinkClient(const Topology& topology, std::string from_site, std::string to_site);

  Exchange exchange(const Message& request);
  // Same, but `frame` is already encoded (saves re-encoding large payloads).
  Exchange exchange_frame(std::string_view frame);

 private:
  const Topology& topology_;
  std::string from_;
  std::string to_;
  Socket sock_;
};

// Accepts connections and answers every request frame with handler(request).
// Frames that fail to decode are answered with an Error message.
class FrameServer {
 public:
  using Handler = std::function<Message(const Message&)>;

  FrameServer(std::string host, std::uint16_t port, Handler handler);
  FrameServer(const FrameServer&) = delete;
  FrameServer& operator=(const FrameServer&) = delete;
  ~FrameServer();

  void start();
  void stop();
  std::uint16_t port() const { return port_; }
  const std::string& host() const { return host_; }

 private:
  struct Connection {
    Socket sock;
    std::thread worker;
    std::atomic<bool> done{false};
  };

  void accept_loop();
  void serve(Connection* conn);
  void reap_finished();

  std::string host_;
  std::uint16_t port_;
  Handler handler_;
  Socket listener_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  std::mutex conns_mu_;
  std::list<std::unique_ptr<Connection>> conns_;
};

Message error_message(const std::string& run_id, ErrorCode code, const std::string& detail);
// Throws the Error carried by an Error reply; no-op for other types.
void raise_if_error(const Message& reply);

}  // namespace circulate
