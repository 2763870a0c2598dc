#include "circulate/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "circulate/error.hpp"

namespace circulate {

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

Socket::~Socket() {
  if (fd_ >= 0) ::close(fd_);
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

namespace {

std::string errno_text() { return std::strerror(errno); }

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

// Returns bytes read; short only on EOF.
std::size_t read_up_to(Socket& sock, char* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(sock.fd(), buf + got, n - got, 0);
    if (r == 0) break;
    if (r < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIoFailure, "recv: " + errno_text());
    }
    got += static_cast<std::size_t>(r);
  }
  return got;
}

}  // namespace

Socket connect_to(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_text = std::to_string(port);
  if (::getaddrinfo(host.c_str(), port_text.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::kUnreachable, "cannot resolve " + host);
  }
  Socket sock(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  const int rc = sock.valid() ? ::connect(sock.fd(), res->ai_addr, res->ai_addrlen) : -1;
  ::freeaddrinfo(res);
  if (rc != 0) {
    throw Error(ErrorCode::kUnreachable, host + ":" + port_text + ": " + errno_text());
  }
  set_nodelay(sock.fd());
  return sock;
}

void send_frame(Socket& sock, std::string_view frame) {
  std::size_t sent = 0;
  while (sent < frame.size()) {
    const ssize_t w = ::send(sock.fd(), frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIoFailure, "send: " + errno_text());
    }
    sent += static_cast<std::size_t>(w);
  }
}

std::optional<Bytes> read_frame_body(Socket& sock) {
  unsigned char prefix[kFramePrefixBytes];
  const std::size_t got = read_up_to(sock, reinterpret_cast<char*>(prefix), sizeof(prefix));
  if (got == 0) return std::nullopt;
  if (got < sizeof(prefix)) throw Error(ErrorCode::kTruncatedFrame, "EOF inside length prefix");
  std::uint32_t n = 0;
  for (unsigned char b : prefix) n = (n << 8) | b;
  Bytes body(n, '\0');
  if (read_up_to(sock, body.data(), n) < n) {
    throw Error(ErrorCode::kTruncatedFrame, "EOF inside frame body");
  }
  return body;
}

Message error_message(const std::string& run_id, ErrorCode code, const std::string& detail) {
  return Message{run_id, ErrorReply{std::string(to_string(code)), detail}, {}};
}

void raise_if_error(const Message& reply) {
  if (const auto* err = std::get_if<ErrorReply>(&reply.body)) {
    ErrorCode code = error_code_from_string(err->code);
    if (code == ErrorCode::kNone) code = ErrorCode::kIoFailure;
    throw Error(code, err->detail);
  }
}

// ---------------------------------------------------------------------------

LinkClient::LinkClient(const Topology& topology, std::string from_site, std::string to_site)
    : topology_(topology), from_(std::move(from_site)), to_(std::move(to_site)) {
  topology_.index_of(from_);
  topology_.index_of(to_);
}

Exchange LinkClient::exchange(const Message& request) { return exchange_frame(encode(request)); }

Exchange LinkClient::exchange_frame(std::string_view frame) {
  if (!sock_.valid()) {
    const auto& addr = topology_.address_of(to_);
    sock_ = connect_to(addr.host, addr.port);
  }
  std::this_thread::sleep_for(link_delay(topology_, from_, to_, frame.size()));
  send_frame(sock_, frame);
  auto body = read_frame_body(sock_);
  if (!body) {
    sock_ = Socket();
    throw Error(ErrorCode::kIoFailure, "connection to " + to_ + " closed before reply");
  }
  Exchange ex;
  ex.request_frame_bytes = frame.size();
  ex.reply_frame_bytes = kFramePrefixBytes + body->size();
  ex.reply = decode_body(*body);
  std::this_thread::sleep_for(link_delay(topology_, to_, from_, ex.reply_frame_bytes));
  return ex;
}

// ---------------------------------------------------------------------------

FrameServer::FrameServer(std::string host, std::uint16_t port, Handler handler)
    : host_(std::move(host)), port_(port), handler_(std::move(handler)) {}

FrameServer::~FrameServer() { stop(); }

void FrameServer::start() {
  listener_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
  if (!listener_.valid()) throw Error(ErrorCode::kIoFailure, "socket: " + errno_text());
  int one = 1;
  ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port_);
  if (::inet_pton(AF_INET, host_ == "localhost" ? "127.0.0.1" : host_.c_str(), &addr.sin_addr) !=
      1) {
    throw Error(ErrorCode::kIoFailure, "bad listen address " + host_);
  }
  if (::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw Error(ErrorCode::kIoFailure,
                "bind " + host_ + ":" + std::to_string(port_) + ": " + errno_text());
  }
  if (::listen(listener_.fd(), 64) != 0) throw Error(ErrorCode::kIoFailure, "listen: " + errno_text());

  socklen_t len = sizeof(addr);
  ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

void FrameServer::stop() {
  if (stopping_.exchange(true)) return;
  listener_.shutdown();
  if (acceptor_.joinable()) acceptor_.join();
  std::list<std::unique_ptr<Connection>> conns;
  {
    std::lock_guard lock(conns_mu_);
    for (auto& c : conns_) c->sock.shutdown();
    conns.swap(conns_);
  }
  for (auto& c : conns) {
    if (c->worker.joinable()) c->worker.join();
  }
}

void FrameServer::reap_finished() {
  for (auto it = conns_.begin(); it != conns_.end();) {
    if ((*it)->done) {
      (*it)->worker.join();
      it = conns_.erase(it);
    } else {
      ++it;
    }
  }
}

void FrameServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listener_.fd(), nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    set_nodelay(fd);
    std::lock_guard lock(conns_mu_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    reap_finished();
    auto conn = std::make_unique<Connection>();
    conn->sock = Socket(fd);
    Connection* raw = conn.get();
    conns_.push_back(std::move(conn));
    raw->worker = std::thread([this, raw] { serve(raw); });
  }
}

void FrameServer::serve(Connection* conn) {
  try {
    while (!stopping_) {
      auto body = read_frame_body(conn->sock);
      if (!body) break;
      Message reply;
      try {
        reply = handler_(decode_body(*body));
      } catch (const Error& e) {
        reply = error_message("", e.code(), e.detail());
      } catch (const std::exception& e) {
        reply = error_message("", ErrorCode::kIoFailure, e.what());
      }
      send_frame(conn->sock, encode(reply));
    }
  } catch (const Error&) {
    // Peer went away mid-frame; nothing to answer.
  }
  conn->done = true;
}

}  // namespace circulate
