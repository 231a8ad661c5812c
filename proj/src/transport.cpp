#include "fbnsl/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

namespace fbnsl {

// ---------------------------------------------------------------------------
// In-process

namespace {

class InProcessServer final : public ServerEndpoint {
 public:
  explicit InProcessServer(std::shared_ptr<void> keep, BlockingQueue<wire::Bytes>* inbound,
                           std::vector<BlockingQueue<wire::Bytes>>* outbound)
      : keep_(std::move(keep)), inbound_(inbound), outbound_(outbound) {}

  void send(std::uint32_t client_id, const wire::Message& message) override {
    if (client_id >= outbound_->size()) {
      throw ProtocolError("no channel for client " + std::to_string(client_id));
    }
    (*outbound_)[client_id].push(wire::encode(message));
  }

  wire::Message receive(Millis timeout) override {
    auto bytes = inbound_->pop_for(timeout);
    if (!bytes) {
      if (inbound_->closed()) throw ProtocolError("channel closed");
      throw TimeoutError("no message within " + std::to_string(timeout.count()) + " ms");
    }
    return wire::decode(*bytes);
  }

  void close() override {
    for (auto& q : *outbound_) q.close();
  }

 private:
  std::shared_ptr<void> keep_;
  BlockingQueue<wire::Bytes>* inbound_;
  std::vector<BlockingQueue<wire::Bytes>>* outbound_;
};

class InProcessClient final : public ClientEndpoint {
 public:
  InProcessClient(std::shared_ptr<void> keep, BlockingQueue<wire::Bytes>* outbound,
                  BlockingQueue<wire::Bytes>* inbound)
      : keep_(std::move(keep)), outbound_(outbound), inbound_(inbound) {}

  void send(const wire::Message& message) override { outbound_->push(wire::encode(message)); }

  wire::Message receive(Millis timeout) override {
    auto bytes = inbound_->pop_for(timeout);
    if (!bytes) {
      if (inbound_->closed()) throw ProtocolError("channel closed by server");
      throw TimeoutError("no message from server within " + std::to_string(timeout.count()) + " ms");
    }
    return wire::decode(*bytes);
  }

  void close() override {}

 private:
  std::shared_ptr<void> keep_;
  BlockingQueue<wire::Bytes>* outbound_;
  BlockingQueue<wire::Bytes>* inbound_;
};

}  // namespace

InProcessHub::InProcessHub(int clients) : channels_(std::make_shared<Channels>(clients)) {
  if (clients < 1) throw ArgumentError("InProcessHub: need at least one client");
}

std::unique_ptr<ServerEndpoint> InProcessHub::server_endpoint() {
  return std::make_unique<InProcessServer>(channels_, &channels_->to_server, &channels_->to_client);
}

std::unique_ptr<ClientEndpoint> InProcessHub::client_endpoint(int client_id) {
  if (client_id < 0 || client_id >= static_cast<int>(channels_->to_client.size())) {
    throw ArgumentError("InProcessHub: client id " + std::to_string(client_id) + " out of range");
  }
  return std::make_unique<InProcessClient>(channels_, &channels_->to_server,
                                           &channels_->to_client[client_id]);
}

// ---------------------------------------------------------------------------
// TCP helpers

namespace {

constexpr std::uint64_t kMaxPayload = 1ULL << 31;

std::string errno_text() { return std::strerror(errno); }

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

void write_all(int fd, const wire::Bytes& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError("send failed: " + errno_text());
    }
    sent += static_cast<std::size_t>(n);
  }
}

using Deadline = std::chrono::steady_clock::time_point;

// Reads exactly n bytes. Returns false on orderly EOF before any byte.
bool read_exact(int fd, std::uint8_t* out, std::size_t n, const Deadline* deadline) {
  std::size_t got = 0;
  while (got < n) {
    if (deadline) {
      const auto left = std::chrono::duration_cast<Millis>(*deadline - std::chrono::steady_clock::now());
      pollfd p{fd, POLLIN, 0};
      const int ready = ::poll(&p, 1, static_cast<int>(std::max<long>(0, left.count())));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError("poll failed: " + errno_text());
      }
      if (ready == 0) throw TimeoutError("timed out waiting for data");
    }
    const ssize_t r = ::recv(fd, out + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw FramingError("connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError("recv failed: " + errno_text());
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

// One frame, or nullopt on EOF at a frame boundary.
std::optional<wire::Bytes> read_frame(int fd, const Deadline* deadline) {
  wire::Bytes frame(wire::kHeaderSize);
  if (!read_exact(fd, frame.data(), frame.size(), deadline)) return std::nullopt;
  const wire::Header h = wire::decode_header(frame);
  if (h.payload_len > kMaxPayload) {
    throw FramingError("payload of " + std::to_string(h.payload_len) + " bytes exceeds the limit");
  }
  frame.resize(wire::kHeaderSize + h.payload_len);
  if (h.payload_len > 0 &&
      !read_exact(fd, frame.data() + wire::kHeaderSize, h.payload_len, deadline)) {
    throw FramingError("connection closed mid-frame");
  }
  return frame;
}

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* result = nullptr;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &result);
  if (rc != 0) throw ArgumentError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// TCP server

TcpServerEndpoint::TcpServerEndpoint(const std::string& host, std::uint16_t port) {
  addrinfo* info = resolve(host, port, true);
  for (addrinfo* a = info; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 128) == 0) {
      listen_fd_ = fd;
      break;
    }
    ::close(fd);
  }
  ::freeaddrinfo(info);
  if (listen_fd_ < 0) {
    throw IoError("cannot listen on " + host + ":" + std::to_string(port) + ": " + errno_text());
  }
  sockaddr_storage addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = addr.ss_family == AF_INET6
              ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
              : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
}

TcpServerEndpoint::~TcpServerEndpoint() {
  close();
  for (auto& t : readers_) {
    if (t.joinable()) t.join();
  }
  for (int fd : connections_) ::close(fd);
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpServerEndpoint::accept_clients(int clients, Millis timeout) {
  const Deadline deadline = std::chrono::steady_clock::now() + timeout;
  for (int accepted = 0; accepted < clients;) {
    const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
    pollfd p{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(std::max<long>(0, left.count())));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) {
      throw TimeoutError("only " + std::to_string(accepted) + " of " + std::to_string(clients) +
                         " clients connected within " + std::to_string(timeout.count()) + " ms");
    }
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    set_nodelay(fd);
    {
      std::lock_guard lock(mutex_);
      connections_.push_back(fd);
    }
    readers_.emplace_back(&TcpServerEndpoint::reader_loop, this, fd);
    ++accepted;
  }
}

void TcpServerEndpoint::reader_loop(int fd) {
  try {
    while (true) {
      auto frame = read_frame(fd, nullptr);
      if (!frame) return;
      const wire::Header h = wire::decode_header(*frame);
      {
        std::lock_guard lock(mutex_);
        bool known = false;
        for (const auto& [id, route_fd] : routes_) {
          if (id == h.client_id) {
            if (route_fd != fd) return;  // impersonation: drop the connection
            known = true;
          }
        }
        if (!known) routes_.emplace_back(h.client_id, fd);
      }
      inbound_.push(std::move(*frame));
    }
  } catch (const Error&) {
    // A malformed stream ends this connection; the round barrier reports the gap.
  }
}

void TcpServerEndpoint::send(std::uint32_t client_id, const wire::Message& message) {
  int fd = -1;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, route_fd] : routes_) {
      if (id == client_id) fd = route_fd;
    }
  }
  if (fd < 0) throw ProtocolError("no connection registered for client " + std::to_string(client_id));
  try {
    write_all(fd, wire::encode(message));
  } catch (const ProtocolError& e) {
    throw ProtocolError("client " + std::to_string(client_id) + ": " + e.what());
  }
}

wire::Message TcpServerEndpoint::receive(Millis timeout) {
  auto bytes = inbound_.pop_for(timeout);
  if (!bytes) throw TimeoutError("no message within " + std::to_string(timeout.count()) + " ms");
  return wire::decode(*bytes);
}

void TcpServerEndpoint::close() {
  std::lock_guard lock(mutex_);
  if (closed_) return;
  closed_ = true;
  for (int fd : connections_) ::shutdown(fd, SHUT_RDWR);
  inbound_.close();
}

// ---------------------------------------------------------------------------
// TCP client

TcpClientEndpoint::TcpClientEndpoint(const std::string& host, std::uint16_t port, Millis timeout) {
  const Deadline deadline = std::chrono::steady_clock::now() + timeout;
  while (fd_ < 0) {
    addrinfo* info = resolve(host, port, false);
    for (addrinfo* a = info; a && fd_ < 0; a = a->ai_next) {
      const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
        fd_ = fd;
      } else {
        ::close(fd);
      }
    }
    ::freeaddrinfo(info);
    if (fd_ >= 0) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      throw TimeoutError("cannot connect to " + host + ":" + std::to_string(port));
    }
    std::this_thread::sleep_for(Millis(20));
  }
  set_nodelay(fd_);
}

TcpClientEndpoint::~TcpClientEndpoint() { close(); }

void TcpClientEndpoint::send(const wire::Message& message) { write_all(fd_, wire::encode(message)); }

wire::Message TcpClientEndpoint::receive(Millis timeout) {
  const Deadline deadline = std::chrono::steady_clock::now() + timeout;
  auto frame = read_frame(fd_, &deadline);
  if (!frame) throw ProtocolError("connection closed by server");
  return wire::decode(*frame);
}

void TcpClientEndpoint::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

std::pair<std::string, std::uint16_t> parse_host_port(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ArgumentError("expected host:port, got '" + text + "'");
  const std::string host = text.substr(0, colon);
  const std::string port_text = text.substr(colon + 1);
  char* end = nullptr;
  const long port = std::strtol(port_text.c_str(), &end, 10);
  if (port_text.empty() || *end != '\0' || port < 0 || port > 65535) {
    throw ArgumentError("invalid port in '" + text + "'");
  }
  return {host, static_cast<std::uint16_t>(port)};
}

std::pair<std::string, std::uint16_t> resolve_bind_address(const std::string& fallback) {
  if (const char* env = std::getenv("FBNSL_BIND"); env && *env) return parse_host_port(env);
  return parse_host_port(fallback);
}

}  // namespace fbnsl
