#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fbnsl/wire.hpp"

namespace fbnsl {

using Millis = std::chrono::milliseconds;

class ServerEndpoint {
 public:
  virtual ~ServerEndpoint() = default;
  virtual void send(std::uint32_t client_id, const wire::Message& message) = 0;
  /// Next message from any client; TimeoutError when none arrives in time.
  virtual wire::Message receive(Millis timeout) = 0;
  /// Unblocks peers waiting on this endpoint.
  virtual void close() = 0;
};

class ClientEndpoint {
 public:
  virtual ~ClientEndpoint() = default;
  virtual void send(const wire::Message& message) = 0;
  virtual wire::Message receive(Millis timeout) = 0;
  virtual void close() = 0;
};

template <typename T>
class BlockingQueue {
 public:
  void push(T value) {
    {
      std::lock_guard lock(mutex_);
      items_.push_back(std::move(value));
    }
    cv_.notify_one();
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  /// nullopt on timeout or once closed and drained.
  std::optional<T> pop_for(Millis timeout) {
    std::unique_lock lock(mutex_);
    if (!cv_.wait_for(lock, timeout, [&] { return !items_.empty() || closed_; })) {
      return std::nullopt;
    }
    if (items_.empty()) return std::nullopt;
    T out = std::move(items_.front());
    items_.pop_front();
    return out;
  }

  bool closed() const {
    std::lock_guard lock(mutex_);
    return closed_;
  }

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<T> items_;
  bool closed_ = false;
};

/// In-process channels. Messages still travel as encoded bytes.
class InProcessHub {
 public:
  explicit InProcessHub(int clients);
  std::unique_ptr<ServerEndpoint> server_endpoint();
  std::unique_ptr<ClientEndpoint> client_endpoint(int client_id);

 private:
  struct Channels {
    BlockingQueue<wire::Bytes> to_server;
    std::vector<BlockingQueue<wire::Bytes>> to_client;
    explicit Channels(int k) : to_client(k) {}
  };
  std::shared_ptr<Channels> channels_;
};

/// Length-prefixed TCP: every frame is exactly one encoded message; the
/// header's payload_len delimits it.
class TcpServerEndpoint final : public ServerEndpoint {
 public:
  /// Binds and listens; port 0 picks an ephemeral port.
  TcpServerEndpoint(const std::string& host, std::uint16_t port);
  ~TcpServerEndpoint() override;

  std::uint16_t port() const { return port_; }
  /// Blocks until `clients` connections are accepted.
  void accept_clients(int clients, Millis timeout);

  void send(std::uint32_t client_id, const wire::Message& message) override;
  wire::Message receive(Millis timeout) override;
  void close() override;

 private:
  void reader_loop(int fd);

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::mutex mutex_;
  std::vector<int> connections_;
  std::vector<std::pair<std::uint32_t, int>> routes_;  // client id → fd
  std::vector<std::thread> readers_;
  BlockingQueue<wire::Bytes> inbound_;
  bool closed_ = false;
};

class TcpClientEndpoint final : public ClientEndpoint {
 public:
  /// Connects, retrying until the timeout while the server comes up.
  TcpClientEndpoint(const std::string& host, std::uint16_t port, Millis timeout);
  ~TcpClientEndpoint() override;

  void send(const wire::Message& message) override;
  wire::Message receive(Millis timeout) override;
  void close() override;

 private:
  int fd_ = -1;
};

/// "host:port"; the FBNSL_BIND environment variable overrides `fallback`.
std::pair<std::string, std::uint16_t> resolve_bind_address(const std::string& fallback);
std::pair<std::string, std::uint16_t> parse_host_port(const std::string& text);

}  // namespace fbnsl
