#include "fbnsl/orchestrate.hpp"

#include <exception>
#include <ostream>
#include <sstream>
#include <thread>

namespace fbnsl {

RoundBarrier::RoundBarrier(std::uint32_t round, int expected) : round_(round), expected_(expected) {
  if (expected < 1) throw ArgumentError("RoundBarrier: expected must be >= 1");
}

RoundBarrier::Admission RoundBarrier::admit(std::uint32_t client_id, std::uint32_t round) {
  if (client_id >= static_cast<std::uint32_t>(expected_)) return Admission::kUnknownClient;
  if (round != round_) return Admission::kWrongRound;
  if (!received_.insert(client_id).second) return Admission::kDuplicate;
  return Admission::kAccepted;
}

std::vector<std::uint32_t> RoundBarrier::missing() const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t k = 0; k < static_cast<std::uint32_t>(expected_); ++k) {
    if (!received_.count(k)) out.push_back(k);
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::string describe_missing(const RoundBarrier& barrier) {
  std::ostringstream os;
  const auto missing = barrier.missing();
  os << (missing.size() == 1 ? "client " : "clients ");
  for (std::size_t i = 0; i < missing.size(); ++i) os << (i ? ", " : "") << missing[i];
  return os.str();
}

// Fills the barrier, handing each admitted message to `accept`.
template <typename Accept>
void await_round(ServerEndpoint& endpoint, RoundBarrier& barrier, wire::MessageType type,
                 const FederationOptions& options, Accept&& accept) {
  const auto deadline = Clock::now() + options.timeout;
  while (!barrier.complete()) {
    const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now());
    wire::Message m;
    try {
      if (left.count() <= 0) throw TimeoutError("deadline passed");
      m = endpoint.receive(left);
    } catch (const TimeoutError&) {
      throw TimeoutError("round " + std::to_string(barrier.round()) + ": no message from " +
                         describe_missing(barrier) + " within " +
                         std::to_string(options.timeout.count()) + " ms");
    }
    if (m.type != type) {
      if (options.log) {
        *options.log << "ignoring message type " << static_cast<int>(m.type) << " from client "
                     << m.client_id << " in round " << barrier.round() << '\n';
      }
      continue;
    }
    switch (barrier.admit(m.client_id, m.round)) {
      case RoundBarrier::Admission::kAccepted:
        accept(m);
        break;
      case RoundBarrier::Admission::kDuplicate:
        if (options.log) {
          *options.log << "rejected duplicate from client " << m.client_id << " for round "
                       << m.round << '\n';
        }
        break;
      case RoundBarrier::Admission::kWrongRound:
        if (options.log) {
          *options.log << "rejected round " << m.round << " message from client " << m.client_id
                       << " while collecting round " << barrier.round() << '\n';
        }
        break;
      case RoundBarrier::Admission::kUnknownClient:
        throw ProtocolError("message from unknown client " + std::to_string(m.client_id));
    }
  }
}

}  // namespace

void serve_consensus(ServerEndpoint& endpoint, ConsensusServer& server,
                     const FederationOptions& options) {
  const int k = server.client_count();

  RoundBarrier setup(0, k);
  std::uint64_t total = 0;
  await_round(endpoint, setup, wire::MessageType::kSetupCount, options,
              [&](const wire::Message& m) { total += wire::parse_setup_count(m); });
  for (int c = 0; c < k; ++c) endpoint.send(c, wire::setup_count(wire::kServerId, total));

  std::vector<Matrix> locals(k);
  while (!server.finished()) {
    const auto round = static_cast<std::uint32_t>(server.round() + 1);
    RoundBarrier barrier(round, k);
    await_round(endpoint, barrier, wire::MessageType::kClientUpdate, options,
                [&](const wire::Message& m) { locals[m.client_id] = wire::parse_client_update(m); });
    const Matrix global = server.aggregate(locals);
    const bool stop = server.finished();
    for (int c = 0; c < k; ++c) endpoint.send(c, wire::server_broadcast(round, global, stop));
  }
}

void join_consensus(ClientEndpoint& endpoint, ConsensusClient& client,
                    const FederationOptions& options) {
  const auto id = static_cast<std::uint32_t>(client.client_id());
  endpoint.send(wire::setup_count(id, client.sample_count()));
  client.prepare(wire::parse_setup_count(endpoint.receive(options.timeout)));

  for (std::uint32_t round = 1;; ++round) {
    endpoint.send(wire::client_update(round, id, client.local_step()));
    const wire::Message reply = endpoint.receive(options.timeout);
    if (reply.round != round) {
      throw ProtocolError("client " + std::to_string(id) + " expected broadcast for round " +
                          std::to_string(round) + ", got " + std::to_string(reply.round));
    }
    const wire::Broadcast b = wire::parse_server_broadcast(reply);
    client.absorb_global(b.global);
    if (b.stop) return;
  }
}

namespace {

// Server body on the calling thread, one thread per client body. The server's
// error wins; otherwise the first client error is rethrown.
template <typename ServerBody, typename ClientBody>
void run_parties(const FederationOptions& options, int clients, ServerBody&& server_body,
                 ClientBody&& client_body) {
  std::vector<std::exception_ptr> client_errors(clients);
  std::vector<std::thread> threads;
  std::exception_ptr server_error;

  auto spawn = [&](auto make_endpoint) {
    for (int c = 0; c < clients; ++c) {
      threads.emplace_back([&, c, make_endpoint] {
        try {
          auto endpoint = make_endpoint(c);
          client_body(*endpoint, c);
        } catch (...) {
          client_errors[c] = std::current_exception();
        }
      });
    }
  };

  if (options.transport == TransportKind::kInProcess) {
    InProcessHub hub(clients);
    auto endpoint = hub.server_endpoint();
    spawn([&hub](int c) { return hub.client_endpoint(c); });
    try {
      server_body(*endpoint);
    } catch (...) {
      server_error = std::current_exception();
    }
    endpoint->close();
    for (auto& t : threads) t.join();
  } else {
    TcpServerEndpoint endpoint(options.host, options.port);
    const std::uint16_t port = endpoint.port();
    const std::string host = options.host;
    const Millis timeout = options.timeout;
    spawn([host, port, timeout](int) {
      return std::make_unique<TcpClientEndpoint>(host, port, timeout);
    });
    try {
      endpoint.accept_clients(clients, options.timeout);
      server_body(endpoint);
    } catch (...) {
      server_error = std::current_exception();
    }
    endpoint.close();
    for (auto& t : threads) t.join();
  }

  if (server_error) std::rethrow_exception(server_error);
  for (auto& e : client_errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void orchestrate(const FederationOptions& options, ConsensusServer& server,
                 std::span<const std::unique_ptr<ConsensusClient>> clients) {
  if (static_cast<int>(clients.size()) != server.client_count()) {
    throw ArgumentError("orchestrate: client count does not match the server");
  }
  for (std::size_t k = 0; k < clients.size(); ++k) {
    if (clients[k]->client_id() != static_cast<int>(k)) {
      throw ArgumentError("orchestrate: clients must be ordered by id 0..K-1");
    }
  }
  run_parties(
      options, server.client_count(),
      [&](ServerEndpoint& endpoint) { serve_consensus(endpoint, server, options); },
      [&](ClientEndpoint& endpoint, int c) { join_consensus(endpoint, *clients[c], options); });
}

std::vector<MaskedShare> exchange_shares(const FederationOptions& options,
                                         std::span<const MaskedShare> shares) {
  const int k = static_cast<int>(shares.size());
  if (k < 1) throw ArgumentError("exchange_shares: no shares");
  std::vector<MaskedShare> received;
  run_parties(
      options, k,
      [&](ServerEndpoint& endpoint) {
        RoundBarrier barrier(shares.front().round, k);
        await_round(endpoint, barrier, wire::MessageType::kStatShare, options,
                    [&](const wire::Message& m) { received.push_back(wire::parse_stat_share(m)); });
        for (int c = 0; c < k; ++c) endpoint.send(c, wire::setup_count(wire::kServerId, 0));
      },
      [&](ClientEndpoint& endpoint, int c) {
        endpoint.send(wire::stat_share(shares[c]));
        // Acknowledgement keeps TCP clients connected until the server is done.
        wire::parse_setup_count(endpoint.receive(options.timeout));
      });
  return received;
}

}  // namespace fbnsl
