#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fbnsl/admm.hpp"
#include "fbnsl/secure_stats.hpp"
#include "fbnsl/transport.hpp"

namespace fbnsl {

enum class TransportKind { kInProcess, kTcp };

struct FederationOptions {
  TransportKind transport = TransportKind::kInProcess;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  Millis timeout{60000};
  /// Rejected duplicates and other notices; null silences them.
  std::ostream* log = nullptr;
};

/// Collects one message per client for a single round.
class RoundBarrier {
 public:
  enum class Admission { kAccepted, kDuplicate, kWrongRound, kUnknownClient };

  RoundBarrier(std::uint32_t round, int expected);

  Admission admit(std::uint32_t client_id, std::uint32_t round);
  bool complete() const { return static_cast<int>(received_.size()) == expected_; }
  std::uint32_t round() const { return round_; }
  std::vector<std::uint32_t> missing() const;

 private:
  std::uint32_t round_;
  int expected_;
  std::set<std::uint32_t> received_;
};

/// Server role: SetupCount exchange, then rounds until the server finishes.
/// A silent client raises TimeoutError naming it; the server keeps its partial trace.
void serve_consensus(ServerEndpoint& endpoint, ConsensusServer& server, const FederationOptions& options);

/// Client role, mirror of serve_consensus.
void join_consensus(ClientEndpoint& endpoint, ConsensusClient& client, const FederationOptions& options);

/// Runs one server and K clients (each on its own thread) over the chosen transport.
void orchestrate(const FederationOptions& options, ConsensusServer& server,
                 std::span<const std::unique_ptr<ConsensusClient>> clients);

/// StatShare round over the chosen transport; returns the shares as the server received them.
std::vector<MaskedShare> exchange_shares(const FederationOptions& options,
                                         std::span<const MaskedShare> shares);

}  // namespace fbnsl
