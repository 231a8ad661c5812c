#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fbnsl/admm.hpp"
#include "fbnsl/baselines.hpp"
#include "fbnsl/numerics.hpp"

namespace fbnsl {

/// Additive per-client statistics: Σx, Σxxᵀ and the sample count.
struct LocalStatistics {
  Vector sum_x;
  Matrix sum_xxT;
  std::uint64_t count = 0;
};

LocalStatistics local_stats(const Matrix& samples);

/// A client's statistics hidden behind pairwise cancelling masks.
///
/// For every peer j the client adds +r_kj when j > k and −r_kj when j < k,
/// where r_kj = r_jk is expanded from the seed the pair agreed on. The count
/// is masked with wrapping 64-bit integers so it reconstructs exactly.
/// checksum = Σ_j ±tag(seed_kj) mod 2^64 sums to zero over all clients only
/// when every pair used the same seed.
struct MaskedShare {
  std::uint32_t client_id = 0;
  std::uint32_t round = 0;
  Vector sum_x;
  Matrix sum_xxT;
  std::uint64_t count = 0;
  std::uint64_t checksum = 0;
};

/// Stand-in for a key exchange: the seed client k shares with each peer,
/// derived from a session secret. Entry k (self) is unused.
std::vector<std::uint64_t> pairwise_seeds(std::uint64_t session_secret, int clients, int client_id);

struct MaskingOptions {
  double mask_scale = 1e4;
  std::uint32_t round = 0;
};

MaskedShare mask_statistics(const LocalStatistics& stats, int client_id,
                            std::span<const std::uint64_t> peer_seeds,
                            const MaskingOptions& options = {});

/// Sums the K shares. Duplicate deliveries of an identical share are ignored.
/// Missing client → ProtocolError naming it; seed mismatch → IntegrityError.
LocalStatistics secure_sum(std::span<const MaskedShare> shares, int clients);

struct Covariance {
  Matrix sigma;
  Vector mean;
  std::uint64_t count = 0;
};

/// μ = Σx / n, Σ = Σxxᵀ / n − μμᵀ.
Covariance assemble_covariance(const LocalStatistics& aggregate);

/// NOTEARS on the covariance form of the loss, ½ tr((I−B)ᵀ Σ (I−B)).
LocalEstimate solve_from_suffstats(const Matrix& sigma, std::uint64_t n, double lambda,
                                   const AdmmConfig& config);

}  // namespace fbnsl
