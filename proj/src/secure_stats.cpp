#include "fbnsl/secure_stats.hpp"

#include <map>

#include "fbnsl/rng.hpp"

namespace fbnsl {

LocalStatistics local_stats(const Matrix& samples) {
  if (!all_finite(samples)) throw ArgumentError("local_stats: non-finite data");
  LocalStatistics s;
  s.sum_x = samples.colwise().sum().transpose();
  s.sum_xxT = samples.transpose() * samples;
  s.count = static_cast<std::uint64_t>(samples.rows());
  return s;
}

std::vector<std::uint64_t> pairwise_seeds(std::uint64_t session_secret, int clients,
                                          int client_id) {
  std::vector<std::uint64_t> seeds(clients, 0);
  for (int j = 0; j < clients; ++j) {
    if (j == client_id) continue;
    const auto lo = static_cast<std::uint64_t>(std::min(j, client_id));
    const auto hi = static_cast<std::uint64_t>(std::max(j, client_id));
    seeds[j] = splitmix64(session_secret ^ splitmix64((lo << 32) | hi));
  }
  return seeds;
}

namespace {

std::uint64_t seed_tag(std::uint64_t seed) { return splitmix64(seed ^ 0x5bd1e995ULL); }

}  // namespace

MaskedShare mask_statistics(const LocalStatistics& stats, int client_id,
                            std::span<const std::uint64_t> peer_seeds,
                            const MaskingOptions& options) {
  const auto d = stats.sum_x.size();
  MaskedShare share;
  share.client_id = static_cast<std::uint32_t>(client_id);
  share.round = options.round;
  share.sum_x = stats.sum_x;
  share.sum_xxT = stats.sum_xxT;
  share.count = stats.count;
  share.checksum = 0;
  for (int j = 0; j < static_cast<int>(peer_seeds.size()); ++j) {
    if (j == client_id) continue;
    const double sign = j > client_id ? 1.0 : -1.0;
    Rng rng(peer_seeds[j] ^ options.round);
    for (Eigen::Index i = 0; i < d; ++i) share.sum_x[i] += sign * options.mask_scale * rng.normal();
    for (Eigen::Index c = 0; c < d; ++c) {
      for (Eigen::Index r = 0; r < d; ++r) {
        share.sum_xxT(r, c) += sign * options.mask_scale * rng.normal();
      }
    }
    const std::uint64_t count_mask = rng.next();
    const std::uint64_t tag = seed_tag(peer_seeds[j]);
    if (j > client_id) {
      share.count += count_mask;
      share.checksum += tag;
    } else {
      share.count -= count_mask;
      share.checksum -= tag;
    }
  }
  return share;
}

LocalStatistics secure_sum(std::span<const MaskedShare> shares, int clients) {
  if (clients < 1) throw ArgumentError("secure_sum: need at least one client");
  std::map<std::uint32_t, const MaskedShare*> by_client;
  for (const auto& s : shares) {
    if (s.client_id >= static_cast<std::uint32_t>(clients)) {
      throw ProtocolError("secure_sum: unexpected client id " + std::to_string(s.client_id));
    }
    auto [it, inserted] = by_client.emplace(s.client_id, &s);
    if (!inserted) {
      const MaskedShare& prev = *it->second;
      const bool same = prev.round == s.round && prev.count == s.count &&
                        prev.checksum == s.checksum && prev.sum_x == s.sum_x &&
                        prev.sum_xxT == s.sum_xxT;
      if (!same) {
        throw ProtocolError("secure_sum: conflicting shares from client " +
                            std::to_string(s.client_id));
      }
    }
  }
  for (int k = 0; k < clients; ++k) {
    if (!by_client.count(static_cast<std::uint32_t>(k))) {
      throw ProtocolError("secure_sum: missing share from client " + std::to_string(k));
    }
  }

  const MaskedShare& first = *by_client.begin()->second;
  const auto d = first.sum_x.size();
  LocalStatistics total{Vector::Zero(d), Matrix::Zero(d, d), 0};
  std::uint64_t checksum = 0;
  for (const auto& [id, s] : by_client) {
    if (s->sum_x.size() != d || s->sum_xxT.rows() != d || s->sum_xxT.cols() != d) {
      throw ProtocolError("secure_sum: client " + std::to_string(id) + " share has wrong shape");
    }
    if (s->round != first.round) {
      throw ProtocolError("secure_sum: client " + std::to_string(id) + " share is from round " +
                          std::to_string(s->round));
    }
    total.sum_x += s->sum_x;
    total.sum_xxT += s->sum_xxT;
    total.count += s->count;
    checksum += s->checksum;
  }
  if (checksum != 0) {
    throw IntegrityError("secure_sum: mask checksum does not cancel; pairwise seeds disagree");
  }
  // Masks on sum_xxT are not symmetric individually; their residue is O(eps).
  total.sum_xxT = 0.5 * (total.sum_xxT + total.sum_xxT.transpose());
  return total;
}

Covariance assemble_covariance(const LocalStatistics& aggregate) {
  if (aggregate.count == 0) throw ArgumentError("assemble_covariance: count is zero");
  const double n = static_cast<double>(aggregate.count);
  Covariance c;
  c.count = aggregate.count;
  c.mean = aggregate.sum_x / n;
  c.sigma = aggregate.sum_xxT / n - c.mean * c.mean.transpose();
  c.sigma = 0.5 * (c.sigma + c.sigma.transpose());
  return c;
}

LocalEstimate solve_from_suffstats(const Matrix& sigma, std::uint64_t n, double lambda,
                                   const AdmmConfig& config) {
  require_square(sigma, "solve_from_suffstats");
  if (n == 0) throw ArgumentError("solve_from_suffstats: n must be >= 1");
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw ArgumentError("solve_from_suffstats: covariance is not symmetric");
  }
  if (sigma.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-8 * scale) {
      throw ArgumentError("solve_from_suffstats: covariance is not positive semidefinite");
    }
  }
  const NotearsSolution sol = notears_from_scatter(sigma, lambda, config, config.central_solver);
  return {0, sol.w, threshold_graph(sol.w, config.threshold_tau), sol.converged, sol.iterations};
}

}  // namespace fbnsl
