#pragma once

#include <span>
#include <vector>

#include "fbnsl/admm.hpp"
#include "fbnsl/graph.hpp"

namespace fbnsl {

struct LocalEstimate {
  int client_id = 0;
  Matrix weighted;      // W for the linear family, A(θ) for MLPs
  DirectedGraph graph;  // threshold_graph(weighted, tau)
  bool converged = false;
  int iterations = 0;
};

struct NotearsSolution {
  Matrix w;
  double h = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Augmented-Lagrangian solve of min ½tr((I−B)ᵀS(I−B)) + λ‖B‖₁ s.t. h(B) = 0,
/// with α ← α + ρ1 h and ρ1 ← min(γ1 ρ1, rho_max) after every inner solve.
NotearsSolution notears_from_scatter(const Matrix& scatter, double lambda, const AdmmConfig& config,
                                     const SolverOptions& solver);

/// Standalone linear NOTEARS on one (centered) dataset.
LocalEstimate notears_local(const Matrix& samples, double lambda, const AdmmConfig& config,
                            int client_id = 0);

/// Standalone NOTEARS-MLP on one dataset; weighted = A(θ).
LocalEstimate notears_mlp_local(const Matrix& samples, const AdmmConfig& config,
                                int client_id = 0);

/// One independent estimate per client.
std::vector<LocalEstimate> estimate_each(std::span<const ClientDataset> datasets,
                                         ModelFamily family, const AdmmConfig& config);

/// Keeps edges found by strictly more than half of the clients. Cycles are kept.
DirectedGraph aggregate_voting(std::span<const LocalEstimate> estimates);

/// Thresholds the mean weighted matrix.
DirectedGraph aggregate_average(std::span<const LocalEstimate> estimates, double tau = 0.3);

/// Lowest SHD against the truth; ties go to the lowest client id.
DirectedGraph select_best(std::span<const LocalEstimate> estimates, const DirectedGraph& truth);

/// Pools all clients' rows, re-centers and solves once.
LocalEstimate run_alldata(std::span<const ClientDataset> datasets, double lambda,
                          const AdmmConfig& config);
LocalEstimate run_alldata_mlp(std::span<const ClientDataset> datasets, const AdmmConfig& config);

Matrix pool_rows(std::span<const ClientDataset> datasets);

}  // namespace fbnsl
