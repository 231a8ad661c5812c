#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbnsl/graph.hpp"
#include "fbnsl/mlp.hpp"
#include "fbnsl/numerics.hpp"

namespace fbnsl {

enum class ModelFamily { kLinear, kMlp };

struct AdmmConfig {
  double rho1_init = 1e-3;
  double rho2_init = 1e-3;
  double lambda = 0.01;
  double gamma1 = 1.75;
  double gamma2 = 1.25;
  int max_rounds = 200;
  double rho_max = 1e16;
  double h_tolerance = 1e-8;
  /// Unset means 1e-4 · d.
  std::optional<double> consensus_tolerance;
  double threshold_tau = 0.3;

  // Nonlinear family only.
  int hidden_size = 10;
  std::uint64_t init_seed = 0;

  SolverOptions solver;
  /// Single pooled solves (alldata, suffstats) stop on the subgradient norm
  /// only; they are run once, so precision is cheap there.
  SolverOptions central_solver{.max_iterations = 500,
                               .gradient_tolerance = 1e-8,
                               .history_size = 10,
                               .function_tolerance = 0.0};
  /// Keep W after every round in the trace (used by determinism checks).
  bool keep_iterates = false;

  static AdmmConfig linear_defaults() { return {}; }
  static AdmmConfig nonlinear_defaults();

  double consensus_tolerance_for(int d) const {
    return consensus_tolerance.value_or(1e-4 * d);
  }
  void validate() const;
};

struct TraceRow {
  int round = 0;
  double h = 0.0;
  double consensus_residual = 0.0;
  double objective = 0.0;
  double rho1 = 0.0;  // penalties in effect during this round
  double rho2 = 0.0;
  double wall_ms = 0.0;
  double a_norm = 0.0;  // nonlinear family only
};

struct ConvergenceTrace {
  std::vector<TraceRow> rows;
  bool converged = false;
  std::vector<Matrix> iterates;
};

/// CSV with columns round,h,consensus_residual,objective,rho1,rho2,wall_ms
/// (plus a_norm when include_a_norm).
void write_trace_csv(const std::string& path, const ConvergenceTrace& trace, bool include_a_norm);
std::string trace_csv(const ConvergenceTrace& trace, bool include_a_norm);

// ---------------------------------------------------------------------------
// Linear least squares pieces

/// (1 / (2·total_n)) Σᵢ ‖xᵢ − Bᵀxᵢ‖².
double least_squares_loss(const Matrix& b, const Matrix& samples, double total_n);

/// xᵀx / total_n.
Matrix scatter_matrix(const Matrix& samples, double total_n);

/// ½ tr((I − B)ᵀ S (I − B)) and its gradient −S(I − B).
double scatter_loss(const Matrix& scatter, const Matrix& b, Matrix* grad);

struct ClientState {
  int client_id = 0;
  Matrix scatter;
  Matrix local_b;
  Matrix beta;
  double rho2 = 0.0;
};

struct ServerState {
  Matrix w;
  double alpha = 0.0;
  double rho1 = 0.0;
  double rho2 = 0.0;
  double lambda = 0.0;
  double gamma1 = 1.75;
  double gamma2 = 1.25;
  int round = 0;
};

/// B_k = (S_k + ρ2 I)⁻¹ (ρ2 W − β_k + S_k), the exact minimizer of the local
/// proximal subproblem.
Matrix client_update(const ClientState& state, const Matrix& w);

/// Gradient of the local subproblem at B: (S + ρ2 I) B − (ρ2 W − β + S).
Matrix client_subproblem_grad(const ClientState& state, const Matrix& w, const Matrix& b);
double client_subproblem_value(const ClientState& state, const Matrix& w, const Matrix& b);

struct WUpdate {
  Matrix w;
  double objective = 0.0;
  SolverStatus status = SolverStatus::kMaxIterations;
};

/// Server-side W minimization (ℓ1 + augmented acyclicity + consensus terms),
/// warm-started at server.w.
WUpdate server_w_update(const ServerState& server, std::span<const Matrix> locals,
                        std::span<const Matrix> betas, const SolverOptions& options = {});

double server_w_objective(const ServerState& server, std::span<const Matrix> locals,
                          std::span<const Matrix> betas, const Matrix& w, Matrix* grad);

/// α += ρ1 h(W); β_k += ρ2 (B_k − W); ρ1, ρ2 grow geometrically up to rho_max.
void dual_update(ServerState& server, std::span<ClientState> clients, const Matrix& w_new,
                 std::span<const Matrix> locals_new, double rho_max);

// ---------------------------------------------------------------------------
// Consensus roles. Parameters always travel as matrices: d×d for the linear
// family, a P×1 column for flattened MLP parameters.

class ConsensusClient {
 public:
  virtual ~ConsensusClient() = default;
  virtual int client_id() const = 0;
  virtual std::uint64_t sample_count() const = 0;
  /// Called once with the federation-wide sample count.
  virtual void prepare(std::uint64_t total_n) = 0;
  /// Local update against the current global parameters.
  virtual Matrix local_step() = 0;
  /// Receive W^{t+1}; updates the local multiplier and penalty.
  virtual void absorb_global(const Matrix& global) = 0;
};

class ConsensusServer {
 public:
  virtual ~ConsensusServer() = default;
  virtual int client_count() const = 0;
  /// One round: W-update from the K locals (ordered by client id), then dual
  /// and penalty updates. Returns W^{t+1}.
  virtual Matrix aggregate(std::span<const Matrix> locals) = 0;
  virtual bool finished() const = 0;
  virtual int round() const = 0;
  virtual const Matrix& global() const = 0;
  virtual const ConvergenceTrace& trace() const = 0;
  /// Weighted adjacency implied by the global parameters.
  virtual Matrix adjacency() const = 0;
};

std::unique_ptr<ConsensusClient> make_linear_client(int client_id, Matrix samples,
                                                    const AdmmConfig& config);
std::unique_ptr<ConsensusServer> make_linear_server(int clients, int d, const AdmmConfig& config);

std::unique_ptr<ConsensusClient> make_mlp_client(int client_id, Matrix samples,
                                                 const AdmmConfig& config);
std::unique_ptr<ConsensusServer> make_mlp_server(int clients, int d, const AdmmConfig& config);

/// Drives the roles directly in one process, clients in id order.
void drive_consensus(ConsensusServer& server, std::span<const std::unique_ptr<ConsensusClient>> clients);

struct AdmmResult {
  Matrix w;          // weighted adjacency (linear: W, nonlinear: A(θ))
  Vector theta;      // nonlinear family: flattened global parameters
  DirectedGraph graph;
  ConvergenceTrace trace;
};

/// Consensus ADMM over centered client datasets (linear least squares).
AdmmResult run_admm(std::span<const ClientDataset> datasets, const AdmmConfig& config);

/// Augmented-Lagrangian MLP fit on one dataset. With a single party the
/// consensus constraint is trivial (W = θ), so the trace residual is zero.
AdmmResult solve_mlp_single(const Matrix& samples, const AdmmConfig& config);

/// Same loop with per-variable MLPs; the graph is read off A(θ).
/// One dataset routes through solve_mlp_single.
AdmmResult run_admm_mlp(std::span<const ClientDataset> datasets, const AdmmConfig& config);

// ---------------------------------------------------------------------------
// Nonlinear client subproblem

struct MlpClientProblem {
  const Matrix* samples = nullptr;
  double total_n = 1.0;
  Vector global;
  Vector beta;
  double rho2 = 0.0;
  int dim = 0;
  int hidden = 0;
};

/// Loss + ⟨β, θ − θ_g⟩ + (ρ2/2)‖θ − θ_g‖² and its gradient (self-input columns masked).
double mlp_client_objective(const MlpClientProblem& problem, const Vector& theta, Vector* grad);

MlpParams client_update_nonlinear(const MlpParams& local, const MlpParams& global,
                                  const Vector& beta, double rho2, const Matrix& samples,
                                  double total_n, const SolverOptions& options = {});

/// λ ΣA + α h(A) + (ρ1/2) h(A)² + Σ⟨β_k, θ_k − θ⟩ + (ρ2/2) Σ‖θ_k − θ‖².
double mlp_server_objective(const MlpParams& shape, double lambda, double alpha, double rho1,
                            double rho2, std::span<const Matrix> locals,
                            std::span<const Matrix> betas, const Vector& theta, Vector* grad);

}  // namespace fbnsl
