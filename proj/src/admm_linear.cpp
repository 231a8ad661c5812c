#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "fbnsl/admm.hpp"

namespace fbnsl {

AdmmConfig AdmmConfig::nonlinear_defaults() {
  AdmmConfig c;
  c.rho1_init = 0.1;
  c.rho2_init = 0.1;
  c.lambda = 0.001;
  return c;
}

void AdmmConfig::validate() const {
  if (!(rho1_init > 0) || !(rho2_init > 0)) throw ConfigError("admm: initial penalties must be > 0");
  if (!(lambda >= 0)) throw ConfigError("admm: lambda must be >= 0");
  if (!(gamma1 > 1) || !(gamma2 > 1)) throw ConfigError("admm: gamma1 and gamma2 must be > 1");
  if (max_rounds < 1) throw ConfigError("admm: max_rounds must be >= 1");
  if (!(rho_max > 0)) throw ConfigError("admm: rho_max must be > 0");
  if (!(h_tolerance > 0)) throw ConfigError("admm: h_tolerance must be > 0");
  if (consensus_tolerance && !(*consensus_tolerance > 0)) {
    throw ConfigError("admm: consensus_tolerance must be > 0");
  }
  if (!(threshold_tau >= 0)) throw ConfigError("admm: threshold_tau must be >= 0");
  if (hidden_size < 1) throw ConfigError("admm: hidden_size must be >= 1");
  solver.validate();
  central_solver.validate();
}

std::string trace_csv(const ConvergenceTrace& trace, bool include_a_norm) {
  std::ostringstream os;
  os.precision(17);
  os << "round,h,consensus_residual,objective,rho1,rho2,wall_ms";
  if (include_a_norm) os << ",a_norm";
  os << '\n';
  for (const auto& r : trace.rows) {
    os << r.round << ',' << r.h << ',' << r.consensus_residual << ',' << r.objective << ','
       << r.rho1 << ',' << r.rho2 << ',' << r.wall_ms;
    if (include_a_norm) os << ',' << r.a_norm;
    os << '\n';
  }
  return os.str();
}

void write_trace_csv(const std::string& path, const ConvergenceTrace& trace, bool include_a_norm) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << trace_csv(trace, include_a_norm);
  if (!out) throw IoError("write failed for " + path);
}

double least_squares_loss(const Matrix& b, const Matrix& samples, double total_n) {
  require_square(b, "least_squares_loss");
  if (samples.cols() != b.rows()) {
    throw ArgumentError("least_squares_loss: data has " + std::to_string(samples.cols()) +
                        " columns but B is " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
  }
  if (total_n < static_cast<double>(samples.rows()) || !(total_n > 0)) {
    throw ArgumentError("least_squares_loss: total_n must be >= the local sample count");
  }
  return (samples - samples * b).squaredNorm() / (2.0 * total_n);
}

Matrix scatter_matrix(const Matrix& samples, double total_n) {
  if (!(total_n > 0)) throw ArgumentError("scatter_matrix: total_n must be positive");
  Matrix s = Matrix::Zero(samples.cols(), samples.cols());
  s.selfadjointView<Eigen::Lower>().rankUpdate(samples.transpose(), 1.0 / total_n);
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  return s;
}

double scatter_loss(const Matrix& scatter, const Matrix& b, Matrix* grad) {
  const Matrix residual = Matrix::Identity(b.rows(), b.cols()) - b;
  const Matrix s_residual = scatter * residual;
  if (grad) *grad = -s_residual;
  return 0.5 * residual.cwiseProduct(s_residual).sum();
}

// ---------------------------------------------------------------------------

namespace {

void check_client(const ClientState& state, const Matrix& w) {
  if (!(state.rho2 > 0)) throw ConfigError("client_update: rho2 must be > 0");
  require_square(state.scatter, "client_update");
  if (w.rows() != state.scatter.rows() || w.cols() != state.scatter.cols() ||
      state.beta.rows() != w.rows() || state.beta.cols() != w.cols()) {
    throw DimensionError("client_update: scatter, W and beta must share dimensions");
  }
}

}  // namespace

Matrix client_subproblem_grad(const ClientState& state, const Matrix& w, const Matrix& b) {
  const Eigen::Index d = w.rows();
  return (state.scatter + state.rho2 * Matrix::Identity(d, d)) * b -
         (state.rho2 * w - state.beta + state.scatter);
}

double client_subproblem_value(const ClientState& state, const Matrix& w, const Matrix& b) {
  return scatter_loss(state.scatter, b, nullptr) + state.beta.cwiseProduct(b - w).sum() +
         0.5 * state.rho2 * (b - w).squaredNorm();
}

Matrix client_update(const ClientState& state, const Matrix& w) {
  check_client(state, w);
  const Eigen::Index d = w.rows();
  const Matrix system = state.scatter + state.rho2 * Matrix::Identity(d, d);
  const Matrix rhs = state.rho2 * w - state.beta + state.scatter;
  Matrix b = solve_spd_linear(system, rhs);

  // Stationarity certificate. The residual is measured relative to the scale
  // of the system so that it stays meaningful once rho2 is large.
  const double residual = (system * b - rhs).norm();
  const double scale = std::max(1.0, system.norm() * b.norm() + rhs.norm());
  if (!(residual <= 1e-8 * (1.0 + b.norm()) * scale)) {
    throw NumericError("client_update: stationarity residual " + std::to_string(residual) +
                       " for client " + std::to_string(state.client_id));
  }
  return b;
}

// ---------------------------------------------------------------------------

namespace {

// Sums over clients that the W objective needs; built once per W-update.
struct ConsensusTerms {
  int clients = 0;
  Matrix sum_b;
  Matrix sum_beta;
  double sum_b_sq = 0.0;
  double sum_beta_b = 0.0;
};

ConsensusTerms collect_terms(std::span<const Matrix> locals, std::span<const Matrix> betas,
                             Eigen::Index d) {
  if (locals.size() != betas.size() || locals.empty()) {
    throw ArgumentError("server_w_update: need one beta per local and at least one client");
  }
  ConsensusTerms t;
  t.clients = static_cast<int>(locals.size());
  t.sum_b = Matrix::Zero(d, d);
  t.sum_beta = Matrix::Zero(d, d);
  for (std::size_t k = 0; k < locals.size(); ++k) {
    if (locals[k].rows() != d || locals[k].cols() != d || betas[k].rows() != d ||
        betas[k].cols() != d) {
      throw DimensionError("server_w_update: client " + std::to_string(k) +
                           " sent a matrix of the wrong shape");
    }
    t.sum_b += locals[k];
    t.sum_beta += betas[k];
    t.sum_b_sq += locals[k].squaredNorm();
    t.sum_beta_b += betas[k].cwiseProduct(locals[k]).sum();
  }
  return t;
}

// Smooth part of the W objective; the l1 term is added when with_l1 is set.
double w_objective(const ServerState& s, const ConsensusTerms& t, const Matrix& w, Matrix* grad,
                   bool with_l1 = true) {
  Matrix h_grad;
  const double h = acyclicity_with_grad(w, h_grad);
  const double l1 = with_l1 ? s.lambda : 0.0;
  const double value = l1 * w.lpNorm<1>() + s.alpha * h + 0.5 * s.rho1 * h * h +
                       t.sum_beta_b - t.sum_beta.cwiseProduct(w).sum() +
                       0.5 * s.rho2 *
                           (t.sum_b_sq - 2.0 * t.sum_b.cwiseProduct(w).sum() +
                            t.clients * w.squaredNorm());
  if (grad) {
    *grad = l1 * l1_subgradient(w) + (s.alpha + s.rho1 * h) * h_grad - t.sum_beta +
            s.rho2 * (t.clients * w - t.sum_b);
  }
  return value;
}

}  // namespace

double server_w_objective(const ServerState& server, std::span<const Matrix> locals,
                          std::span<const Matrix> betas, const Matrix& w, Matrix* grad) {
  require_square(w, "server_w_objective");
  const ConsensusTerms terms = collect_terms(locals, betas, w.rows());
  return w_objective(server, terms, w, grad);
}

WUpdate server_w_update(const ServerState& server, std::span<const Matrix> locals,
                        std::span<const Matrix> betas, const SolverOptions& options) {
  require_square(server.w, "server_w_update");
  const Eigen::Index d = server.w.rows();
  const ConsensusTerms terms = collect_terms(locals, betas, d);

  const Objective objective = [&](const Vector& x, Vector& g) {
    const Eigen::Map<const Matrix> w(x.data(), d, d);
    Matrix grad;
    const double f = w_objective(server, terms, w, &grad, false);
    g = Eigen::Map<const Vector>(grad.data(), grad.size());
    return f;
  };
  const Vector x0 = Eigen::Map<const Vector>(server.w.data(), server.w.size());
  SolverResult result;
  try {
    result = owlqn_minimize(objective, server.lambda, x0, options);
  } catch (const NumericError& e) {
    throw NumericError("W-update in round " + std::to_string(server.round + 1) + ": " + e.what());
  }
  return {Eigen::Map<const Matrix>(result.x.data(), d, d), result.value, result.status};
}

void dual_update(ServerState& server, std::span<ClientState> clients, const Matrix& w_new,
                 std::span<const Matrix> locals_new, double rho_max) {
  if (clients.size() != locals_new.size()) {
    throw ArgumentError("dual_update: one local matrix per client required");
  }
  server.alpha += server.rho1 * acyclicity(w_new);
  for (std::size_t k = 0; k < clients.size(); ++k) {
    clients[k].beta += clients[k].rho2 * (locals_new[k] - w_new);
    clients[k].local_b = locals_new[k];
    clients[k].rho2 = std::min(server.gamma2 * clients[k].rho2, rho_max);
  }
  server.rho1 = std::min(server.gamma1 * server.rho1, rho_max);
  server.rho2 = std::min(server.gamma2 * server.rho2, rho_max);
  server.w = w_new;
  ++server.round;
}

// ---------------------------------------------------------------------------
// Roles

namespace {

using Clock = std::chrono::steady_clock;

void require_centered(const Matrix& samples, int client_id) {
  if (samples.rows() == 0) {
    throw ArgumentError("client " + std::to_string(client_id) + " has an empty dataset");
  }
  const double scale = std::max(1.0, samples.cwiseAbs().maxCoeff());
  const double worst = samples.colwise().mean().cwiseAbs().maxCoeff();
  if (worst > 1e-8 * scale) {
    throw ArgumentError("client " + std::to_string(client_id) +
                        " data is not centered (column mean " + std::to_string(worst) + ")");
  }
}

class LinearClient final : public ConsensusClient {
 public:
  LinearClient(int id, Matrix samples, const AdmmConfig& config)
      : samples_(std::move(samples)), config_(config) {
    require_centered(samples_, id);
    const Eigen::Index d = samples_.cols();
    state_.client_id = id;
    state_.beta = Matrix::Zero(d, d);
    state_.local_b = Matrix::Zero(d, d);
    state_.rho2 = config.rho2_init;
    w_ = Matrix::Zero(d, d);
  }

  int client_id() const override { return state_.client_id; }
  std::uint64_t sample_count() const override { return samples_.rows(); }

  void prepare(std::uint64_t total_n) override {
    if (total_n < sample_count()) throw ProtocolError("total sample count below local count");
    state_.scatter = scatter_matrix(samples_, static_cast<double>(total_n));
  }

  Matrix local_step() override {
    if (state_.scatter.size() == 0) throw ProtocolError("local_step before prepare");
    state_.local_b = client_update(state_, w_);
    return state_.local_b;
  }

  void absorb_global(const Matrix& global) override {
    state_.beta += state_.rho2 * (state_.local_b - global);
    state_.rho2 = std::min(config_.gamma2 * state_.rho2, config_.rho_max);
    w_ = global;
  }

 private:
  Matrix samples_;
  AdmmConfig config_;
  ClientState state_;
  Matrix w_;
};

class LinearServer final : public ConsensusServer {
 public:
  LinearServer(int clients, int d, const AdmmConfig& config)
      : clients_(clients), d_(d), config_(config), betas_(clients, Matrix::Zero(d, d)) {
    config.validate();
    if (clients < 1) throw ArgumentError("admm: need at least one client");
    state_.w = Matrix::Zero(d, d);
    state_.rho1 = config.rho1_init;
    state_.rho2 = config.rho2_init;
    state_.lambda = config.lambda;
    state_.gamma1 = config.gamma1;
    state_.gamma2 = config.gamma2;
  }

  int client_count() const override { return clients_; }

  Matrix aggregate(std::span<const Matrix> locals) override {
    if (static_cast<int>(locals.size()) != clients_) {
      throw ProtocolError("server expected " + std::to_string(clients_) + " local updates, got " +
                          std::to_string(locals.size()));
    }
    const auto start = Clock::now();
    const WUpdate update = server_w_update(state_, locals, betas_, config_.solver);
    const Matrix& w = update.w;

    TraceRow row;
    row.round = state_.round + 1;
    row.h = acyclicity(w);
    for (const auto& b : locals) {
      row.consensus_residual = std::max(row.consensus_residual, (b - w).norm());
    }
    row.objective = update.objective;
    row.rho1 = state_.rho1;
    row.rho2 = state_.rho2;

    state_.alpha += state_.rho1 * row.h;
    for (int k = 0; k < clients_; ++k) betas_[k] += state_.rho2 * (locals[k] - w);
    state_.rho1 = std::min(config_.gamma1 * state_.rho1, config_.rho_max);
    state_.rho2 = std::min(config_.gamma2 * state_.rho2, config_.rho_max);
    state_.w = w;
    ++state_.round;

    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    trace_.rows.push_back(row);
    if (config_.keep_iterates) trace_.iterates.push_back(w);

    trace_.converged = row.h <= config_.h_tolerance &&
                       row.consensus_residual <= config_.consensus_tolerance_for(d_);
    finished_ = trace_.converged || state_.round >= config_.max_rounds;
    return w;
  }

  bool finished() const override { return finished_; }
  int round() const override { return state_.round; }
  const Matrix& global() const override { return state_.w; }
  const ConvergenceTrace& trace() const override { return trace_; }
  Matrix adjacency() const override { return state_.w; }

 private:
  int clients_;
  int d_;
  AdmmConfig config_;
  ServerState state_;
  std::vector<Matrix> betas_;
  ConvergenceTrace trace_;
  bool finished_ = false;
};

}  // namespace

std::unique_ptr<ConsensusClient> make_linear_client(int client_id, Matrix samples,
                                                    const AdmmConfig& config) {
  return std::make_unique<LinearClient>(client_id, std::move(samples), config);
}

std::unique_ptr<ConsensusServer> make_linear_server(int clients, int d, const AdmmConfig& config) {
  return std::make_unique<LinearServer>(clients, d, config);
}

void drive_consensus(ConsensusServer& server,
                     std::span<const std::unique_ptr<ConsensusClient>> clients) {
  if (static_cast<int>(clients.size()) != server.client_count()) {
    throw ArgumentError("drive_consensus: client count does not match the server");
  }
  std::uint64_t total = 0;
  for (const auto& c : clients) total += c->sample_count();
  for (const auto& c : clients) c->prepare(total);

  std::vector<Matrix> locals(clients.size());
  while (!server.finished()) {
    for (std::size_t k = 0; k < clients.size(); ++k) locals[k] = clients[k]->local_step();
    const Matrix global = server.aggregate(locals);
    for (const auto& c : clients) c->absorb_global(global);
  }
}

namespace {

int shared_dimension(std::span<const ClientDataset> datasets) {
  if (datasets.empty()) throw ArgumentError("admm: need at least one client dataset");
  const auto d = datasets.front().samples.cols();
  for (const auto& ds : datasets) {
    if (ds.samples.cols() != d) throw ArgumentError("admm: clients disagree on the variable count");
  }
  return static_cast<int>(d);
}

}  // namespace

AdmmResult run_admm(std::span<const ClientDataset> datasets, const AdmmConfig& config) {
  const int d = shared_dimension(datasets);
  auto server = make_linear_server(static_cast<int>(datasets.size()), d, config);
  std::vector<std::unique_ptr<ConsensusClient>> clients;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    clients.push_back(make_linear_client(static_cast<int>(k), datasets[k].samples, config));
  }
  drive_consensus(*server, clients);
  AdmmResult out;
  out.w = server->global();
  out.graph = threshold_graph(out.w, config.threshold_tau);
  out.trace = server->trace();
  return out;
}

AdmmResult run_admm_mlp(std::span<const ClientDataset> datasets, const AdmmConfig& config) {
  const int d = shared_dimension(datasets);
  if (datasets.size() == 1) return solve_mlp_single(datasets[0].samples, config);
  auto server = make_mlp_server(static_cast<int>(datasets.size()), d, config);
  std::vector<std::unique_ptr<ConsensusClient>> clients;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    clients.push_back(make_mlp_client(static_cast<int>(k), datasets[k].samples, config));
  }
  drive_consensus(*server, clients);
  AdmmResult out;
  out.w = server->adjacency();
  out.theta = Eigen::Map<const Vector>(server->global().data(), server->global().size());
  out.graph = threshold_graph(out.w, config.threshold_tau);
  out.trace = server->trace();
  return out;
}

}  // namespace fbnsl
