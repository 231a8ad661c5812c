#include <algorithm>
#include <chrono>

#include "fbnsl/admm.hpp"

namespace fbnsl {

namespace {

void mask_self_gradient(Vector& grad, int d, int m) {
  for (int j = 0; j < d; ++j) {
    for (int r = 0; r < m; ++r) grad[first_weight_offset(d, m, j, r, j)] = 0.0;
  }
}

}  // namespace

double mlp_client_objective(const MlpClientProblem& p, const Vector& theta, Vector* grad) {
  const MlpParams params = MlpParams::unflatten(theta, p.dim, p.hidden);
  const double loss = mlp_squared_loss(params, *p.samples, p.total_n, grad);
  const Vector diff = theta - p.global;
  const double value = loss + p.beta.dot(diff) + 0.5 * p.rho2 * diff.squaredNorm();
  if (grad) {
    *grad += p.beta + p.rho2 * diff;
    mask_self_gradient(*grad, p.dim, p.hidden);
  }
  return value;
}

MlpParams client_update_nonlinear(const MlpParams& local, const MlpParams& global,
                                  const Vector& beta, double rho2, const Matrix& samples,
                                  double total_n, const SolverOptions& options) {
  if (!(rho2 > 0)) throw ConfigError("client_update_nonlinear: rho2 must be > 0");
  if (local.dim() != global.dim() || local.hidden() != global.hidden() ||
      beta.size() != global.parameter_count()) {
    throw DimensionError("client_update_nonlinear: parameter shapes disagree");
  }
  MlpClientProblem problem{&samples, total_n, global.flatten(), beta, rho2, global.dim(),
                           global.hidden()};
  const Objective objective = [&](const Vector& x, Vector& g) {
    return mlp_client_objective(problem, x, &g);
  };
  Vector start = local.flatten();
  const SolverResult result = lbfgs_minimize(objective, start, options);
  return MlpParams::unflatten(result.x, global.dim(), global.hidden());
}

double mlp_server_objective(const MlpParams& shape, double lambda, double alpha, double rho1,
                            double rho2, std::span<const Matrix> locals,
                            std::span<const Matrix> betas, const Vector& theta, Vector* grad) {
  const int d = shape.dim();
  const int m = shape.hidden();
  const MlpParams params = MlpParams::unflatten(theta, d, m);
  Vector h_grad, l1_grad;
  const double h = mlp_acyclicity(params, grad ? &h_grad : nullptr);
  const double l1 = mlp_group_l1(params, grad ? &l1_grad : nullptr);
  double value = lambda * l1 + alpha * h + 0.5 * rho1 * h * h;
  if (grad) *grad = lambda * l1_grad + (alpha + rho1 * h) * h_grad;
  for (std::size_t k = 0; k < locals.size(); ++k) {
    const auto local = locals[k].reshaped();
    const auto beta = betas[k].reshaped();
    const Vector diff = local - theta;
    value += beta.dot(diff) + 0.5 * rho2 * diff.squaredNorm();
    if (grad) *grad -= beta + rho2 * diff;
  }
  if (grad) mask_self_gradient(*grad, d, m);
  return value;
}

namespace {

using Clock = std::chrono::steady_clock;

Vector initial_theta(int d, const AdmmConfig& config) {
  return MlpParams::random_init(d, config.hidden_size, Rng(config.init_seed)).flatten();
}

Matrix as_column(const Vector& v) { return Eigen::Map<const Matrix>(v.data(), v.size(), 1); }

class MlpClient final : public ConsensusClient {
 public:
  MlpClient(int id, Matrix samples, const AdmmConfig& config)
      : id_(id), samples_(std::move(samples)), config_(config) {
    if (samples_.rows() == 0) {
      throw ArgumentError("client " + std::to_string(id) + " has an empty dataset");
    }
    d_ = static_cast<int>(samples_.cols());
    global_ = initial_theta(d_, config);
    local_ = global_;
    beta_ = Vector::Zero(global_.size());
    rho2_ = config.rho2_init;
  }

  int client_id() const override { return id_; }
  std::uint64_t sample_count() const override { return samples_.rows(); }
  void prepare(std::uint64_t total_n) override {
    if (total_n < sample_count()) throw ProtocolError("total sample count below local count");
    total_n_ = static_cast<double>(total_n);
  }

  Matrix local_step() override {
    if (total_n_ <= 0) throw ProtocolError("local_step before prepare");
    MlpClientProblem problem{&samples_, total_n_, global_, beta_, rho2_, d_, config_.hidden_size};
    const Objective objective = [&](const Vector& x, Vector& g) {
      return mlp_client_objective(problem, x, &g);
    };
    try {
      local_ = lbfgs_minimize(objective, local_, config_.solver).x;
    } catch (const NumericError& e) {
      throw NumericError("client " + std::to_string(id_) + ": " + e.what());
    }
    return as_column(local_);
  }

  void absorb_global(const Matrix& global) override {
    if (global.size() != local_.size()) throw ProtocolError("global parameter size mismatch");
    const auto g = global.reshaped();
    beta_ += rho2_ * (local_ - g);
    rho2_ = std::min(config_.gamma2 * rho2_, config_.rho_max);
    global_ = g;
  }

 private:
  int id_;
  int d_ = 0;
  Matrix samples_;
  AdmmConfig config_;
  Vector global_, local_, beta_;
  double rho2_ = 0.0;
  double total_n_ = 0.0;
};

class MlpServer final : public ConsensusServer {
 public:
  MlpServer(int clients, int d, const AdmmConfig& config)
      : clients_(clients), d_(d), config_(config), shape_(d, config.hidden_size) {
    config.validate();
    if (clients < 1) throw ArgumentError("admm: need at least one client");
    theta_ = initial_theta(d, config);
    global_ = as_column(theta_);
    betas_.assign(clients, Matrix::Zero(theta_.size(), 1));
    rho1_ = config.rho1_init;
    rho2_ = config.rho2_init;
  }

  int client_count() const override { return clients_; }

  Matrix aggregate(std::span<const Matrix> locals) override {
    if (static_cast<int>(locals.size()) != clients_) {
      throw ProtocolError("server expected " + std::to_string(clients_) + " local updates, got " +
                          std::to_string(locals.size()));
    }
    for (const auto& l : locals) {
      if (l.size() != theta_.size()) throw ProtocolError("local parameter size mismatch");
    }
    const auto start = Clock::now();
    const Objective objective = [&](const Vector& x, Vector& g) {
      return mlp_server_objective(shape_, config_.lambda, alpha_, rho1_, rho2_, locals, betas_, x,
                                  &g);
    };
    SolverResult result;
    try {
      result = lbfgs_minimize(objective, theta_, config_.solver);
    } catch (const NumericError& e) {
      throw NumericError("W-update in round " + std::to_string(round_ + 1) + ": " + e.what());
    }
    const Vector& theta = result.x;
    const MlpParams params = MlpParams::unflatten(theta, d_, config_.hidden_size);

    TraceRow row;
    row.round = round_ + 1;
    row.h = mlp_acyclicity(params, nullptr);
    for (const auto& l : locals) {
      row.consensus_residual = std::max(row.consensus_residual, (l.reshaped() - theta).norm());
    }
    row.objective = result.value;
    row.rho1 = rho1_;
    row.rho2 = rho2_;
    row.a_norm = equivalent_adjacency(params).norm();

    alpha_ += rho1_ * row.h;
    for (int k = 0; k < clients_; ++k) betas_[k] += rho2_ * (locals[k] - as_column(theta));
    rho1_ = std::min(config_.gamma1 * rho1_, config_.rho_max);
    rho2_ = std::min(config_.gamma2 * rho2_, config_.rho_max);
    theta_ = theta;
    global_ = as_column(theta_);
    ++round_;

    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    trace_.rows.push_back(row);
    if (config_.keep_iterates) trace_.iterates.push_back(global_);
    trace_.converged = row.h <= config_.h_tolerance &&
                       row.consensus_residual <= config_.consensus_tolerance_for(d_);
    finished_ = trace_.converged || round_ >= config_.max_rounds;
    return global_;
  }

  bool finished() const override { return finished_; }
  int round() const override { return round_; }
  const Matrix& global() const override { return global_; }
  const ConvergenceTrace& trace() const override { return trace_; }
  Matrix adjacency() const override {
    return equivalent_adjacency(MlpParams::unflatten(theta_, d_, config_.hidden_size));
  }

 private:
  int clients_;
  int d_;
  AdmmConfig config_;
  MlpParams shape_;
  Vector theta_;
  Matrix global_;
  std::vector<Matrix> betas_;
  double alpha_ = 0.0;
  double rho1_ = 0.0;
  double rho2_ = 0.0;
  int round_ = 0;
  ConvergenceTrace trace_;
  bool finished_ = false;
};

}  // namespace

AdmmResult solve_mlp_single(const Matrix& samples, const AdmmConfig& config) {
  config.validate();
  if (samples.rows() == 0) throw ArgumentError("solve_mlp_single: empty dataset");
  const int d = static_cast<int>(samples.cols());
  const int m = config.hidden_size;
  const double n = static_cast<double>(samples.rows());

  double alpha = 0.0;
  double rho1 = config.rho1_init;
  double rho2 = config.rho2_init;
  Vector theta = initial_theta(d, config);
  AdmmResult out;
  for (int it = 1; it <= config.max_rounds; ++it) {
    const auto start = Clock::now();
    const Objective objective = [&](const Vector& v, Vector& g) {
      const MlpParams p = MlpParams::unflatten(v, d, m);
      Vector h_grad, l1_grad;
      const double loss = mlp_squared_loss(p, samples, n, &g);
      const double h = mlp_acyclicity(p, &h_grad);
      const double l1 = mlp_group_l1(p, &l1_grad);
      g += config.lambda * l1_grad + (alpha + rho1 * h) * h_grad;
      return loss + config.lambda * l1 + alpha * h + 0.5 * rho1 * h * h;
    };
    SolverResult result;
    try {
      result = lbfgs_minimize(objective, theta, config.solver);
    } catch (const NumericError& e) {
      throw NumericError("round " + std::to_string(it) + ": " + e.what());
    }
    theta = result.x;
    const MlpParams params = MlpParams::unflatten(theta, d, m);

    TraceRow row;
    row.round = it;
    row.h = mlp_acyclicity(params, nullptr);
    row.objective = result.value;
    row.rho1 = rho1;
    row.rho2 = rho2;
    row.a_norm = equivalent_adjacency(params).norm();
    alpha += rho1 * row.h;
    rho1 = std::min(config.gamma1 * rho1, config.rho_max);
    rho2 = std::min(config.gamma2 * rho2, config.rho_max);
    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    out.trace.rows.push_back(row);
    if (config.keep_iterates) out.trace.iterates.push_back(as_column(theta));
    if (row.h <= config.h_tolerance) {
      out.trace.converged = true;
      break;
    }
  }
  out.theta = theta;
  out.w = equivalent_adjacency(MlpParams::unflatten(theta, d, m));
  out.graph = threshold_graph(out.w, config.threshold_tau);
  return out;
}

std::unique_ptr<ConsensusClient> make_mlp_client(int client_id, Matrix samples,
                                                 const AdmmConfig& config) {
  return std::make_unique<MlpClient>(client_id, std::move(samples), config);
}

std::unique_ptr<ConsensusServer> make_mlp_server(int clients, int d, const AdmmConfig& config) {
  return std::make_unique<MlpServer>(clients, d, config);
}

}  // namespace fbnsl
