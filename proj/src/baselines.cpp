#include "fbnsl/baselines.hpp"

#include <algorithm>
#include <limits>

namespace fbnsl {

NotearsSolution notears_from_scatter(const Matrix& scatter, double lambda,
                                     const AdmmConfig& config, const SolverOptions& solver) {
  config.validate();
  require_square(scatter, "notears");
  if (!(lambda >= 0)) throw ConfigError("notears: lambda must be >= 0");
  const Eigen::Index d = scatter.rows();

  double alpha = 0.0;
  double rho1 = config.rho1_init;
  NotearsSolution out;
  Vector x = Vector::Zero(d * d);
  for (int it = 1; it <= config.max_rounds; ++it) {
    const Objective objective = [&](const Vector& v, Vector& g) {
      const Eigen::Map<const Matrix> b(v.data(), d, d);
      Matrix loss_grad, h_grad;
      const double loss = scatter_loss(scatter, b, &loss_grad);
      const double h = acyclicity_with_grad(b, h_grad);
      const Matrix grad = loss_grad + (alpha + rho1 * h) * h_grad;
      g = grad.reshaped();
      return loss + alpha * h + 0.5 * rho1 * h * h;
    };
    x = owlqn_minimize(objective, lambda, x, solver).x;
    const Eigen::Map<const Matrix> b(x.data(), d, d);
    out.h = acyclicity(b);
    out.iterations = it;
    alpha += rho1 * out.h;
    rho1 = std::min(config.gamma1 * rho1, config.rho_max);
    if (out.h <= config.h_tolerance) {
      out.converged = true;
      break;
    }
  }
  out.w = x.reshaped(d, d);
  return out;
}

LocalEstimate notears_local(const Matrix& samples, double lambda, const AdmmConfig& config,
                            int client_id) {
  if (samples.rows() == 0) throw ArgumentError("notears_local: empty dataset");
  const Matrix scatter = scatter_matrix(samples, static_cast<double>(samples.rows()));
  const NotearsSolution sol = notears_from_scatter(scatter, lambda, config, config.solver);
  return {client_id, sol.w, threshold_graph(sol.w, config.threshold_tau), sol.converged,
          sol.iterations};
}

LocalEstimate notears_mlp_local(const Matrix& samples, const AdmmConfig& config, int client_id) {
  if (samples.rows() == 0) throw ArgumentError("notears_mlp_local: empty dataset");
  const AdmmResult r = solve_mlp_single(samples, config);
  return {client_id, r.w, r.graph, r.trace.converged, static_cast<int>(r.trace.rows.size())};
}

std::vector<LocalEstimate> estimate_each(std::span<const ClientDataset> datasets,
                                         ModelFamily family, const AdmmConfig& config) {
  std::vector<LocalEstimate> out;
  out.reserve(datasets.size());
  for (const auto& ds : datasets) {
    out.push_back(family == ModelFamily::kLinear
                      ? notears_local(ds.samples, config.lambda, config, ds.client_id)
                      : notears_mlp_local(ds.samples, config, ds.client_id));
  }
  return out;
}

namespace {

void require_estimates(std::span<const LocalEstimate> estimates, const char* what) {
  if (estimates.empty()) throw ArgumentError(std::string(what) + ": no estimates");
  const int d = estimates.front().graph.node_count();
  for (const auto& e : estimates) {
    if (e.graph.node_count() != d || e.weighted.rows() != d) {
      throw ArgumentError(std::string(what) + ": estimates disagree on the variable count");
    }
  }
}

}  // namespace

DirectedGraph aggregate_voting(std::span<const LocalEstimate> estimates) {
  require_estimates(estimates, "aggregate_voting");
  const int d = estimates.front().graph.node_count();
  Eigen::MatrixXi votes = Eigen::MatrixXi::Zero(d, d);
  for (const auto& e : estimates) votes += e.graph.adjacency().cast<int>();
  DirectedGraph g(d);
  const auto k = static_cast<int>(estimates.size());
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (2 * votes(i, j) > k) g.add_edge(i, j);
    }
  }
  return g;
}

DirectedGraph aggregate_average(std::span<const LocalEstimate> estimates, double tau) {
  require_estimates(estimates, "aggregate_average");
  Matrix mean = Matrix::Zero(estimates.front().weighted.rows(), estimates.front().weighted.cols());
  for (const auto& e : estimates) mean += e.weighted;
  mean /= static_cast<double>(estimates.size());
  return threshold_graph(mean, tau);
}

DirectedGraph select_best(std::span<const LocalEstimate> estimates, const DirectedGraph& truth) {
  require_estimates(estimates, "select_best");
  const LocalEstimate* best = nullptr;
  int best_shd = std::numeric_limits<int>::max();
  for (const auto& e : estimates) {
    const int shd = evaluate(e.graph, truth).shd;
    if (shd < best_shd || (shd == best_shd && e.client_id < best->client_id)) {
      best = &e;
      best_shd = shd;
    }
  }
  return best->graph;
}

Matrix pool_rows(std::span<const ClientDataset> datasets) {
  if (datasets.empty()) throw ArgumentError("pool_rows: no datasets");
  Eigen::Index rows = 0;
  const Eigen::Index d = datasets.front().samples.cols();
  for (const auto& ds : datasets) {
    if (ds.samples.cols() != d) throw ArgumentError("pool_rows: clients disagree on the variable count");
    rows += ds.samples.rows();
  }
  Matrix pooled(rows, d);
  Eigen::Index r = 0;
  for (const auto& ds : datasets) {
    pooled.middleRows(r, ds.samples.rows()) = ds.samples;
    r += ds.samples.rows();
  }
  return pooled;
}

LocalEstimate run_alldata(std::span<const ClientDataset> datasets, double lambda,
                          const AdmmConfig& config) {
  const Matrix pooled = center(pool_rows(datasets));
  const Matrix scatter = scatter_matrix(pooled, static_cast<double>(pooled.rows()));
  const NotearsSolution sol = notears_from_scatter(scatter, lambda, config, config.central_solver);
  return {0, sol.w, threshold_graph(sol.w, config.threshold_tau), sol.converged, sol.iterations};
}

LocalEstimate run_alldata_mlp(std::span<const ClientDataset> datasets, const AdmmConfig& config) {
  return notears_mlp_local(center(pool_rows(datasets)), config);
}

}  // namespace fbnsl
