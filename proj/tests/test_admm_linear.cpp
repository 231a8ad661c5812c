#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fbnsl/admm.hpp"
#include "fbnsl/baselines.hpp"
#include "fbnsl/error.hpp"

using namespace fbnsl;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols, double lo = -1, double hi = 1) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  }
  return m;
}

ClientState random_client(Rng& rng, int d) {
  ClientState s;
  const Matrix x = random_matrix(rng, 2 * d, d);
  s.scatter = scatter_matrix(x, 4.0 * d);
  s.beta = random_matrix(rng, d, d, -0.2, 0.2);
  s.rho2 = rng.uniform(0.01, 2.0);
  s.local_b = Matrix::Zero(d, d);
  return s;
}

}  // namespace

TEST_CASE("config defaults and validation") {
  const AdmmConfig lin = AdmmConfig::linear_defaults();
  CHECK(lin.rho1_init == 1e-3);
  CHECK(lin.rho2_init == 1e-3);
  CHECK(lin.lambda == 0.01);
  CHECK(lin.gamma1 == 1.75);
  CHECK(lin.gamma2 == 1.25);
  CHECK(lin.max_rounds == 200);
  CHECK(lin.rho_max == 1e16);
  CHECK(lin.threshold_tau == 0.3);
  CHECK(lin.consensus_tolerance_for(10) == doctest::Approx(1e-3));
  const AdmmConfig mlp = AdmmConfig::nonlinear_defaults();
  CHECK(mlp.rho1_init == 0.1);
  CHECK(mlp.lambda == 0.001);

  AdmmConfig bad = lin;
  bad.gamma1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = lin;
  bad.rho2_init = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("least squares loss") {
  Matrix x(1, 2);
  x << 1, 1;
  CHECK(least_squares_loss(Matrix::Zero(2, 2), x, 1) == doctest::Approx(1.0));
  Matrix swap(2, 2);
  swap << 0, 1, 1, 0;
  CHECK(least_squares_loss(swap, x, 1) == 0.0);
  CHECK_THROWS_AS(least_squares_loss(Matrix::Zero(3, 3), x, 1), Error);

  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Matrix data = random_matrix(rng, 7, 4);
    const Matrix b = random_matrix(rng, 4, 4);
    const double n = 10;
    const double direct = least_squares_loss(b, data, n);
    const double viaS = scatter_loss(scatter_matrix(data, n), b, nullptr);
    CHECK(std::abs(direct - viaS) <= 1e-10 * (1 + direct));
  }
}

TEST_CASE("client update examples") {
  ClientState s;
  s.scatter = Matrix::Zero(3, 3);
  s.beta = Matrix::Zero(3, 3);
  s.rho2 = 0.7;
  Rng rng(2);
  const Matrix w = random_matrix(rng, 3, 3);
  CHECK((client_update(s, w) - w).norm() <= 1e-14);

  ClientState scalar;
  scalar.scatter = Matrix::Ones(1, 1);
  scalar.beta = Matrix::Zero(1, 1);
  scalar.rho2 = 1.0;
  CHECK(client_update(scalar, Matrix::Zero(1, 1))(0, 0) == doctest::Approx(0.5));

  scalar.rho2 = 0;
  CHECK_THROWS_AS(client_update(scalar, Matrix::Zero(1, 1)), ConfigError);
}

TEST_CASE("client update is the subproblem minimizer") {
  Rng rng(13);
  SolverOptions tight;
  tight.function_tolerance = 0;
  tight.gradient_tolerance = 1e-12;
  tight.max_iterations = 5000;
  for (int t = 0; t < 25; ++t) {
    const int d = 2 + t % 9;
    const ClientState s = random_client(rng, d);
    const Matrix w = random_matrix(rng, d, d);
    const Matrix b = client_update(s, w);
    const Matrix g = client_subproblem_grad(s, w, b);
    CHECK(g.norm() <= 1e-8 * (1 + b.norm()));

    Objective f = [&](const Vector& v, Vector& grad) {
      const Eigen::Map<const Matrix> m(v.data(), d, d);
      grad = client_subproblem_grad(s, w, m).reshaped();
      return client_subproblem_value(s, w, m);
    };
    const Vector numeric = lbfgs_minimize(f, Vector::Zero(d * d), tight).x;
    CHECK((numeric.reshaped(d, d) - b).norm() <= 1e-6);
  }
}

TEST_CASE("server W-update examples") {
  Rng rng(6);
  const int d = 4;
  const Matrix b1 = random_matrix(rng, d, d);
  ServerState server;
  server.w = Matrix::Zero(d, d);
  server.rho1 = 0;
  server.rho2 = 1.0;
  server.lambda = 0;
  SolverOptions tight;
  tight.function_tolerance = 0;
  tight.gradient_tolerance = 1e-10;
  tight.max_iterations = 2000;

  std::vector<Matrix> locals{b1}, betas{Matrix::Zero(d, d)};
  CHECK((server_w_update(server, locals, betas, tight).w - b1).norm() <= 1e-6);

  locals = {b1, b1, b1};
  betas.assign(3, Matrix::Zero(d, d));
  CHECK((server_w_update(server, locals, betas, tight).w - b1).norm() <= 1e-6);

  // ℓ1 dominance: λ above K·ρ2·max|B_k| (plus the multipliers) pins W at 0.
  server.lambda = 3 * server.rho2 * b1.cwiseAbs().maxCoeff() + 1;
  const WUpdate zero = server_w_update(server, locals, betas);
  CHECK(zero.w.cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("server W-update never increases its objective") {
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    const int d = 3 + t % 4;
    ServerState server;
    server.w = random_matrix(rng, d, d, -0.5, 0.5);
    server.alpha = rng.uniform(0, 1);
    server.rho1 = rng.uniform(0.001, 1);
    server.rho2 = rng.uniform(0.001, 1);
    server.lambda = 0.01;
    std::vector<Matrix> locals, betas;
    for (int k = 0; k < 3; ++k) {
      locals.push_back(random_matrix(rng, d, d));
      betas.push_back(random_matrix(rng, d, d, -0.1, 0.1));
    }
    const double start = server_w_objective(server, locals, betas, server.w, nullptr);
    const WUpdate u = server_w_update(server, locals, betas);
    CHECK(u.objective <= start);
    CHECK(u.objective == doctest::Approx(server_w_objective(server, locals, betas, u.w, nullptr)));
  }
}

TEST_CASE("dual update") {
  ServerState server;
  server.rho1 = 0.001;
  server.rho2 = 0.5;
  // 2-cycle with h = 2 cosh(a²) - 2 = 2 at cosh(a²) = 2.
  const double a = std::sqrt(std::acosh(2.0));
  Matrix w = Matrix::Zero(2, 2);
  w(0, 1) = a;
  w(1, 0) = a;
  std::vector<ClientState> clients(1);
  clients[0].beta = Matrix::Ones(2, 2);
  clients[0].rho2 = 0.5;
  std::vector<Matrix> locals{w};
  dual_update(server, clients, w, locals, 1e16);
  CHECK(server.alpha == doctest::Approx(0.002));
  CHECK(clients[0].beta == Matrix::Ones(2, 2));
  CHECK(server.rho1 == doctest::Approx(0.00175));
  CHECK(server.rho2 == doctest::Approx(0.625));
  CHECK(clients[0].rho2 == doctest::Approx(0.625));

  server.rho1 = 1e16;
  server.rho2 = 1e16;
  dual_update(server, clients, w, locals, 1e16);
  CHECK(server.rho1 == 1e16);
  CHECK(server.rho2 == 1e16);

  Matrix moved = w;
  moved(0, 0) = 1.0;
  ServerState s2;
  s2.rho1 = 1;
  s2.rho2 = 2;
  std::vector<ClientState> c2(1);
  c2[0].beta = Matrix::Zero(2, 2);
  c2[0].rho2 = 2;
  std::vector<Matrix> l2{moved};
  dual_update(s2, c2, w, l2, 1e16);
  CHECK(c2[0].beta(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("run_admm recovers a 3-node chain") {
  Matrix b = Matrix::Zero(3, 3);
  b(0, 1) = 1.5;
  b(1, 2) = -1.5;
  const LinearSem sem{b, Vector::Ones(3)};
  const Matrix data = simulate(sem, 1000, Rng(17));
  auto parts = partition(data, 2);
  for (auto& p : parts) p.samples = center(p.samples);
  const AdmmResult r = run_admm(parts, AdmmConfig::linear_defaults());
  DirectedGraph truth(3);
  truth.add_edge(0, 1);
  truth.add_edge(1, 2);
  CHECK(r.graph == truth);
  CHECK(r.trace.converged);
  CHECK(r.trace.rows.back().h <= 1e-8);
}

TEST_CASE("run_admm on zero data gives W = 0") {
  std::vector<ClientDataset> parts{{0, Matrix::Zero(5, 3)}, {1, Matrix::Zero(5, 3)}};
  const AdmmResult r = run_admm(parts, AdmmConfig::linear_defaults());
  CHECK(r.w.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(r.graph.edge_count() == 0);
}

TEST_CASE("run_admm preconditions") {
  std::vector<ClientDataset> uncentered{{0, Matrix::Constant(4, 2, 3.0)}};
  CHECK_THROWS_AS(run_admm(uncentered, AdmmConfig::linear_defaults()), ArgumentError);
  std::vector<ClientDataset> empty{{0, Matrix(0, 2)}};
  CHECK_THROWS_AS(run_admm(empty, AdmmConfig::linear_defaults()), ArgumentError);
  CHECK_THROWS_AS(run_admm({}, AdmmConfig::linear_defaults()), ArgumentError);
}

TEST_CASE("trace schedule and csv") {
  const DirectedGraph g = sample_er_dag(5, 5, Rng(3));
  const Matrix data = simulate(sample_linear_sem(g, Rng(4)), 60, Rng(5));
  auto parts = partition(data, 3);
  for (auto& p : parts) p.samples = center(p.samples);
  const AdmmResult r = run_admm(parts, AdmmConfig::linear_defaults());
  const auto& rows = r.trace.rows;
  REQUIRE(!rows.empty());
  CHECK(rows.size() <= 200);
  CHECK(rows.front().rho1 == 1e-3);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].round == rows[i - 1].round + 1);
    CHECK(rows[i].rho1 == std::min(rows[i - 1].rho1 * 1.75, 1e16));
    CHECK(rows[i].rho2 == std::min(rows[i - 1].rho2 * 1.25, 1e16));
  }
  const std::string csv = trace_csv(r.trace, false);
  CHECK(csv.rfind("round,h,consensus_residual,objective,rho1,rho2,wall_ms\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(rows.size()) + 1);
}
