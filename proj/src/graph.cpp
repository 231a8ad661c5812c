#include "fbnsl/graph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace fbnsl {

DirectedGraph::DirectedGraph(int node_count) {
  if (node_count < 0) throw ArgumentError("DirectedGraph: negative node count");
  adjacency_.setZero(node_count, node_count);
}

void DirectedGraph::check_node(int v) const {
  if (v < 0 || v >= node_count()) {
    throw ArgumentError("DirectedGraph: node " + std::to_string(v) + " out of range [0, " +
                        std::to_string(node_count()) + ")");
  }
}

int DirectedGraph::edge_count() const {
  return static_cast<int>(adjacency_.cast<int>().sum());
}

void DirectedGraph::add_edge(int from, int to) {
  check_node(from);
  check_node(to);
  if (from == to) throw ArgumentError("DirectedGraph: self-loop on node " + std::to_string(from));
  adjacency_(from, to) = 1;
}

void DirectedGraph::remove_edge(int from, int to) {
  check_node(from);
  check_node(to);
  adjacency_(from, to) = 0;
}

std::vector<std::pair<int, int>> DirectedGraph::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < node_count(); ++i) {
    for (int j = 0; j < node_count(); ++j) {
      if (adjacency_(i, j)) out.emplace_back(i, j);
    }
  }
  return out;
}

std::vector<int> DirectedGraph::parents(int node) const {
  check_node(node);
  std::vector<int> out;
  for (int i = 0; i < node_count(); ++i) {
    if (adjacency_(i, node)) out.push_back(i);
  }
  return out;
}

std::optional<std::vector<int>> DirectedGraph::topological_order() const {
  const int d = node_count();
  std::vector<int> indegree(d, 0);
  for (int j = 0; j < d; ++j) indegree[j] = static_cast<int>(parents(j).size());
  std::vector<int> ready;
  for (int j = d - 1; j >= 0; --j) {
    if (indegree[j] == 0) ready.push_back(j);
  }
  std::vector<int> order;
  order.reserve(d);
  while (!ready.empty()) {
    const int v = ready.back();
    ready.pop_back();
    order.push_back(v);
    for (int j = d - 1; j >= 0; --j) {
      if (adjacency_(v, j) && --indegree[j] == 0) ready.push_back(j);
    }
  }
  if (static_cast<int>(order.size()) != d) return std::nullopt;
  return order;
}

DirectedGraph sample_er_dag(int d, int edge_count, Rng rng) {
  if (d < 0) throw ArgumentError("sample_er_dag: d must be >= 0");
  const long max_edges = static_cast<long>(d) * (d - 1) / 2;
  if (edge_count < 0 || edge_count > max_edges) {
    throw ArgumentError("sample_er_dag: edge_count " + std::to_string(edge_count) +
                        " outside [0, " + std::to_string(max_edges) + "]");
  }
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());

  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(max_edges);
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) pairs.emplace_back(a, b);
  }
  std::shuffle(pairs.begin(), pairs.end(), rng.engine());

  DirectedGraph g(d);
  for (int e = 0; e < edge_count; ++e) {
    g.add_edge(order[pairs[e].first], order[pairs[e].second]);
  }
  return g;
}

LinearSem sample_linear_sem(const DirectedGraph& graph, Rng rng) {
  const int d = graph.node_count();
  LinearSem sem{Matrix::Zero(d, d), Vector::Ones(d)};
  for (const auto& [i, j] : graph.edges()) {
    const double magnitude = rng.uniform(0.5, 2.0);
    sem.weights(i, j) = rng.coin() ? magnitude : -magnitude;
  }
  return sem;
}

MlpSem sample_mlp_sem(const DirectedGraph& graph, Rng rng, int hidden) {
  const int d = graph.node_count();
  MlpSem sem{graph, MlpParams(d, hidden), Vector::Ones(d)};
  for (int j = 0; j < d; ++j) {
    for (int i : graph.parents(j)) {
      for (int h = 0; h < hidden; ++h) sem.params.first_weights(j)(h, i) = rng.normal();
    }
    for (int h = 0; h < hidden; ++h) {
      sem.params.first_bias(j)[h] = rng.normal();
      sem.params.output_weights(j)[h] = rng.normal();
    }
  }
  return sem;
}

namespace {

std::vector<int> require_order(const DirectedGraph& g) {
  auto order = g.topological_order();
  if (!order) throw ModelError("simulate: the model's graph contains a directed cycle");
  return *order;
}

DirectedGraph support_of(const Matrix& weights) {
  DirectedGraph g(static_cast<int>(weights.rows()));
  for (int i = 0; i < weights.rows(); ++i) {
    for (int j = 0; j < weights.cols(); ++j) {
      if (weights(i, j) != 0.0) {
        if (i == j) throw ModelError("simulate: self-loop in weights at node " + std::to_string(i));
        g.add_edge(i, j);
      }
    }
  }
  return g;
}

}  // namespace

Matrix simulate(const LinearSem& sem, int n, Rng rng) {
  if (n < 1) throw ArgumentError("simulate: n must be >= 1");
  require_square(sem.weights, "simulate");
  const auto order = require_order(support_of(sem.weights));
  const int d = static_cast<int>(sem.weights.rows());
  Matrix x = Matrix::Zero(n, d);
  for (int j : order) {
    Vector noise(n);
    for (int r = 0; r < n; ++r) noise[r] = sem.noise_scale[j] * rng.normal();
    x.col(j) = x * sem.weights.col(j) + noise;
  }
  return x;
}

Matrix simulate(const MlpSem& sem, int n, Rng rng) {
  if (n < 1) throw ArgumentError("simulate: n must be >= 1");
  const auto order = require_order(sem.graph);
  const int d = sem.params.dim();
  Matrix x = Matrix::Zero(n, d);
  for (int j : order) {
    Matrix z = x * sem.params.first_weights(j).transpose();
    z.rowwise() += sem.params.first_bias(j).transpose();
    Vector out = z.unaryExpr(&sigmoid) * sem.params.output_weights(j);
    for (int r = 0; r < n; ++r) {
      x(r, j) = out[r] + sem.params.output_bias(j) + sem.noise_scale[j] * rng.normal();
    }
  }
  return x;
}

std::vector<ClientDataset> partition(const Matrix& data, int clients) {
  if (clients < 1) throw ArgumentError("partition: K must be >= 1");
  const Eigen::Index n = data.rows();
  if (n < clients) {
    throw ArgumentError("partition: " + std::to_string(n) + " samples cannot cover " +
                        std::to_string(clients) + " clients");
  }
  std::vector<ClientDataset> out;
  out.reserve(clients);
  const Eigen::Index base = n / clients;
  const Eigen::Index extra = n % clients;
  Eigen::Index row = 0;
  for (int k = 0; k < clients; ++k) {
    const Eigen::Index size = base + (k < extra ? 1 : 0);
    out.push_back({k, data.middleRows(row, size)});
    row += size;
  }
  return out;
}

Matrix center(const Matrix& data) {
  if (data.rows() < 1) throw ArgumentError("center: no samples");
  const Eigen::RowVectorXd mean = data.colwise().mean();
  return data.rowwise() - mean;
}

DirectedGraph threshold_graph(const Matrix& weights, double tau) {
  require_square(weights, "threshold_graph");
  if (!(tau >= 0)) throw ArgumentError("threshold_graph: tau must be >= 0");
  DirectedGraph g(static_cast<int>(weights.rows()));
  for (int i = 0; i < weights.rows(); ++i) {
    for (int j = 0; j < weights.cols(); ++j) {
      if (i != j && std::abs(weights(i, j)) > tau) g.add_edge(i, j);
    }
  }
  return g;
}

Metrics evaluate(const DirectedGraph& estimate, const DirectedGraph& truth) {
  if (estimate.node_count() != truth.node_count()) {
    throw ArgumentError("evaluate: node counts differ (" + std::to_string(estimate.node_count()) +
                        " vs " + std::to_string(truth.node_count()) + ")");
  }
  const int d = truth.node_count();
  int predicted = 0, correct = 0, reversed = 0, extra = 0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (!estimate.has_edge(i, j)) continue;
      ++predicted;
      if (truth.has_edge(i, j)) {
        ++correct;
      } else if (truth.has_edge(j, i)) {
        ++reversed;
      } else {
        ++extra;
      }
    }
  }
  // One error per unordered pair whose edge set differs: a reversal, an extra
  // or a missing edge each count once, and the count is symmetric.
  int shd = 0;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      shd += estimate.has_edge(i, j) != truth.has_edge(i, j) ||
             estimate.has_edge(j, i) != truth.has_edge(j, i);
    }
  }
  Metrics m;
  m.shd = shd;
  const int true_edges = truth.edge_count();
  m.tpr = true_edges == 0 ? 1.0 : static_cast<double>(correct) / true_edges;
  m.fdr = static_cast<double>(reversed + extra) / std::max(1, predicted);
  return m;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Dataset parse_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  Dataset ds;
  std::vector<double> values;
  int line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (header) {
      for (auto f : fields) {
        if (f.empty()) throw IoError(origin + ":1: empty variable name in header");
        ds.names.emplace_back(f);
      }
      header = false;
      continue;
    }
    if (fields.size() != ds.names.size()) {
      throw IoError(origin + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(ds.names.size()) + " fields, got " +
                    std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto f = fields[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw IoError(origin + ":" + std::to_string(line_no) + ": missing or invalid value in column '" +
                      ds.names[c] + "'");
      }
      values.push_back(v);
    }
  }
  if (header) throw IoError(origin + ": no header row");
  const auto cols = static_cast<Eigen::Index>(ds.names.size());
  const Eigen::Index rows = cols == 0 ? 0 : static_cast<Eigen::Index>(values.size()) / cols;
  ds.samples = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), rows, cols);
  return ds;
}

Dataset read_csv(const std::string& path) { return parse_csv(slurp(path), path); }

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (std::size_t c = 0; c < data.names.size(); ++c) out << (c ? "," : "") << data.names[c];
  out << '\n';
  out.precision(17);
  for (Eigen::Index r = 0; r < data.samples.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.samples.cols(); ++c) {
      out << (c ? "," : "") << data.samples(r, c);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

void write_edge_list(const std::string& path, const DirectedGraph& graph) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "from,to\n";
  for (const auto& [i, j] : graph.edges()) out << i << ',' << j << '\n';
  if (!out) throw IoError("write failed for " + path);
}

DirectedGraph read_edge_list(const std::string& path, int node_count) {
  const Dataset ds = parse_csv(slurp(path), path);
  if (ds.samples.cols() != 2) throw IoError(path + ": edge list needs exactly two columns");
  DirectedGraph g(node_count);
  for (Eigen::Index r = 0; r < ds.samples.rows(); ++r) {
    g.add_edge(static_cast<int>(ds.samples(r, 0)), static_cast<int>(ds.samples(r, 1)));
  }
  return g;
}

}  // namespace fbnsl
