#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fbnsl/mlp.hpp"
#include "fbnsl/numerics.hpp"
#include "fbnsl/rng.hpp"

namespace fbnsl {

/// Directed graph over nodes [0, d) without self-loops. Edges may form cycles
/// (aggregated estimates are not repaired), so acyclicity is a query.
class DirectedGraph {
 public:
  DirectedGraph() = default;
  explicit DirectedGraph(int node_count);

  int node_count() const { return static_cast<int>(adjacency_.rows()); }
  int edge_count() const;

  void add_edge(int from, int to);
  void remove_edge(int from, int to);
  bool has_edge(int from, int to) const { return adjacency_(from, to) != 0; }

  std::vector<std::pair<int, int>> edges() const;
  std::vector<int> parents(int node) const;

  /// Kahn ordering; nullopt when a directed cycle exists.
  std::optional<std::vector<int>> topological_order() const;
  bool is_acyclic() const { return topological_order().has_value(); }

  const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& adjacency() const {
    return adjacency_;
  }

  bool operator==(const DirectedGraph& other) const { return adjacency_ == other.adjacency_; }

 private:
  void check_node(int v) const;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> adjacency_;
};

struct LinearSem {
  Matrix weights;      // B, weights(i, j) is the coefficient of i in x_j
  Vector noise_scale;  // standard deviations
};

struct MlpSem {
  DirectedGraph graph;
  MlpParams params;
  Vector noise_scale;
};

struct Metrics {
  int shd = 0;
  double tpr = 0.0;
  double fdr = 0.0;
};

/// One client's horizontal slice of the data.
struct ClientDataset {
  int client_id = 0;
  Matrix samples;  // n_k × d
};

/// Exact-count Erdős–Rényi DAG: pairs are drawn uniformly and oriented along a
/// random node order.
DirectedGraph sample_er_dag(int d, int edge_count, Rng rng);

/// Edge weights uniform on [-2, -0.5] ∪ [0.5, 2]; unit noise.
LinearSem sample_linear_sem(const DirectedGraph& graph, Rng rng);

/// Ground-truth MLP model: standard-normal weights on parent columns.
MlpSem sample_mlp_sem(const DirectedGraph& graph, Rng rng, int hidden = 100);

Matrix simulate(const LinearSem& sem, int n, Rng rng);
Matrix simulate(const MlpSem& sem, int n, Rng rng);

/// Contiguous row blocks; the first n mod K clients get one extra row.
std::vector<ClientDataset> partition(const Matrix& data, int clients);

/// Subtracts column means.
Matrix center(const Matrix& data);

/// Edge i→j iff |W_ij| > tau; the diagonal is ignored.
DirectedGraph threshold_graph(const Matrix& weights, double tau);

/// Structural Hamming distance (reversal counts once), TPR and FDR.
Metrics evaluate(const DirectedGraph& estimate, const DirectedGraph& truth);

// CSV with a header row of variable names, one sample per row.
struct Dataset {
  std::vector<std::string> names;
  Matrix samples;
};

Dataset read_csv(const std::string& path);
void write_csv(const std::string& path, const Dataset& data);
Dataset parse_csv(const std::string& text, const std::string& origin = "<memory>");

/// Graph as "from,to" rows under a header.
void write_edge_list(const std::string& path, const DirectedGraph& graph);
DirectedGraph read_edge_list(const std::string& path, int node_count);

}  // namespace fbnsl
