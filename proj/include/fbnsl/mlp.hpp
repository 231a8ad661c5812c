#pragma once

#include <cstdint>

#include "fbnsl/numerics.hpp"
#include "fbnsl/rng.hpp"

namespace fbnsl {

/// Per-variable one-hidden-layer sigmoid MLPs: output_j = w2ʲ·σ(W1ʲ x + b1ʲ) + b2ʲ.
///
/// Flattened layout, variable by variable: W1ʲ (hidden × d, row-major), b1ʲ, w2ʲ, b2ʲ.
class MlpParams {
 public:
  MlpParams() = default;
  MlpParams(int dim, int hidden);

  int dim() const { return dim_; }
  int hidden() const { return hidden_; }

  static Eigen::Index parameter_count(int dim, int hidden);
  Eigen::Index parameter_count() const { return parameter_count(dim_, hidden_); }

  Matrix& first_weights(int j) { return first_weights_[j]; }
  const Matrix& first_weights(int j) const { return first_weights_[j]; }
  Eigen::Ref<Vector> first_bias(int j) { return first_bias_.col(j); }
  Eigen::Ref<const Vector> first_bias(int j) const { return first_bias_.col(j); }
  Eigen::Ref<Vector> output_weights(int j) { return output_weights_.col(j); }
  Eigen::Ref<const Vector> output_weights(int j) const { return output_weights_.col(j); }
  double& output_bias(int j) { return output_bias_[j]; }
  double output_bias(int j) const { return output_bias_[j]; }

  Vector flatten() const;
  static MlpParams unflatten(const Vector& flat, int dim, int hidden);

  /// Zeroes W1ʲ's own-input column for every j.
  void mask_self_inputs();
  bool all_finite() const;

  /// Estimation init: first-layer weights uniform in [-scale, scale] on
  /// non-self columns, everything else zero.
  static MlpParams random_init(int dim, int hidden, Rng rng, double scale = 0.1);

 private:
  int dim_ = 0;
  int hidden_ = 0;
  std::vector<Matrix> first_weights_;  // d entries, each hidden × d
  Matrix first_bias_;                  // hidden × d
  Matrix output_weights_;              // hidden × d
  Vector output_bias_;                 // d
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Vector mlp_forward(const MlpParams& params, const Vector& x);

/// Row-wise forward pass over an n × d sample matrix.
Matrix mlp_predict(const MlpParams& params, const Matrix& samples);

/// A_ij = ‖column i of W1ʲ‖₂, A_jj = 0.
Matrix equivalent_adjacency(const MlpParams& params);

/// (1 / (2·total_n)) Σᵢ ‖xᵢ − MLP(xᵢ)‖². When grad is non-null it receives
/// the flattened gradient with self-input columns zeroed.
double mlp_squared_loss(const MlpParams& params, const Matrix& samples, double total_n,
                        Vector* grad);

/// h(A(θ)) with its gradient w.r.t. the flattened parameters. A∘A is a sum
/// of squares of first-layer weights, so the term is smooth in θ.
double mlp_acyclicity(const MlpParams& params, Vector* grad);

/// Σ_{i≠j} A_ij with the group-lasso subgradient (zero on all-zero columns).
double mlp_group_l1(const MlpParams& params, Vector* grad);

/// Flat offset of W1ʲ(row, col).
Eigen::Index first_weight_offset(int dim, int hidden, int j, int row, int col);

}  // namespace fbnsl
