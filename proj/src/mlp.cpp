#include "fbnsl/mlp.hpp"

namespace fbnsl {

namespace {

Eigen::Index block_size(int dim, int hidden) {
  return static_cast<Eigen::Index>(hidden) * dim + 2 * hidden + 1;
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Views into one variable's block of a flat parameter/gradient vector.
struct BlockView {
  Eigen::Map<RowMajor> w1;
  Eigen::Map<Vector> b1;
  Eigen::Map<Vector> w2;
  double& b2;
};

BlockView view(Vector& flat, int dim, int hidden, int j) {
  double* base = flat.data() + j * block_size(dim, hidden);
  double* b1 = base + static_cast<Eigen::Index>(hidden) * dim;
  return {Eigen::Map<RowMajor>(base, hidden, dim), Eigen::Map<Vector>(b1, hidden),
          Eigen::Map<Vector>(b1 + hidden, hidden), *(b1 + 2 * hidden)};
}

}  // namespace

MlpParams::MlpParams(int dim, int hidden) : dim_(dim), hidden_(hidden) {
  if (dim < 1 || hidden < 1) throw ArgumentError("MlpParams: dim and hidden must be >= 1");
  first_weights_.assign(dim, Matrix::Zero(hidden, dim));
  first_bias_ = Matrix::Zero(hidden, dim);
  output_weights_ = Matrix::Zero(hidden, dim);
  output_bias_ = Vector::Zero(dim);
}

Eigen::Index MlpParams::parameter_count(int dim, int hidden) {
  return static_cast<Eigen::Index>(dim) * block_size(dim, hidden);
}

Eigen::Index first_weight_offset(int dim, int hidden, int j, int row, int col) {
  return j * block_size(dim, hidden) + static_cast<Eigen::Index>(row) * dim + col;
}

Vector MlpParams::flatten() const {
  Vector flat(parameter_count());
  for (int j = 0; j < dim_; ++j) {
    BlockView b = view(flat, dim_, hidden_, j);
    b.w1 = first_weights_[j];
    b.b1 = first_bias_.col(j);
    b.w2 = output_weights_.col(j);
    b.b2 = output_bias_[j];
  }
  return flat;
}

MlpParams MlpParams::unflatten(const Vector& flat, int dim, int hidden) {
  MlpParams p(dim, hidden);
  if (flat.size() != p.parameter_count()) {
    throw DimensionError("MlpParams::unflatten: expected " +
                         std::to_string(p.parameter_count()) + " values, got " +
                         std::to_string(flat.size()));
  }
  Vector copy = flat;
  for (int j = 0; j < dim; ++j) {
    BlockView b = view(copy, dim, hidden, j);
    p.first_weights_[j] = b.w1;
    p.first_bias_.col(j) = b.b1;
    p.output_weights_.col(j) = b.w2;
    p.output_bias_[j] = b.b2;
  }
  return p;
}

void MlpParams::mask_self_inputs() {
  for (int j = 0; j < dim_; ++j) first_weights_[j].col(j).setZero();
}

bool MlpParams::all_finite() const {
  for (const auto& w : first_weights_) {
    if (!fbnsl::all_finite(w)) return false;
  }
  return fbnsl::all_finite(first_bias_) && fbnsl::all_finite(output_weights_) &&
         fbnsl::all_finite(output_bias_);
}

MlpParams MlpParams::random_init(int dim, int hidden, Rng rng, double scale) {
  MlpParams p(dim, hidden);
  for (int j = 0; j < dim; ++j) {
    Matrix& w = p.first_weights_[j];
    for (int r = 0; r < hidden; ++r) {
      for (int c = 0; c < dim; ++c) w(r, c) = rng.uniform(-scale, scale);
    }
  }
  p.mask_self_inputs();
  return p;
}

Vector mlp_forward(const MlpParams& params, const Vector& x) {
  if (x.size() != params.dim()) {
    throw ArgumentError("mlp_forward: input has " + std::to_string(x.size()) +
                        " entries, expected " + std::to_string(params.dim()));
  }
  Vector out(params.dim());
  for (int j = 0; j < params.dim(); ++j) {
    const Vector z = params.first_weights(j) * x + params.first_bias(j);
    out[j] = params.output_weights(j).dot(z.unaryExpr(&sigmoid)) + params.output_bias(j);
  }
  return out;
}

Matrix mlp_predict(const MlpParams& params, const Matrix& samples) {
  if (samples.cols() != params.dim()) {
    throw ArgumentError("mlp_predict: samples have " + std::to_string(samples.cols()) +
                        " columns, expected " + std::to_string(params.dim()));
  }
  Matrix out(samples.rows(), params.dim());
  for (int j = 0; j < params.dim(); ++j) {
    Matrix z = samples * params.first_weights(j).transpose();
    z.rowwise() += params.first_bias(j).transpose();
    out.col(j) = z.unaryExpr(&sigmoid) * params.output_weights(j);
    out.col(j).array() += params.output_bias(j);
  }
  return out;
}

Matrix equivalent_adjacency(const MlpParams& params) {
  const int d = params.dim();
  Matrix a(d, d);
  for (int j = 0; j < d; ++j) {
    a.col(j) = params.first_weights(j).colwise().norm().transpose();
    a(j, j) = 0.0;
  }
  return a;
}

double mlp_squared_loss(const MlpParams& params, const Matrix& samples, double total_n,
                        Vector* grad) {
  const int d = params.dim();
  const int m = params.hidden();
  if (samples.cols() != d) throw ArgumentError("mlp_squared_loss: dimension mismatch");
  if (!(total_n > 0)) throw ArgumentError("mlp_squared_loss: total_n must be positive");
  if (grad) grad->setZero(params.parameter_count());

  double loss = 0.0;
  for (int j = 0; j < d; ++j) {
    Matrix hidden = samples * params.first_weights(j).transpose();
    hidden.rowwise() += params.first_bias(j).transpose();
    hidden = hidden.unaryExpr(&sigmoid);
    Vector residual = hidden * params.output_weights(j);
    residual.array() += params.output_bias(j) - samples.col(j).array();
    loss += residual.squaredNorm();
    if (!grad) continue;

    BlockView g = view(*grad, d, m, j);
    residual /= total_n;
    g.w2 = hidden.transpose() * residual;
    g.b2 = residual.sum();
    // dL/dz = r w2ᵀ ∘ σ'(z)
    Matrix dz = (residual * params.output_weights(j).transpose()).cwiseProduct(
        hidden.cwiseProduct((1.0 - hidden.array()).matrix()));
    g.w1 = dz.transpose() * samples;
    g.w1.col(j).setZero();
    g.b1 = dz.colwise().sum().transpose();
  }
  return loss / (2.0 * total_n);
}

double mlp_acyclicity(const MlpParams& params, Vector* grad) {
  const int d = params.dim();
  const int m = params.hidden();
  Matrix squared(d, d);
  for (int j = 0; j < d; ++j) {
    squared.col(j) = params.first_weights(j).colwise().squaredNorm().transpose();
    squared(j, j) = 0.0;
  }
  // Off-diagonal entries of exp(S) - I and exp(S) coincide; only those feed the gradient.
  const Matrix e = matexpm1(squared);
  const double h = std::max(0.0, e.trace());
  if (grad) {
    grad->setZero(params.parameter_count());
    for (int j = 0; j < d; ++j) {
      BlockView g = view(*grad, d, m, j);
      for (int i = 0; i < d; ++i) {
        if (i == j) continue;
        g.w1.col(i) = 2.0 * e(j, i) * params.first_weights(j).col(i);
      }
    }
  }
  return h;
}

double mlp_group_l1(const MlpParams& params, Vector* grad) {
  const int d = params.dim();
  const int m = params.hidden();
  if (grad) grad->setZero(params.parameter_count());
  double total = 0.0;
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) {
      if (i == j) continue;
      const double norm = params.first_weights(j).col(i).norm();
      total += norm;
      if (grad && norm > 0.0) {
        view(*grad, d, m, j).w1.col(i) = params.first_weights(j).col(i) / norm;
      }
    }
  }
  return total;
}

}  // namespace fbnsl
