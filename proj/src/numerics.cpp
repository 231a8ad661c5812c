#include "fbnsl/numerics.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <sstream>

namespace fbnsl {

Matrix solve_spd_linear(const Matrix& a, const Matrix& c) {
  require_square(a, "solve_spd_linear");
  if (c.rows() != a.rows()) {
    throw DimensionError("solve_spd_linear: right-hand side has " + std::to_string(c.rows()) +
                         " rows, expected " + std::to_string(a.rows()));
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw NotPositiveDefiniteError("solve_spd_linear: matrix is not symmetric");
  }
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError("solve_spd_linear: Cholesky factorization failed");
  }
  return llt.solve(c);
}

void SolverOptions::validate() const {
  if (max_iterations < 1) throw ConfigError("solver: max_iterations must be >= 1");
  if (!(gradient_tolerance > 0)) throw ConfigError("solver: gradient_tolerance must be > 0");
  if (history_size < 3 || history_size > 50) {
    throw ConfigError("solver: history_size must lie in [3, 50]");
  }
  if (!(function_tolerance >= 0)) throw ConfigError("solver: function_tolerance must be >= 0");
}

const char* to_string(SolverStatus status) {
  switch (status) {
    case SolverStatus::kGradientConverged: return "gradient-converged";
    case SolverStatus::kFunctionConverged: return "function-converged";
    case SolverStatus::kMaxIterations: return "max-iterations";
    case SolverStatus::kLineSearchFailed: return "line-search-failed";
  }
  return "unknown";
}

namespace {

[[noreturn]] void throw_nan(int iteration, const Vector& x) {
  std::ostringstream os;
  os << "lbfgs: objective returned NaN at iteration " << iteration << ", x = [";
  const Eigen::Index shown = std::min<Eigen::Index>(x.size(), 8);
  for (Eigen::Index i = 0; i < shown; ++i) os << (i ? ", " : "") << x[i];
  if (shown < x.size()) os << ", ...";
  os << "]";
  throw NumericError(os.str());
}

struct CurvaturePair {
  Vector s;
  Vector y;
  double rho;
};

}  // namespace

SolverResult lbfgs_minimize(const Objective& objective, const Vector& x0,
                            const SolverOptions& options) {
  options.validate();
  constexpr double kArmijo = 1e-4;
  constexpr double kShrink = 0.5;
  constexpr int kMaxBacktracks = 60;

  SolverResult out;
  out.x = x0;
  out.gradient = Vector::Zero(x0.size());
  out.value = objective(out.x, out.gradient);
  if (std::isnan(out.value) || out.gradient.hasNaN()) throw_nan(0, out.x);
  if (!std::isfinite(out.value) || out.gradient.size() != x0.size()) {
    throw NumericError("lbfgs: objective is not finite at the starting point");
  }

  std::deque<CurvaturePair> history;
  Vector x = out.x;
  Vector g = out.gradient;
  double f = out.value;
  Vector x_trial(x.size());
  Vector g_trial(x.size());

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    out.iterations = iter - 1;
    if (g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
      out.status = SolverStatus::kGradientConverged;
      return out;
    }

    // Two-loop recursion.
    Vector q = g;
    std::vector<double> alphas(history.size());
    for (std::size_t i = history.size(); i-- > 0;) {
      alphas[i] = history[i].rho * history[i].s.dot(q);
      q -= alphas[i] * history[i].y;
    }
    if (!history.empty()) {
      const auto& last = history.back();
      q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t i = 0; i < history.size(); ++i) {
      const double beta = history[i].rho * history[i].y.dot(q);
      q += (alphas[i] - beta) * history[i].s;
    }
    Vector direction = -q;
    double slope = g.dot(direction);
    if (!(slope < 0)) {
      history.clear();
      direction = -g;
      slope = -g.squaredNorm();
    }

    double step = history.empty() ? std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;
    bool accepted = false;
    double f_trial = std::numeric_limits<double>::infinity();
    for (int bt = 0; bt < kMaxBacktracks; ++bt) {
      x_trial = x + step * direction;
      try {
        f_trial = objective(x_trial, g_trial);
      } catch (const NumericRangeError&) {
        f_trial = std::numeric_limits<double>::infinity();
      }
      if (std::isnan(f_trial) || (std::isfinite(f_trial) && g_trial.hasNaN())) {
        throw_nan(iter, x_trial);
      }
      if (std::isfinite(f_trial) && f_trial <= f + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= kShrink;
    }

    if (!accepted) {
      if (!history.empty()) {
        // Retry once from steepest descent before giving up.
        history.clear();
        --iter;
        continue;
      }
      out.status = SolverStatus::kLineSearchFailed;
      return out;
    }

    Vector s = x_trial - x;
    Vector y = g_trial - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm() && sy > 0) {
      history.push_back({std::move(s), std::move(y), 1.0 / sy});
      if (static_cast<int>(history.size()) > options.history_size) history.pop_front();
    }

    const double decrease = f - f_trial;
    x = x_trial;
    g = g_trial;
    f = f_trial;
    if (f < out.value) {
      out.x = x;
      out.value = f;
      out.gradient = g;
    }
    out.iterations = iter;

    if (decrease <= options.function_tolerance * std::max(1.0, std::abs(f))) {
      out.status = g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance
                       ? SolverStatus::kGradientConverged
                       : SolverStatus::kFunctionConverged;
      return out;
    }
  }
  out.status = out.gradient.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance
                   ? SolverStatus::kGradientConverged
                   : SolverStatus::kMaxIterations;
  return out;
}

Vector l1_pseudo_gradient(const Vector& x, const Vector& smooth_grad, double l1_weight) {
  Vector pg(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double g = smooth_grad[i];
    if (x[i] > 0) {
      pg[i] = g + l1_weight;
    } else if (x[i] < 0) {
      pg[i] = g - l1_weight;
    } else if (g + l1_weight < 0) {
      pg[i] = g + l1_weight;
    } else if (g - l1_weight > 0) {
      pg[i] = g - l1_weight;
    } else {
      pg[i] = 0.0;
    }
  }
  return pg;
}

SolverResult owlqn_minimize(const Objective& smooth, double l1_weight, const Vector& x0,
                            const SolverOptions& options) {
  options.validate();
  if (!(l1_weight >= 0)) throw ArgumentError("owlqn: l1 weight must be >= 0");
  constexpr double kArmijo = 1e-4;
  constexpr double kShrink = 0.5;
  constexpr int kMaxBacktracks = 60;

  auto full = [&](const Vector& x, Vector& g, int iter) {
    double f;
    try {
      f = smooth(x, g);
    } catch (const NumericRangeError&) {
      return std::numeric_limits<double>::infinity();
    }
    if (std::isnan(f) || (std::isfinite(f) && g.hasNaN())) throw_nan(iter, x);
    return f + l1_weight * x.lpNorm<1>();
  };

  SolverResult out;
  Vector x = x0;
  Vector g(x.size());
  double f = full(x, g, 0);
  if (!std::isfinite(f) || g.size() != x0.size()) {
    throw NumericError("owlqn: objective is not finite at the starting point");
  }
  Vector pg = l1_pseudo_gradient(x, g, l1_weight);
  out.x = x;
  out.value = f;
  out.gradient = pg;

  std::deque<CurvaturePair> history;
  Vector x_trial(x.size());
  Vector g_trial(x.size());

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    out.iterations = iter - 1;
    if (pg.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
      out.status = SolverStatus::kGradientConverged;
      return out;
    }

    Vector q = pg;
    std::vector<double> alphas(history.size());
    for (std::size_t i = history.size(); i-- > 0;) {
      alphas[i] = history[i].rho * history[i].s.dot(q);
      q -= alphas[i] * history[i].y;
    }
    if (!history.empty()) {
      const auto& last = history.back();
      q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t i = 0; i < history.size(); ++i) {
      const double beta = history[i].rho * history[i].y.dot(q);
      q += (alphas[i] - beta) * history[i].s;
    }
    // Keep only components that agree with steepest descent.
    Vector direction = -q;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (direction[i] * pg[i] >= 0) direction[i] = 0.0;
    }
    if (!(pg.dot(direction) < 0)) {
      history.clear();
      direction = -pg;
    }
    Vector orthant(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      orthant[i] = x[i] != 0 ? (x[i] > 0 ? 1.0 : -1.0) : (pg[i] < 0 ? 1.0 : (pg[i] > 0 ? -1.0 : 0.0));
    }

    double step = history.empty() ? std::min(1.0, 1.0 / pg.lpNorm<Eigen::Infinity>()) : 1.0;
    bool accepted = false;
    double f_trial = std::numeric_limits<double>::infinity();
    for (int bt = 0; bt < kMaxBacktracks; ++bt) {
      x_trial = x + step * direction;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x_trial[i] * orthant[i] <= 0) x_trial[i] = 0.0;
      }
      f_trial = full(x_trial, g_trial, iter);
      if (std::isfinite(f_trial) && f_trial <= f + kArmijo * pg.dot(x_trial - x)) {
        accepted = true;
        break;
      }
      step *= kShrink;
    }

    if (!accepted) {
      if (!history.empty()) {
        history.clear();
        --iter;
        continue;
      }
      out.status = SolverStatus::kLineSearchFailed;
      return out;
    }

    Vector s = x_trial - x;
    Vector y = g_trial - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm() && sy > 0) {
      history.push_back({std::move(s), std::move(y), 1.0 / sy});
      if (static_cast<int>(history.size()) > options.history_size) history.pop_front();
    }

    const double decrease = f - f_trial;
    x = x_trial;
    g = g_trial;
    f = f_trial;
    pg = l1_pseudo_gradient(x, g, l1_weight);
    if (f < out.value) {
      out.x = x;
      out.value = f;
      out.gradient = pg;
    }
    out.iterations = iter;

    if (decrease <= options.function_tolerance * std::max(1.0, std::abs(f))) {
      out.status = pg.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance
                       ? SolverStatus::kGradientConverged
                       : SolverStatus::kFunctionConverged;
      return out;
    }
  }
  out.status = out.gradient.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance
                   ? SolverStatus::kGradientConverged
                   : SolverStatus::kMaxIterations;
  return out;
}

}  // namespace fbnsl
