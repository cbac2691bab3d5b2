#include "dmlg/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dmlg/error.hpp"

namespace dmlg {

namespace {

void require_finite(const Eigen::MatrixXd& m, const char* name) {
  if (!m.allFinite()) raise(errc::invalid_argument, std::string(name) + " contains non-finite values");
}

// Shared state for repeated fits on one design (a lambda path, CV refits).
// Holds the standardized penalized matrix and the QR of [1 | U] so each
// solve only pays for the descent itself.
class Solver {
 public:
  explicit Solver(const DesignSpec& spec) : spec_(spec) {
    const Eigen::Index m = spec.m(), p = spec.p(), q = spec.q();
    xs_.resize(m, p);
    for (Eigen::Index j = 0; j < p; ++j) {
      if (spec.penalized_scale[j] > 0.0) {
        xs_.col(j) = (spec.penalized.col(j).array() - spec.penalized_mean[j]) / spec.penalized_scale[j];
      } else {
        xs_.col(j).setZero();
      }
    }
    base_.resize(m, 1 + q);
    base_.col(0).setOnes();
    if (q > 0) base_.rightCols(q) = spec.unpenalized;
    base_qr_.compute(base_);
  }

  LassoFit solve(double lambda, const LassoFit* warm, const FitOptions& opts) const {
    const Eigen::Index m = spec_.m(), p = spec_.p(), q = spec_.q();
    const double inv_m = 1.0 / static_cast<double>(m);

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);  // standardized scale
    if (warm != nullptr && warm->penalized_coefs.size() == p) {
      for (Eigen::Index j = 0; j < p; ++j) {
        beta[j] = spec_.penalized_scale[j] > 0.0 ? warm->penalized_coefs[j] * spec_.penalized_scale[j] : 0.0;
      }
    }

    // w = response - Xs*beta stays current through the descent; r additionally
    // removes the exactly-solved intercept/unpenalized block.
    Eigen::VectorXd w = spec_.response - xs_ * beta;
    Eigen::VectorXd theta = base_qr_.solve(w);
    Eigen::VectorXd r = w - base_ * theta;

    std::vector<char> active(static_cast<std::size_t>(p), 0);
    for (Eigen::Index j = 0; j < p; ++j) active[static_cast<std::size_t>(j)] = beta[j] != 0.0;

    std::vector<double> trace;
    auto objective = [&]() { return 0.5 * inv_m * r.squaredNorm() + lambda * beta.lpNorm<1>(); };
    if (opts.track_objective) trace.push_back(objective());

    // One pass = coordinate updates over the requested set, then an exact
    // re-solve of the intercept/unpenalized block. Returns the max absolute
    // coefficient change.
    auto pass = [&](bool full) {
      double max_delta = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (!full && !active[static_cast<std::size_t>(j)]) continue;
        if (spec_.penalized_scale[j] <= 0.0) continue;
        const double old = beta[j];
        const double z = inv_m * xs_.col(j).dot(r) + old;
        const double next = soft_threshold(z, lambda);
        const double delta = next - old;
        if (delta != 0.0) {
          beta[j] = next;
          r.noalias() -= xs_.col(j) * delta;
          w.noalias() -= xs_.col(j) * delta;
          if (next != 0.0) active[static_cast<std::size_t>(j)] = 1;
          max_delta = std::max(max_delta, std::abs(delta));
        }
      }
      const Eigen::VectorXd theta_next = base_qr_.solve(w);
      max_delta = std::max(max_delta, (theta_next - theta).cwiseAbs().maxCoeff());
      theta = theta_next;
      r = w - base_ * theta;
      if (opts.track_objective) trace.push_back(objective());
      return max_delta;
    };

    int sweeps = 0;
    bool converged = false;
    while (sweeps < opts.max_iter) {
      const double full_delta = pass(true);
      ++sweeps;
      if (full_delta < opts.tol) {
        converged = true;
        break;
      }
      while (sweeps < opts.max_iter) {
        const double active_delta = pass(false);
        ++sweeps;
        if (active_delta < opts.tol) break;
      }
    }

    LassoFit fit;
    fit.lambda = lambda;
    fit.n_iterations = sweeps;
    fit.converged = converged;
    fit.objective_trace = std::move(trace);
    fit.penalized_coefs.resize(p);
    double mean_shift = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (spec_.penalized_scale[j] > 0.0) {
        fit.penalized_coefs[j] = beta[j] / spec_.penalized_scale[j];
        mean_shift += beta[j] * spec_.penalized_mean[j] / spec_.penalized_scale[j];
      } else {
        fit.penalized_coefs[j] = 0.0;
        fit.constant_cols.push_back(j);
      }
    }
    fit.intercept = theta[0] - mean_shift;
    fit.unpenalized_coefs = q > 0 ? Eigen::VectorXd(theta.tail(q)) : Eigen::VectorXd(0);
    fit.active_set_size = static_cast<int>((beta.array() != 0.0).count());
    return fit;
  }

 private:
  const DesignSpec& spec_;
  Eigen::MatrixXd xs_;
  Eigen::MatrixXd base_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> base_qr_;
};

}  // namespace

DesignSpec DesignSpec::build(Eigen::VectorXd response, Eigen::MatrixXd unpenalized, Eigen::MatrixXd penalized) {
  const Eigen::Index m = response.size();
  if (m < 1) raise(errc::invalid_argument, "empty response");
  if (unpenalized.size() > 0 && unpenalized.rows() != m) {
    raise(errc::invalid_argument, "unpenalized block row count does not match response");
  }
  if (penalized.size() > 0 && penalized.rows() != m) {
    raise(errc::invalid_argument, "penalized block row count does not match response");
  }
  if (unpenalized.size() == 0) unpenalized.resize(m, 0);
  if (penalized.size() == 0) penalized.resize(m, 0);
  if (unpenalized.cols() + penalized.cols() < 1) {
    raise(errc::invalid_argument, "design needs at least one column");
  }
  require_finite(response, "response");
  require_finite(unpenalized, "unpenalized block");
  require_finite(penalized, "penalized block");

  DesignSpec spec;
  spec.response = std::move(response);
  spec.unpenalized = std::move(unpenalized);
  spec.penalized = std::move(penalized);
  const Eigen::Index p = spec.penalized.cols();
  spec.penalized_mean.resize(p);
  spec.penalized_scale.resize(p);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double mean = spec.penalized.col(j).mean();
    const double var = (spec.penalized.col(j).array() - mean).square().sum() * inv_m;
    spec.penalized_mean[j] = mean;
    spec.penalized_scale[j] = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  return spec;
}

DesignSpec DesignSpec::subset(const std::vector<Eigen::Index>& rows) const {
  const Eigen::Index k = static_cast<Eigen::Index>(rows.size());
  Eigen::VectorXd sub_response(k);
  Eigen::MatrixXd sub_unpenalized(k, q());
  Eigen::MatrixXd sub_penalized(k, p());
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index row = rows[static_cast<std::size_t>(i)];
    sub_response[i] = response[row];
    if (q() > 0) sub_unpenalized.row(i) = unpenalized.row(row);
    if (p() > 0) sub_penalized.row(i) = penalized.row(row);
  }
  return build(std::move(sub_response), std::move(sub_unpenalized), std::move(sub_penalized));
}

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

LassoFit fit_lasso(const DesignSpec& spec, double lambda, const LassoFit* warm_start, const FitOptions& opts) {
  if (lambda < 0.0) raise(errc::invalid_argument, "lambda must be >= 0");
  if (!(opts.tol > 0.0)) raise(errc::invalid_argument, "tol must be positive");
  Solver solver(spec);
  return solver.solve(lambda, warm_start, opts);
}

LassoFit fit_lasso_path(const DesignSpec& spec, const std::vector<double>& grid, std::size_t upto,
                        const FitOptions& opts) {
  if (grid.empty() || upto >= grid.size()) raise(errc::invalid_argument, "bad grid position");
  Solver solver(spec);
  LassoFit fit;
  const LassoFit* warm = nullptr;
  for (std::size_t g = 0; g <= upto; ++g) {
    fit = solver.solve(grid[g], warm, opts);
    warm = &fit;
  }
  return fit;
}

double lambda_max(const DesignSpec& spec) {
  const Eigen::Index m = spec.m(), p = spec.p(), q = spec.q();
  if (p == 0) return 0.0;
  Eigen::MatrixXd base(m, 1 + q);
  base.col(0).setOnes();
  if (q > 0) base.rightCols(q) = spec.unpenalized;
  const Eigen::VectorXd r0 = spec.response - base * base.colPivHouseholderQr().solve(spec.response);
  const double inv_m = 1.0 / static_cast<double>(m);
  double best = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (spec.penalized_scale[j] <= 0.0) continue;
    const double dot = (spec.penalized.col(j).array() - spec.penalized_mean[j]).matrix().dot(r0);
    best = std::max(best, std::abs(dot * inv_m / spec.penalized_scale[j]));
  }
  return best;
}

std::vector<double> build_lambda_grid(double lmax, int grid_size, double min_ratio) {
  if (!(lmax > 0.0)) raise(errc::degenerate_grid, "lambda_max is zero; fit is plain least squares");
  if (grid_size < 2) raise(errc::invalid_argument, "grid_size must be >= 2");
  if (!(min_ratio > 0.0 && min_ratio < 1.0)) raise(errc::invalid_argument, "min_ratio must lie in (0, 1)");
  std::vector<double> grid(static_cast<std::size_t>(grid_size));
  const double log_ratio = std::log(min_ratio);
  for (int g = 0; g < grid_size; ++g) {
    grid[static_cast<std::size_t>(g)] = lmax * std::exp(log_ratio * static_cast<double>(g) / (grid_size - 1));
  }
  grid.front() = lmax;
  return grid;
}

LambdaPath select_lambda_cv(const DesignSpec& spec, const std::vector<double>& grid, const CvMode& mode,
                            std::uint64_t seed, const FitOptions& opts) {
  if (grid.empty()) raise(errc::invalid_argument, "empty lambda grid");
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (!(grid[g] < grid[g - 1])) raise(errc::invalid_argument, "lambda grid must be strictly decreasing");
  }
  const Eigen::Index m = spec.m();
  const std::size_t n_grid = grid.size();

  LambdaPath path;
  path.grid = grid;
  path.cv_errors.assign(n_grid, 0.0);
  std::vector<Eigen::Index> valid(n_grid, 0);

  auto run_split = [&](const std::vector<Eigen::Index>& train, const std::vector<Eigen::Index>& held) {
    const DesignSpec sub = spec.subset(train);
    Solver solver(sub);
    LassoFit fit;
    const LassoFit* warm = nullptr;
    for (std::size_t g = 0; g < n_grid; ++g) {
      fit = solver.solve(grid[g], warm, opts);
      warm = &fit;
      if (!fit.converged) ++path.n_nonconverged;
      for (const Eigen::Index row : held) {
        const double pred = predict_row(fit, spec.q() > 0 ? Eigen::VectorXd(spec.unpenalized.row(row)) : Eigen::VectorXd(0),
                                        Eigen::VectorXd(spec.penalized.row(row)));
        const double err = spec.response[row] - pred;
        path.cv_errors[g] += err * err;
        ++valid[g];
      }
    }
  };

  if (mode.kind == CvKind::loocv) {
    std::vector<Eigen::Index> train(static_cast<std::size_t>(m) - 1);
    for (Eigen::Index i = 0; i < m; ++i) {
      std::size_t pos = 0;
      for (Eigen::Index row = 0; row < m; ++row) {
        if (row != i) train[pos++] = row;
      }
      run_split(train, {i});
    }
  } else {
    const FoldPlan plan = make_fold_plan(static_cast<std::size_t>(m), mode.inner_k, seed);
    for (int fold = 1; fold <= plan.k; ++fold) {
      run_split(plan.complement_indices(fold), plan.fold_indices(fold));
    }
  }

  for (std::size_t g = 0; g < n_grid; ++g) {
    path.cv_errors[g] = valid[g] > 0 ? path.cv_errors[g] / static_cast<double>(valid[g])
                                     : std::numeric_limits<double>::infinity();
  }

  // First strict minimum scanning from the top keeps the largest lambda on ties.
  std::size_t best = 0;
  for (std::size_t g = 1; g < n_grid; ++g) {
    if (path.cv_errors[g] < path.cv_errors[best]) best = g;
  }
  path.chosen_index = best;
  return path;
}

double predict_row(const LassoFit& fit, const Eigen::VectorXd& unpenalized_row, const Eigen::VectorXd& penalized_row) {
  double value = fit.intercept;
  if (fit.unpenalized_coefs.size() > 0) value += unpenalized_row.dot(fit.unpenalized_coefs);
  if (fit.penalized_coefs.size() > 0) value += penalized_row.dot(fit.penalized_coefs);
  return value;
}

Eigen::VectorXd predict(const LassoFit& fit, const Eigen::MatrixXd& unpenalized, const Eigen::MatrixXd& penalized) {
  const Eigen::Index m = penalized.size() > 0 ? penalized.rows() : unpenalized.rows();
  Eigen::VectorXd out = Eigen::VectorXd::Constant(m, fit.intercept);
  if (fit.unpenalized_coefs.size() > 0) {
    if (unpenalized.cols() != fit.unpenalized_coefs.size() || unpenalized.rows() != m) {
      raise(errc::invalid_argument, "unpenalized block shape does not match fit");
    }
    out.noalias() += unpenalized * fit.unpenalized_coefs;
  }
  if (fit.penalized_coefs.size() > 0) {
    if (penalized.cols() != fit.penalized_coefs.size() || penalized.rows() != m) {
      raise(errc::invalid_argument, "penalized block shape does not match fit");
    }
    out.noalias() += penalized * fit.penalized_coefs;
  }
  return out;
}

double kkt_residual(const DesignSpec& spec, const LassoFit& fit, double lambda) {
  const Eigen::Index m = spec.m(), p = spec.p(), q = spec.q();
  const double inv_m = 1.0 / static_cast<double>(m);
  const Eigen::VectorXd r = spec.response - predict(fit, spec.unpenalized, spec.penalized);

  double worst = std::abs(r.sum() * inv_m);
  for (Eigen::Index l = 0; l < q; ++l) {
    worst = std::max(worst, std::abs(spec.unpenalized.col(l).dot(r) * inv_m));
  }
  for (Eigen::Index j = 0; j < p; ++j) {
    if (spec.penalized_scale[j] <= 0.0) continue;
    const double grad =
        (spec.penalized.col(j).array() - spec.penalized_mean[j]).matrix().dot(r) * inv_m / spec.penalized_scale[j];
    const double beta_std = fit.penalized_coefs[j] * spec.penalized_scale[j];
    if (beta_std != 0.0) {
      worst = std::max(worst, std::abs(grad - lambda * (beta_std > 0.0 ? 1.0 : -1.0)));
    } else {
      worst = std::max(worst, std::max(0.0, std::abs(grad) - lambda));
    }
  }
  return worst;
}

}  // namespace dmlg
