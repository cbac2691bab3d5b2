#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "dmlg/data_model.hpp"

namespace dmlg {

// Design for a partially penalized L1 regression: squared loss over all
// coefficients, L1 penalty on the penalized block only; the intercept and the
// unpenalized block are always exempt. Penalized columns are standardized
// internally (training mean 0, population sd 1) and coefficients are reported
// back on the original column scale; the stored means/scales make that
// round-trip reproducible.
struct DesignSpec {
  Eigen::VectorXd response;     // length m
  Eigen::MatrixXd unpenalized;  // m x q, raw scale (q may be 0)
  Eigen::MatrixXd penalized;    // m x p, raw scale
  Eigen::VectorXd penalized_mean;   // length p
  Eigen::VectorXd penalized_scale;  // length p; 0 marks a constant column

  Eigen::Index m() const { return response.size(); }
  Eigen::Index q() const { return unpenalized.cols(); }
  Eigen::Index p() const { return penalized.cols(); }

  static DesignSpec build(Eigen::VectorXd response, Eigen::MatrixXd unpenalized, Eigen::MatrixXd penalized);

  // Row-subset with standardization recomputed on the kept rows.
  DesignSpec subset(const std::vector<Eigen::Index>& rows) const;
};

struct FitOptions {
  double tol = 1e-7;    // max absolute coefficient change per sweep, standardized scale
  int max_iter = 10000; // sweep cap
  bool track_objective = false;
};

struct LassoFit {
  double intercept = 0.0;
  Eigen::VectorXd unpenalized_coefs;  // length q
  Eigen::VectorXd penalized_coefs;    // length p, original column scale
  double lambda = 0.0;
  int n_iterations = 0;  // completed sweeps
  bool converged = false;
  int active_set_size = 0;
  std::vector<Eigen::Index> constant_cols;  // zero-variance columns pinned to 0
  std::vector<double> objective_trace;      // per-sweep objective, when tracked
};

// sign(z) * max(|z| - gamma, 0)
double soft_threshold(double z, double gamma);

// Cyclic coordinate descent on the standardized design; the intercept and
// unpenalized block are re-solved exactly each sweep. The minimized criterion
// is (1/2m)*RSS + lambda*||beta||_1 with beta on the standardized scale,
// which makes lambda_max and the KKT certificate below exact companions.
// warm_start, when given, seeds the penalized coefficients.
LassoFit fit_lasso(const DesignSpec& spec, double lambda, const LassoFit* warm_start = nullptr,
                   const FitOptions& opts = {});

// Fits grid[0..upto] in order with warm starts and returns the fit at
// grid[upto]; equivalent to a cold fit at that point within solver tolerance.
LassoFit fit_lasso_path(const DesignSpec& spec, const std::vector<double>& grid, std::size_t upto,
                        const FitOptions& opts = {});

// Smallest penalty at which every penalized coefficient is zero:
// max_j |(1/m) Xs_j' r0| with Xs the standardized penalized columns and r0
// the response residualized on the intercept and unpenalized block.
double lambda_max(const DesignSpec& spec);

// grid_size log-spaced values from lmax down to lmax*min_ratio, strictly
// decreasing. lmax == 0 is a degenerate-grid error (the fit is plain least
// squares; callers skip selection).
std::vector<double> build_lambda_grid(double lmax, int grid_size, double min_ratio);

struct LambdaPath {
  std::vector<double> grid;       // strictly decreasing
  std::vector<double> cv_errors;  // mean squared held-out error per grid point
  std::size_t chosen_index = 0;   // ties broken toward larger lambda
  int n_nonconverged = 0;         // inner fits that hit the sweep cap

  double chosen_lambda() const { return grid.at(chosen_index); }
};

// Held-out mean squared error along the grid. loocv mode runs one refit per
// left-out row (warm starts along the grid); kfold mode uses a seeded inner
// partition. Standardization is recomputed on every training subset, so loocv
// errors match from-scratch refits exactly.
LambdaPath select_lambda_cv(const DesignSpec& spec, const std::vector<double>& grid, const CvMode& mode,
                            std::uint64_t seed, const FitOptions& opts = {});

// Fitted values on new rows, original scale.
Eigen::VectorXd predict(const LassoFit& fit, const Eigen::MatrixXd& unpenalized, const Eigen::MatrixXd& penalized);
double predict_row(const LassoFit& fit, const Eigen::VectorXd& unpenalized_row, const Eigen::VectorXd& penalized_row);

// Max stationarity violation on the standardized scale:
//   |(1/m) Xs_j' r|          <= lambda  for beta_j == 0
//   |(1/m) Xs_j' r - lambda*sign(beta_j)| for beta_j != 0
//   |(1/m) 1' r|, |(1/m) U_l' r|         for the unpenalized block
// Small at a converged optimum; tests assert it against tol_kkt.
double kkt_residual(const DesignSpec& spec, const LassoFit& fit, double lambda);

}  // namespace dmlg
