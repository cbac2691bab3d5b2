#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "dmlg/data_model.hpp"
#include "dmlg/lasso.hpp"

namespace dmlg {

// Per-fold nuisance models plus the out-of-fold predictions they imply.
// Row i's prediction always comes from the model trained on the complement
// of i's fold.
struct NuisanceFits {
  std::vector<LassoFit> outcome_fits;    // one per fold
  std::vector<LassoFit> treatment_fits;  // one per fold
  std::vector<double> outcome_lambdas;
  std::vector<double> treatment_lambdas;
  Eigen::VectorXd g_hat;  // out-of-fold E[Y|W] predictions, length n
  Eigen::VectorXd m_hat;  // out-of-fold E[D|W] predictions, length n
};

// Selects a penalty per fold and per nuisance on the fold complement, fits
// both partially penalized models there, and fills out-of-fold predictions.
// With use_guesses the guess column enters unpenalized (or penalized, under
// cfg.penalize_guess); without it the column is absent entirely.
NuisanceFits fit_nuisances(const ObservationTable& t, const FoldPlan& plan, const EstimatorConfig& cfg,
                           bool use_guesses);

struct ThetaEstimate {
  double theta_hat = 0.0;
  double robust_se = 0.0;
};

// Slope of r on v without intercept, theta = sum(v*r)/sum(v^2), with the
// heteroskedasticity-robust standard error
// sqrt( (sum v^2)^-2 * sum v^2 * (r - theta*v)^2 ); no degrees-of-freedom
// correction. sum(v^2) == 0 is a degenerate-treatment-variation error.
ThetaEstimate residual_on_residual(const Eigen::VectorXd& r, const Eigen::VectorXd& v);

struct GuessCorrelations {
  double outcome = 0.0;    // corr(y, y_guess)
  double treatment = 0.0;  // corr(d, d_guess)
};

struct DmlResult {
  double theta_hat = 0.0;
  double robust_se = 0.0;
  double rmse_y = 0.0;
  double rmse_d = 0.0;
  Eigen::VectorXd residuals_r;  // y - g_hat
  Eigen::VectorXd residuals_v;  // d - m_hat
  std::optional<GuessCorrelations> guess_correlations;
  std::vector<double> outcome_lambdas;
  std::vector<double> treatment_lambdas;
  bool used_guesses = false;
  // Hash of (table, fold plan, config) excluding the use_guesses toggle, so
  // paired runs can be checked for comparability.
  std::string fingerprint;
};

// Full pipeline on an externally supplied fold plan (paired runs share one).
DmlResult run_dml(const ObservationTable& t, const FoldPlan& plan, const EstimatorConfig& cfg, bool use_guesses);

// Same, with the plan derived from (n, cfg.k_folds, cfg.seed).
DmlResult run_dml(const ObservationTable& t, const EstimatorConfig& cfg, bool use_guesses);

struct ComparisonReport {
  double rmse_y_with = 0.0, rmse_y_without = 0.0, delta_rmse_y = 0.0;
  double rmse_d_with = 0.0, rmse_d_without = 0.0, delta_rmse_d = 0.0;
  double theta_with = 0.0, theta_without = 0.0;
  double se_with = 0.0, se_without = 0.0, delta_se = 0.0;

  // Four-column layout: RMSE for both nuisances, theta, robust SE.
  std::string table() const;
};

// Tabulates the with-guess vs. embeddings-only deltas. Throws
// incomparable-runs when the fingerprints differ or the arms are mislabeled.
ComparisonReport compare_runs(const DmlResult& with_guess, const DmlResult& without_guess);

std::string dml_fingerprint(const ObservationTable& t, const FoldPlan& plan, const EstimatorConfig& cfg);

double pearson_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace dmlg
