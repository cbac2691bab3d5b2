#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "dmlg/data_model.hpp"
#include "dmlg/dml.hpp"
#include "dmlg/preprocess.hpp"

namespace dmlg {

enum class FunctionalForm { sparse_linear, index_nonlinear };

// One nuisance function over the first `sparsity` feature coordinates.
// sparse_linear: amplitude-scaled linear combination along a seed-drawn unit
// direction. index_nonlinear: amplitude * tanh(steepness * index) of the same
// kind of standardized sparse index; a shape a linear-in-features learner can
// only partially track.
struct NuisanceForm {
  FunctionalForm form = FunctionalForm::sparse_linear;
  int sparsity = 5;
  double amplitude = 1.0;
};

struct DgpSpec {
  std::size_t n = 0;
  Eigen::Index p = 0;
  double theta0 = 0.0;
  NuisanceForm g_form;  // outcome nuisance
  NuisanceForm m_form;  // treatment nuisance
  double noise_sd_u = 1.0;
  double noise_sd_v = 1.0;
  double rho_y = 1.0;  // target corr(y_guess, E[Y|W,D])
  double rho_d = 1.0;  // target corr(d_guess, m(W))
  std::uint64_t seed = 0;
  bool rank_transform_d = false;  // map d onto (0,1] midrank quantiles

  void validate() const;
};

// Generated table plus the hidden ground truth, exactly satisfying
// y = d*theta0 + g_values + u and d = m_values + v.
struct SynthDataset {
  ObservationTable table;
  Eigen::VectorXd g_values;
  Eigen::VectorXd m_values;
  Eigen::VectorXd u;
  Eigen::VectorXd v;
};

// Deterministic in spec.seed. Guess noise SDs are solved from the realized
// signal variance so the sample guess-truth correlations land near the rho
// targets; rho = 1 yields the exact conditional mean, rho = 0 independent
// noise on the same scale.
SynthDataset generate(const DgpSpec& spec);

struct RepRecord {
  double theta_with = 0.0, se_with = 0.0, rmse_y_with = 0.0, rmse_d_with = 0.0;
  double theta_without = 0.0, se_without = 0.0, rmse_y_without = 0.0, rmse_d_without = 0.0;
  bool covered_with = false;    // theta0 inside theta_hat +- 1.96*SE
  bool covered_without = false;
};

struct ArmSummary {
  double mean_theta = 0.0;
  double sd_theta = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;
  double mean_rmse_y = 0.0;
  double mean_rmse_d = 0.0;
};

struct MonteCarloSummary {
  int reps = 0;
  ArmSummary with_guess;
  ArmSummary without_guess;
  double frac_rmse_y_improved = 0.0;  // share of reps where the guess run lowered rmse_y
  double frac_se_improved = 0.0;
  double mean_delta_rmse_d = 0.0;     // with - without
  double se_mean_delta_rmse_d = 0.0;  // Monte Carlo SE of that mean
  std::vector<RepRecord> records;
};

// Replication r uses spec.seed + r and cfg.seed + r; records are aggregated
// in replication order, so the summary is identical for any worker count.
MonteCarloSummary monte_carlo(const DgpSpec& spec, const EstimatorConfig& cfg, int reps, int workers = 1);

// Quantile anchors (min, quartiles, median, max) used to map synthetic
// outcomes onto listing-scale magnitudes when a dataset is exported in the
// raw ingestion format.
struct CalibrationAnchors {
  std::array<double, 5> price{0.99, 64.76, 108.49, 242.50, 7450.50};
  std::array<double, 5> score{0.0, 621.0, 4062.0, 9823.0, 1041349.0};
  std::array<double, 5> price_guess{12.99, 110.0, 150.0, 250.0, 5500.0};
  std::array<double, 5> score_guess{12.0, 300.0, 1200.0, 2100.0, 120000.0};
};

// Exports a generated dataset as raw listings: price/score (and guesses, when
// present) are monotone anchor-interpolated from the sample ranks of y, d,
// and the guess columns; the feature row splits into one unit-norm image
// vector and a text block. Ingesting the result yields a valid table whose
// variables are monotone transforms of the synthetic originals.
std::vector<RawListing> to_raw_listings(const SynthDataset& ds, Eigen::Index p_img,
                                        const CalibrationAnchors& anchors = {});

}  // namespace dmlg
