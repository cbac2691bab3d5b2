#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dmlg {

// Aligned estimation dataset: outcome, treatment, embedding features, and
// optional auxiliary guess columns. Immutable by convention after
// construction; all estimation code takes it by const reference.
struct ObservationTable {
  Eigen::VectorXd y;  // outcomes, log-price units
  Eigen::VectorXd d;  // treatments, quantile units in (0, 1]
  Eigen::MatrixXd x;  // n x p embedding features
  std::optional<Eigen::VectorXd> y_guess;
  std::optional<Eigen::VectorXd> d_guess;
  std::vector<std::string> ids;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return x.cols(); }
  bool has_guesses() const { return y_guess.has_value() && d_guess.has_value(); }
};

struct Violation {
  std::string check;   // "nonfinite" | "length-mismatch" | "duplicate-id" | "empty-features"
  std::string column;  // "y", "d", "x", "y_guess", "d_guess", "ids"
  Eigen::Index row = -1;
  Eigen::Index col = -1;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

// Report-only check of every ObservationTable invariant: alignment,
// finiteness of each stored cell, id uniqueness.
ValidationReport validate_table(const ObservationTable& t);

// Seeded partition of [0..n) into k folds whose sizes differ by at most one.
struct FoldPlan {
  int k = 0;
  std::vector<int> assignment;  // fold labels in [1..k], length n
  std::uint64_t seed = 0;

  std::size_t n() const { return assignment.size(); }
  std::vector<Eigen::Index> fold_indices(int fold) const;
  std::vector<Eigen::Index> complement_indices(int fold) const;
};

// Deterministic in (n, k, seed): seeded uniform shuffle of the index range,
// then a contiguous block split. Throws invalid-partition when n < k or k < 2.
FoldPlan make_fold_plan(std::size_t n, int k, std::uint64_t seed);

enum class CvKind { loocv, kfold };

struct CvMode {
  CvKind kind = CvKind::loocv;
  int inner_k = 5;  // only used when kind == kfold

  static CvMode loocv() { return CvMode{CvKind::loocv, 0}; }
  static CvMode kfold(int inner_k) { return CvMode{CvKind::kfold, inner_k}; }
  std::string to_string() const;
};

struct EstimatorConfig {
  int k_folds = 5;
  CvMode cv_mode = CvMode::loocv();
  int lambda_grid_size = 100;
  double lambda_min_ratio = 1e-3;
  bool penalize_guess = false;
  double tol = 1e-7;
  int max_iter = 10000;
  std::uint64_t seed = 0;
  // Skips penalty selection and fits every model at this value. Test and
  // debugging knob; unset in normal operation.
  std::optional<double> fixed_lambda;

  void validate() const;  // throws invalid-argument on a bad field
};

}  // namespace dmlg
