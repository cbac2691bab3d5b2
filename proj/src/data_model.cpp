#include "dmlg/data_model.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dmlg/error.hpp"
#include "dmlg/random.hpp"

namespace dmlg {

namespace {

void check_vector(const Eigen::VectorXd& v, const char* name, Eigen::Index n,
                  std::vector<Violation>& out) {
  if (v.size() != n) {
    out.push_back({"length-mismatch", name, -1, -1,
                   "expected length " + std::to_string(n) + ", got " + std::to_string(v.size())});
    return;
  }
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      out.push_back({"nonfinite", name, i, -1, "value is not finite"});
    }
  }
}

}  // namespace

std::string ValidationReport::to_string() const {
  if (ok()) return "pass";
  std::ostringstream os;
  for (const auto& v : violations) {
    os << v.check << " in " << v.column;
    if (v.row >= 0) os << " at row " << v.row;
    if (v.col >= 0) os << ", col " << v.col;
    if (!v.detail.empty()) os << " (" << v.detail << ")";
    os << "\n";
  }
  return os.str();
}

ValidationReport validate_table(const ObservationTable& t) {
  ValidationReport report;
  const Eigen::Index n = t.y.size();

  check_vector(t.d, "d", n, report.violations);
  if (t.y_guess) check_vector(*t.y_guess, "y_guess", n, report.violations);
  if (t.d_guess) check_vector(*t.d_guess, "d_guess", n, report.violations);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(t.y[i])) report.violations.push_back({"nonfinite", "y", i, -1, "value is not finite"});
  }

  if (t.x.rows() != n) {
    report.violations.push_back({"length-mismatch", "x", -1, -1,
                                 "expected " + std::to_string(n) + " rows, got " + std::to_string(t.x.rows())});
  } else {
    if (t.x.cols() < 1) {
      report.violations.push_back({"empty-features", "x", -1, -1, "p must be >= 1"});
    }
    for (Eigen::Index i = 0; i < t.x.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.x.cols(); ++j) {
        if (!std::isfinite(t.x(i, j))) {
          report.violations.push_back({"nonfinite", "x", i, j, "value is not finite"});
        }
      }
    }
  }

  if (static_cast<Eigen::Index>(t.ids.size()) != n) {
    report.violations.push_back({"length-mismatch", "ids", -1, -1,
                                 "expected " + std::to_string(n) + " ids, got " + std::to_string(t.ids.size())});
  } else {
    std::unordered_set<std::string> seen;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!seen.insert(t.ids[static_cast<std::size_t>(i)]).second) {
        report.violations.push_back({"duplicate-id", "ids", i, -1, t.ids[static_cast<std::size_t>(i)]});
      }
    }
  }

  return report;
}

std::vector<Eigen::Index> FoldPlan::fold_indices(int fold) const {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == fold) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

std::vector<Eigen::Index> FoldPlan::complement_indices(int fold) const {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != fold) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

FoldPlan make_fold_plan(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) raise(errc::invalid_partition, "fold count must be at least 2, got " + std::to_string(k));
  if (n < static_cast<std::size_t>(k)) {
    raise(errc::invalid_partition,
          "cannot split " + std::to_string(n) + " observations into " + std::to_string(k) + " folds");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignment.assign(n, 0);

  // Contiguous block split of the shuffled order; the first n % k folds take
  // the extra element.
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t extra = n % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (int fold = 1; fold <= k; ++fold) {
    std::size_t size = base + (static_cast<std::size_t>(fold) <= extra ? 1 : 0);
    for (std::size_t j = 0; j < size; ++j) {
      plan.assignment[order[pos++]] = fold;
    }
  }
  return plan;
}

std::string CvMode::to_string() const {
  if (kind == CvKind::loocv) return "loocv";
  return "kfold:" + std::to_string(inner_k);
}

void EstimatorConfig::validate() const {
  if (k_folds < 2) raise(errc::invalid_argument, "k_folds must be >= 2");
  if (cv_mode.kind == CvKind::kfold && cv_mode.inner_k < 2) {
    raise(errc::invalid_argument, "inner fold count must be >= 2");
  }
  if (lambda_grid_size < 2) raise(errc::invalid_argument, "lambda_grid_size must be >= 2");
  if (!(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0)) {
    raise(errc::invalid_argument, "lambda_min_ratio must lie in (0, 1)");
  }
  if (!(tol > 0.0)) raise(errc::invalid_argument, "tol must be positive");
  if (max_iter < 1) raise(errc::invalid_argument, "max_iter must be >= 1");
  if (fixed_lambda && *fixed_lambda < 0.0) raise(errc::invalid_argument, "fixed_lambda must be >= 0");
}

}  // namespace dmlg
