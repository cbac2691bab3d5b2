#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dmlg/data_model.hpp"
#include "dmlg/error.hpp"
#include "test_util.hpp"

using namespace dmlg;

namespace {

std::vector<int> fold_sizes(const FoldPlan& plan) {
  std::vector<int> sizes(static_cast<std::size_t>(plan.k), 0);
  for (int label : plan.assignment) sizes[static_cast<std::size_t>(label - 1)]++;
  return sizes;
}

ObservationTable small_table() {
  ObservationTable t;
  t.y = Eigen::VectorXd::LinSpaced(4, 0.0, 3.0);
  t.d = Eigen::VectorXd::LinSpaced(4, 0.1, 0.4);
  t.x = Eigen::MatrixXd::Identity(4, 3);
  t.ids = {"a", "b", "c", "d"};
  return t;
}

}  // namespace

TEST_CASE("fold plan: n == k forces singleton folds") {
  const FoldPlan plan = make_fold_plan(5, 5, 7);
  const auto sizes = fold_sizes(plan);
  for (int s : sizes) CHECK(s == 1);
}

TEST_CASE("fold plan: 333 rows over 5 folds") {
  const FoldPlan plan = make_fold_plan(333, 5, 1);
  auto sizes = fold_sizes(plan);
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<int>{66, 66, 67, 67, 67});
}

TEST_CASE("fold plan: deterministic in (n, k, seed)") {
  const FoldPlan a = make_fold_plan(10, 3, 42);
  const FoldPlan b = make_fold_plan(10, 3, 42);
  CHECK(a.assignment == b.assignment);
  const FoldPlan c = make_fold_plan(10, 3, 43);
  CHECK(a.assignment != c.assignment);
}

TEST_CASE("fold plan: invalid partitions rejected") {
  CHECK_THROWS_AS(make_fold_plan(3, 5, 0), Error);
  CHECK_THROWS_AS(make_fold_plan(10, 1, 0), Error);
  try {
    make_fold_plan(3, 5, 0);
  } catch (const Error& e) {
    CHECK(e.kind() == errc::invalid_partition);
  }
}

TEST_CASE("fold plan: sizes differ by at most one and labels cover the range") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.bounded(400);
    const int k = 2 + static_cast<int>(rng.bounded(9));
    if (n < static_cast<std::size_t>(k)) continue;
    const FoldPlan plan = make_fold_plan(n, k, rng.bounded(1u << 30));
    const auto sizes = fold_sizes(plan);
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    CHECK(*hi - *lo <= 1);
    CHECK(plan.assignment.size() == n);
    for (int label : plan.assignment) {
      CHECK(label >= 1);
      CHECK(label <= k);
    }
    std::size_t covered = 0;
    for (int fold = 1; fold <= k; ++fold) covered += plan.fold_indices(fold).size();
    CHECK(covered == n);
  }
}

TEST_CASE("validate_table: clean table passes") {
  CHECK(validate_table(small_table()).ok());
}

TEST_CASE("validate_table: NaN cell is named") {
  auto t = small_table();
  t.x(2, 1) = std::numeric_limits<double>::quiet_NaN();
  const auto report = validate_table(t);
  REQUIRE(report.violations.size() == 1);
  CHECK(report.violations[0].check == "nonfinite");
  CHECK(report.violations[0].column == "x");
  CHECK(report.violations[0].row == 2);
  CHECK(report.violations[0].col == 1);
}

TEST_CASE("validate_table: length mismatch reported") {
  auto t = small_table();
  t.d = Eigen::VectorXd::Zero(3);
  const auto report = validate_table(t);
  REQUIRE_FALSE(report.ok());
  CHECK(report.violations[0].check == "length-mismatch");
  CHECK(report.violations[0].column == "d");
}

TEST_CASE("validate_table: duplicate ids reported") {
  auto t = small_table();
  t.ids[3] = "a";
  const auto report = validate_table(t);
  REQUIRE_FALSE(report.ok());
  CHECK(report.violations[0].check == "duplicate-id");
}

TEST_CASE("validate_table: infinite guess entry reported") {
  auto t = small_table();
  t.y_guess = t.y;
  (*t.y_guess)[1] = std::numeric_limits<double>::infinity();
  const auto report = validate_table(t);
  REQUIRE_FALSE(report.ok());
  CHECK(report.violations[0].column == "y_guess");
  CHECK(report.violations[0].row == 1);
}

TEST_CASE("estimator config validation") {
  EstimatorConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.k_folds = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = EstimatorConfig{};
  cfg.lambda_min_ratio = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = EstimatorConfig{};
  cfg.cv_mode = CvMode::kfold(1);
  CHECK_THROWS_AS(cfg.validate(), Error);
}
