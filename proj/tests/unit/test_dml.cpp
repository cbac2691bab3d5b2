#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmlg/dml.hpp"
#include "dmlg/error.hpp"
#include "test_util.hpp"

using namespace dmlg;

namespace {

// Table with exactly linear nuisances; lambda pinned at 0 makes per-fold OLS
// the ground truth.
ObservationTable linear_table(Rng& rng, Eigen::Index n, Eigen::Index p) {
  ObservationTable t;
  t.x = test::random_matrix(rng, n, p);
  Eigen::VectorXd g_coef = Eigen::VectorXd::LinSpaced(p, 1.0, 2.0);
  Eigen::VectorXd m_coef = Eigen::VectorXd::LinSpaced(p, -0.5, 0.5);
  t.d = t.x * m_coef;
  for (Eigen::Index i = 0; i < n; ++i) t.d[i] += 0.3 * rng.normal();
  t.y = 1.5 * t.d + t.x * g_coef;
  for (Eigen::Index i = 0; i < n; ++i) t.y[i] += 0.2 * rng.normal();
  for (Eigen::Index i = 0; i < n; ++i) t.ids.push_back("r" + std::to_string(i));
  return t;
}

ObservationTable noisy_table(Rng& rng, Eigen::Index n, Eigen::Index p, bool with_guesses) {
  ObservationTable t = linear_table(rng, n, p);
  if (with_guesses) {
    t.y_guess = t.y;
    t.d_guess = t.d;
    for (Eigen::Index i = 0; i < n; ++i) {
      (*t.y_guess)[i] += rng.normal();
      (*t.d_guess)[i] += rng.normal();
    }
  }
  return t;
}

EstimatorConfig fast_config() {
  EstimatorConfig cfg;
  cfg.k_folds = 4;
  cfg.cv_mode = CvMode::kfold(3);
  cfg.lambda_grid_size = 8;
  cfg.lambda_min_ratio = 0.05;
  cfg.seed = 5;
  return cfg;
}

bool identical(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

TEST_CASE("residual-on-residual: exact proportionality") {
  Eigen::VectorXd v(3);
  v << 1.0, -2.0, 0.5;
  const Eigen::VectorXd r = 2.0 * v;
  const auto est = residual_on_residual(r, v);
  CHECK(est.theta_hat == doctest::Approx(2.0));
  CHECK(est.robust_se == doctest::Approx(0.0));
}

TEST_CASE("residual-on-residual: hand-computed sandwich") {
  Eigen::VectorXd v(2), r(2);
  v << 1.0, -1.0;
  r << 1.0, 1.0;
  const auto est = residual_on_residual(r, v);
  CHECK(est.theta_hat == doctest::Approx(0.0));
  CHECK(est.robust_se == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("residual-on-residual: orthogonal residuals give zero slope") {
  Eigen::VectorXd v(4), r(4);
  v << 1.0, 1.0, -1.0, -1.0;
  r << 1.0, -1.0, 1.0, -1.0;
  CHECK(residual_on_residual(r, v).theta_hat == doctest::Approx(0.0));
}

TEST_CASE("residual-on-residual: no treatment variation is an error") {
  const Eigen::VectorXd v = Eigen::VectorXd::Zero(5);
  const Eigen::VectorXd r = Eigen::VectorXd::Ones(5);
  try {
    residual_on_residual(r, v);
    FAIL("expected degenerate-treatment-variation error");
  } catch (const Error& e) {
    CHECK(e.kind() == errc::degenerate_treatment);
  }
}

TEST_CASE("residual-on-residual: scale equivariance and permutation invariance") {
  Rng rng(2);
  const Eigen::VectorXd v = test::random_vector(rng, 40);
  const Eigen::VectorXd r = test::random_vector(rng, 40);
  const auto base = residual_on_residual(r, v);

  const auto scaled_r = residual_on_residual(Eigen::VectorXd(-2.5 * r), v);
  CHECK(scaled_r.theta_hat == doctest::Approx(-2.5 * base.theta_hat));
  CHECK(scaled_r.robust_se == doctest::Approx(2.5 * base.robust_se));

  const auto scaled_v = residual_on_residual(r, Eigen::VectorXd(4.0 * v));
  CHECK(scaled_v.theta_hat == doctest::Approx(base.theta_hat / 4.0));

  std::vector<Eigen::Index> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffle_rng(3);
  shuffle_rng.shuffle(perm);
  Eigen::VectorXd rp(40), vp(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    rp[i] = r[perm[static_cast<std::size_t>(i)]];
    vp[i] = v[perm[static_cast<std::size_t>(i)]];
  }
  const auto permuted = residual_on_residual(rp, vp);
  CHECK(permuted.theta_hat == doctest::Approx(base.theta_hat));
  CHECK(permuted.robust_se == doctest::Approx(base.robust_se));
}

TEST_CASE("out-of-fold predictions match a per-fold OLS oracle at lambda 0") {
  Rng rng(11);
  const Eigen::Index n = 40, p = 3;
  const ObservationTable t = linear_table(rng, n, p);
  EstimatorConfig cfg;
  cfg.k_folds = 4;
  cfg.fixed_lambda = 0.0;
  cfg.tol = 1e-11;
  cfg.max_iter = 200000;
  cfg.seed = 1;
  const FoldPlan plan = make_fold_plan(static_cast<std::size_t>(n), cfg.k_folds, cfg.seed);
  const NuisanceFits fits = fit_nuisances(t, plan, cfg, false);

  for (int fold = 1; fold <= plan.k; ++fold) {
    const auto train = plan.complement_indices(fold);
    Eigen::MatrixXd design(static_cast<Eigen::Index>(train.size()), 1 + p);
    Eigen::VectorXd y_train(static_cast<Eigen::Index>(train.size()));
    Eigen::VectorXd d_train(static_cast<Eigen::Index>(train.size()));
    for (std::size_t i = 0; i < train.size(); ++i) {
      design(static_cast<Eigen::Index>(i), 0) = 1.0;
      design.row(static_cast<Eigen::Index>(i)).tail(p) = t.x.row(train[i]);
      y_train[static_cast<Eigen::Index>(i)] = t.y[train[i]];
      d_train[static_cast<Eigen::Index>(i)] = t.d[train[i]];
    }
    const Eigen::VectorXd coef_y = design.colPivHouseholderQr().solve(y_train);
    const Eigen::VectorXd coef_d = design.colPivHouseholderQr().solve(d_train);
    for (const Eigen::Index row : plan.fold_indices(fold)) {
      const double ols_g = coef_y[0] + t.x.row(row).dot(coef_y.tail(p));
      const double ols_m = coef_d[0] + t.x.row(row).dot(coef_d.tail(p));
      CHECK(std::abs(fits.g_hat[row] - ols_g) < 1e-6);
      CHECK(std::abs(fits.m_hat[row] - ols_m) < 1e-6);
    }
  }
}

TEST_CASE("poison pill: a row cannot influence models trained without it") {
  for (std::uint64_t seed : {1ULL, 2ULL}) {
    Rng rng(seed);
    const Eigen::Index n = 48;
    ObservationTable t = linear_table(rng, n, 4);
    EstimatorConfig cfg = fast_config();
    cfg.seed = seed;
    const FoldPlan plan = make_fold_plan(static_cast<std::size_t>(n), cfg.k_folds, cfg.seed);

    const NuisanceFits clean = fit_nuisances(t, plan, cfg, false);
    const Eigen::Index poisoned = static_cast<Eigen::Index>(rng.bounded(static_cast<std::uint64_t>(n)));
    ObservationTable poisoned_t = t;
    poisoned_t.y[poisoned] = 1e6;
    const NuisanceFits dirty = fit_nuisances(poisoned_t, plan, cfg, false);

    const int poison_fold = plan.assignment[static_cast<std::size_t>(poisoned)];
    bool any_other_fold_changed = false;
    for (Eigen::Index row = 0; row < n; ++row) {
      if (plan.assignment[static_cast<std::size_t>(row)] == poison_fold) {
        // Trained without the poisoned row: bit-identical predictions.
        CHECK(clean.g_hat[row] == dirty.g_hat[row]);
      } else if (clean.g_hat[row] != dirty.g_hat[row]) {
        any_other_fold_changed = true;
      }
    }
    CHECK(any_other_fold_changed);
    CHECK(identical(clean.m_hat, dirty.m_hat));  // treatment models never saw y
  }
}

TEST_CASE("disabling guesses equals deleting the guess columns") {
  Rng rng(19);
  ObservationTable with_cols = noisy_table(rng, 36, 3, true);
  ObservationTable stripped = with_cols;
  stripped.y_guess.reset();
  stripped.d_guess.reset();

  EstimatorConfig cfg = fast_config();
  const FoldPlan plan = make_fold_plan(36, cfg.k_folds, cfg.seed);
  const DmlResult a = run_dml(with_cols, plan, cfg, false);
  const DmlResult b = run_dml(stripped, plan, cfg, false);
  CHECK(a.theta_hat == b.theta_hat);
  CHECK(a.robust_se == b.robust_se);
  CHECK(identical(a.residuals_r, b.residuals_r));
  CHECK(identical(a.residuals_v, b.residuals_v));
  CHECK(a.fingerprint == b.fingerprint);
}

TEST_CASE("run_dml is bit-deterministic") {
  Rng rng(23);
  const ObservationTable t = noisy_table(rng, 36, 3, true);
  const EstimatorConfig cfg = fast_config();
  const DmlResult a = run_dml(t, cfg, true);
  const DmlResult b = run_dml(t, cfg, true);
  CHECK(a.theta_hat == b.theta_hat);
  CHECK(a.robust_se == b.robust_se);
  CHECK(identical(a.residuals_r, b.residuals_r));
  CHECK(identical(a.residuals_v, b.residuals_v));
}

TEST_CASE("run_dml reports rmse and correlations consistently") {
  Rng rng(29);
  const ObservationTable t = noisy_table(rng, 36, 3, true);
  const EstimatorConfig cfg = fast_config();
  const DmlResult res = run_dml(t, cfg, true);
  CHECK(res.rmse_y == doctest::Approx(std::sqrt(res.residuals_r.squaredNorm() / 36.0)));
  CHECK(res.rmse_d == doctest::Approx(std::sqrt(res.residuals_v.squaredNorm() / 36.0)));
  REQUIRE(res.guess_correlations.has_value());
  CHECK(res.guess_correlations->outcome == doctest::Approx(pearson_correlation(t.y, *t.y_guess)));
  CHECK(res.guess_correlations->treatment == doctest::Approx(pearson_correlation(t.d, *t.d_guess)));
  CHECK(res.robust_se >= 0.0);
  CHECK(res.outcome_lambdas.size() == 4);
}

TEST_CASE("requesting guesses without guess columns fails") {
  Rng rng(31);
  const ObservationTable t = linear_table(rng, 24, 3);
  CHECK_THROWS_AS(run_dml(t, fast_config(), true), Error);
}

TEST_CASE("compare_runs: identical numbers give zero deltas") {
  DmlResult with;
  with.rmse_y = 0.7;
  with.rmse_d = 0.2;
  with.theta_hat = -0.05;
  with.robust_se = 0.17;
  with.used_guesses = true;
  with.fingerprint = "f";
  DmlResult without = with;
  without.used_guesses = false;
  const auto report = compare_runs(with, without);
  CHECK(report.delta_rmse_y == 0.0);
  CHECK(report.delta_rmse_d == 0.0);
  CHECK(report.delta_se == 0.0);
  CHECK_FALSE(report.table().empty());
}

TEST_CASE("compare_runs: mismatched fingerprints are incomparable") {
  DmlResult with;
  with.used_guesses = true;
  with.fingerprint = "a";
  DmlResult without;
  without.used_guesses = false;
  without.fingerprint = "b";
  try {
    compare_runs(with, without);
    FAIL("expected incomparable-runs error");
  } catch (const Error& e) {
    CHECK(e.kind() == errc::incomparable_runs);
  }
}

TEST_CASE("compare_runs on paired runs from one plan") {
  Rng rng(37);
  const ObservationTable t = noisy_table(rng, 40, 3, true);
  const EstimatorConfig cfg = fast_config();
  const FoldPlan plan = make_fold_plan(40, cfg.k_folds, cfg.seed);
  const DmlResult with = run_dml(t, plan, cfg, true);
  const DmlResult without = run_dml(t, plan, cfg, false);
  const auto report = compare_runs(with, without);
  CHECK(report.delta_rmse_y == doctest::Approx(with.rmse_y - without.rmse_y));
  CHECK(report.theta_with == with.theta_hat);
  CHECK(report.theta_without == without.theta_hat);
}
