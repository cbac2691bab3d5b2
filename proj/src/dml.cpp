#include "dmlg/dml.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "dmlg/error.hpp"
#include "dmlg/fingerprint.hpp"
#include "dmlg/random.hpp"

namespace dmlg {

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
  return out;
}

struct FoldModel {
  LassoFit fit;
  double lambda = 0.0;
};

// Penalty selection plus final fit on one training set. guess holds the
// per-row auxiliary predictor or is empty when the comparison model runs.
FoldModel fit_one_model(const Eigen::VectorXd& response, const Eigen::MatrixXd& features,
                        const Eigen::VectorXd& guess, const EstimatorConfig& cfg, std::uint64_t cv_seed,
                        const char* kind, int fold) {
  const Eigen::Index m = response.size();
  Eigen::MatrixXd unpen(m, guess.size() > 0 && !cfg.penalize_guess ? 1 : 0);
  Eigen::MatrixXd pen = features;
  if (guess.size() > 0) {
    if (cfg.penalize_guess) {
      pen.conservativeResize(Eigen::NoChange, pen.cols() + 1);
      pen.col(pen.cols() - 1) = guess;
    } else {
      unpen.col(0) = guess;
    }
  }
  const DesignSpec spec = DesignSpec::build(response, std::move(unpen), std::move(pen));
  const FitOptions opts{cfg.tol, cfg.max_iter, false};

  FoldModel model;
  if (cfg.fixed_lambda) {
    model.lambda = *cfg.fixed_lambda;
    model.fit = fit_lasso(spec, model.lambda, nullptr, opts);
  } else {
    const double lmax = lambda_max(spec);
    if (lmax <= 0.0) {
      model.lambda = 0.0;
      model.fit = fit_lasso(spec, 0.0, nullptr, opts);
    } else {
      const auto grid = build_lambda_grid(lmax, cfg.lambda_grid_size, cfg.lambda_min_ratio);
      const LambdaPath path = select_lambda_cv(spec, grid, cfg.cv_mode, cv_seed, opts);
      model.lambda = path.chosen_lambda();
      model.fit = fit_lasso_path(spec, grid, path.chosen_index, opts);
    }
  }
  if (!model.fit.converged) {
    raise(errc::nonconvergence, std::string(kind) + " model for fold " + std::to_string(fold) +
                                    " did not converge within " + std::to_string(cfg.max_iter) + " sweeps");
  }
  return model;
}

double rmse(const Eigen::VectorXd& residuals) {
  return std::sqrt(residuals.squaredNorm() / static_cast<double>(residuals.size()));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

NuisanceFits fit_nuisances(const ObservationTable& t, const FoldPlan& plan, const EstimatorConfig& cfg,
                           bool use_guesses) {
  cfg.validate();
  const auto report = validate_table(t);
  if (!report.ok()) raise(errc::invalid_table, report.to_string());
  if (plan.n() != static_cast<std::size_t>(t.n())) {
    raise(errc::invalid_argument, "fold plan covers " + std::to_string(plan.n()) + " rows, table has " +
                                      std::to_string(t.n()));
  }
  if (use_guesses && !t.has_guesses()) {
    raise(errc::invalid_argument, "guess columns requested but absent from the table");
  }

  const Eigen::Index n = t.n();
  NuisanceFits fits;
  fits.g_hat.resize(n);
  fits.m_hat.resize(n);
  fits.outcome_fits.reserve(static_cast<std::size_t>(plan.k));
  fits.treatment_fits.reserve(static_cast<std::size_t>(plan.k));

  const Eigen::VectorXd empty(0);
  for (int fold = 1; fold <= plan.k; ++fold) {
    const auto train = plan.complement_indices(fold);
    const auto held = plan.fold_indices(fold);
    const Eigen::MatrixXd x_train = gather_rows(t.x, train);

    const Eigen::VectorXd y_train = gather(t.y, train);
    const Eigen::VectorXd yg_train = use_guesses ? gather(*t.y_guess, train) : empty;
    FoldModel outcome = fit_one_model(y_train, x_train, yg_train, cfg,
                                      derive_seed(cfg.seed, static_cast<std::uint64_t>(fold), 1), "outcome", fold);

    const Eigen::VectorXd d_train = gather(t.d, train);
    const Eigen::VectorXd dg_train = use_guesses ? gather(*t.d_guess, train) : empty;
    FoldModel treatment = fit_one_model(d_train, x_train, dg_train, cfg,
                                        derive_seed(cfg.seed, static_cast<std::uint64_t>(fold), 2), "treatment", fold);

    for (const Eigen::Index row : held) {
      const Eigen::VectorXd x_row = t.x.row(row);
      if (use_guesses && cfg.penalize_guess) {
        Eigen::VectorXd pen_row(x_row.size() + 1);
        pen_row.head(x_row.size()) = x_row;
        pen_row[x_row.size()] = (*t.y_guess)[row];
        fits.g_hat[row] = predict_row(outcome.fit, empty, pen_row);
        pen_row[x_row.size()] = (*t.d_guess)[row];
        fits.m_hat[row] = predict_row(treatment.fit, empty, pen_row);
      } else if (use_guesses) {
        Eigen::VectorXd yg_row(1), dg_row(1);
        yg_row[0] = (*t.y_guess)[row];
        dg_row[0] = (*t.d_guess)[row];
        fits.g_hat[row] = predict_row(outcome.fit, yg_row, x_row);
        fits.m_hat[row] = predict_row(treatment.fit, dg_row, x_row);
      } else {
        fits.g_hat[row] = predict_row(outcome.fit, empty, x_row);
        fits.m_hat[row] = predict_row(treatment.fit, empty, x_row);
      }
    }

    fits.outcome_lambdas.push_back(outcome.lambda);
    fits.treatment_lambdas.push_back(treatment.lambda);
    fits.outcome_fits.push_back(std::move(outcome.fit));
    fits.treatment_fits.push_back(std::move(treatment.fit));
  }
  return fits;
}

ThetaEstimate residual_on_residual(const Eigen::VectorXd& r, const Eigen::VectorXd& v) {
  if (r.size() != v.size()) raise(errc::invalid_argument, "residual vectors differ in length");
  const double vv = v.squaredNorm();
  if (!(vv > 0.0)) raise(errc::degenerate_treatment, "treatment residuals have no variation");
  ThetaEstimate est;
  est.theta_hat = v.dot(r) / vv;
  const Eigen::ArrayXd eps = r.array() - est.theta_hat * v.array();
  est.robust_se = std::sqrt((v.array().square() * eps.square()).sum()) / vv;
  return est;
}

double pearson_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) raise(errc::invalid_argument, "correlation needs two aligned vectors");
  const Eigen::ArrayXd ca = a.array() - a.mean();
  const Eigen::ArrayXd cb = b.array() - b.mean();
  const double denom = std::sqrt(ca.square().sum() * cb.square().sum());
  if (!(denom > 0.0)) raise(errc::invalid_argument, "correlation undefined for a constant vector");
  return (ca * cb).sum() / denom;
}

std::string dml_fingerprint(const ObservationTable& t, const FoldPlan& plan, const EstimatorConfig& cfg) {
  std::ostringstream cfg_text;
  cfg_text << "n=" << t.n() << ";p=" << t.p() << ";k=" << cfg.k_folds << ";cv=" << cfg.cv_mode.to_string()
           << ";grid=" << cfg.lambda_grid_size << ";min_ratio=" << cfg.lambda_min_ratio
           << ";penalize_guess=" << (cfg.penalize_guess ? 1 : 0) << ";tol=" << cfg.tol
           << ";max_iter=" << cfg.max_iter << ";seed=" << cfg.seed << ";plan_seed=" << plan.seed
           << ";plan_k=" << plan.k;
  if (cfg.fixed_lambda) cfg_text << ";fixed_lambda=" << *cfg.fixed_lambda;
  Fnv1a h;
  h.update(cfg_text.str());
  h.update(t.y.data(), static_cast<std::size_t>(t.y.size()) * sizeof(double));
  h.update(t.d.data(), static_cast<std::size_t>(t.d.size()) * sizeof(double));
  h.update(t.x.data(), static_cast<std::size_t>(t.x.size()) * sizeof(double));
  h.update(plan.assignment.data(), plan.assignment.size() * sizeof(int));
  return h.hex();
}

DmlResult run_dml(const ObservationTable& t, const FoldPlan& plan, const EstimatorConfig& cfg, bool use_guesses) {
  const NuisanceFits fits = fit_nuisances(t, plan, cfg, use_guesses);

  DmlResult result;
  result.residuals_r = t.y - fits.g_hat;
  result.residuals_v = t.d - fits.m_hat;
  const ThetaEstimate est = residual_on_residual(result.residuals_r, result.residuals_v);
  result.theta_hat = est.theta_hat;
  result.robust_se = est.robust_se;
  result.rmse_y = rmse(result.residuals_r);
  result.rmse_d = rmse(result.residuals_v);
  result.outcome_lambdas = fits.outcome_lambdas;
  result.treatment_lambdas = fits.treatment_lambdas;
  result.used_guesses = use_guesses;
  result.fingerprint = dml_fingerprint(t, plan, cfg);
  if (t.has_guesses()) {
    const auto sd_pop = [](const Eigen::VectorXd& v) {
      return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size()));
    };
    // Omitted (not an error) when a column is constant and the correlation
    // is undefined.
    if (sd_pop(t.y) > 0.0 && sd_pop(*t.y_guess) > 0.0 && sd_pop(t.d) > 0.0 && sd_pop(*t.d_guess) > 0.0) {
      result.guess_correlations =
          GuessCorrelations{pearson_correlation(t.y, *t.y_guess), pearson_correlation(t.d, *t.d_guess)};
    }
  }
  return result;
}

DmlResult run_dml(const ObservationTable& t, const EstimatorConfig& cfg, bool use_guesses) {
  const FoldPlan plan = make_fold_plan(static_cast<std::size_t>(t.n()), cfg.k_folds, cfg.seed);
  return run_dml(t, plan, cfg, use_guesses);
}

std::string ComparisonReport::table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-18s %14s %14s %12s %12s\n", "", "RMSE E[Y|W]", "RMSE E[D|W]", "theta_hat",
                "robust SE");
  os << line;
  std::snprintf(line, sizeof(line), "%-18s %14.4f %14.4f %12.6f %12.4f\n", "embeddings only", rmse_y_without,
                rmse_d_without, theta_without, se_without);
  os << line;
  std::snprintf(line, sizeof(line), "%-18s %14.4f %14.4f %12.6f %12.4f\n", "with guesses", rmse_y_with, rmse_d_with,
                theta_with, se_with);
  os << line;
  std::snprintf(line, sizeof(line), "%-18s %14s %14s %12s %12s\n", "delta", format_double(delta_rmse_y).c_str(),
                format_double(delta_rmse_d).c_str(), "", format_double(delta_se).c_str());
  os << line;
  return os.str();
}

ComparisonReport compare_runs(const DmlResult& with_guess, const DmlResult& without_guess) {
  if (with_guess.fingerprint != without_guess.fingerprint) {
    raise(errc::incomparable_runs, "results come from different tables, plans, or configurations");
  }
  if (!with_guess.used_guesses || without_guess.used_guesses) {
    raise(errc::incomparable_runs, "expected one with-guess run and one without-guess run");
  }
  ComparisonReport report;
  report.rmse_y_with = with_guess.rmse_y;
  report.rmse_y_without = without_guess.rmse_y;
  report.delta_rmse_y = with_guess.rmse_y - without_guess.rmse_y;
  report.rmse_d_with = with_guess.rmse_d;
  report.rmse_d_without = without_guess.rmse_d;
  report.delta_rmse_d = with_guess.rmse_d - without_guess.rmse_d;
  report.theta_with = with_guess.theta_hat;
  report.theta_without = without_guess.theta_hat;
  report.se_with = with_guess.robust_se;
  report.se_without = without_guess.robust_se;
  report.delta_se = with_guess.robust_se - without_guess.robust_se;
  return report;
}

}  // namespace dmlg
