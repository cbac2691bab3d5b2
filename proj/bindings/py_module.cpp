#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dmlg/data_model.hpp"
#include "dmlg/dml.hpp"
#include "dmlg/error.hpp"
#include "dmlg/lasso.hpp"
#include "dmlg/llm_client.hpp"
#include "dmlg/preprocess.hpp"
#include "dmlg/synth.hpp"

namespace py = pybind11;
using namespace dmlg;

namespace {

ObservationTable make_table(Eigen::VectorXd y, Eigen::VectorXd d, Eigen::MatrixXd x,
                            std::optional<Eigen::VectorXd> y_guess, std::optional<Eigen::VectorXd> d_guess,
                            std::optional<std::vector<std::string>> ids) {
  ObservationTable t;
  t.y = std::move(y);
  t.d = std::move(d);
  t.x = std::move(x);
  t.y_guess = std::move(y_guess);
  t.d_guess = std::move(d_guess);
  if (ids) {
    t.ids = std::move(*ids);
  } else {
    t.ids.reserve(static_cast<std::size_t>(t.n()));
    for (Eigen::Index i = 0; i < t.n(); ++i) t.ids.push_back("row-" + std::to_string(i));
  }
  return t;
}

CvMode cv_from_string(const std::string& text) {
  if (text == "loocv") return CvMode::loocv();
  if (text.rfind("kfold:", 0) == 0) return CvMode::kfold(std::stoi(text.substr(6)));
  raise(errc::configuration, "unknown cv mode '" + text + "'");
}

}  // namespace

PYBIND11_MODULE(_dmlg, m) {
  m.doc() = "double machine learning with auxiliary guess predictors";

  py::register_exception<Error>(m, "DmlgError");

  py::class_<FoldPlan>(m, "FoldPlan")
      .def_readonly("k", &FoldPlan::k)
      .def_readonly("assignment", &FoldPlan::assignment)
      .def_readonly("seed", &FoldPlan::seed)
      .def("fold_indices", &FoldPlan::fold_indices)
      .def("complement_indices", &FoldPlan::complement_indices);
  m.def("make_fold_plan", &make_fold_plan, py::arg("n"), py::arg("k"), py::arg("seed"));

  py::class_<ObservationTable>(m, "ObservationTable")
      .def(py::init(&make_table), py::arg("y"), py::arg("d"), py::arg("x"), py::arg("y_guess") = py::none(),
           py::arg("d_guess") = py::none(), py::arg("ids") = py::none())
      .def_readonly("y", &ObservationTable::y)
      .def_readonly("d", &ObservationTable::d)
      .def_readonly("x", &ObservationTable::x)
      .def_readonly("y_guess", &ObservationTable::y_guess)
      .def_readonly("d_guess", &ObservationTable::d_guess)
      .def_readonly("ids", &ObservationTable::ids)
      .def_property_readonly("n", &ObservationTable::n)
      .def_property_readonly("p", &ObservationTable::p);

  py::class_<ValidationReport>(m, "ValidationReport")
      .def_property_readonly("ok", &ValidationReport::ok)
      .def("__str__", &ValidationReport::to_string);
  m.def("validate_table", &validate_table);

  py::class_<EstimatorConfig>(m, "EstimatorConfig")
      .def(py::init([](int k_folds, const std::string& cv, int grid, double min_ratio, bool penalize_guess,
                       double tol, int max_iter, std::uint64_t seed, std::optional<double> fixed_lambda) {
             EstimatorConfig cfg;
             cfg.k_folds = k_folds;
             cfg.cv_mode = cv_from_string(cv);
             cfg.lambda_grid_size = grid;
             cfg.lambda_min_ratio = min_ratio;
             cfg.penalize_guess = penalize_guess;
             cfg.tol = tol;
             cfg.max_iter = max_iter;
             cfg.seed = seed;
             cfg.fixed_lambda = fixed_lambda;
             cfg.validate();
             return cfg;
           }),
           py::arg("k_folds") = 5, py::arg("cv") = "loocv", py::arg("grid") = 100, py::arg("min_ratio") = 1e-3,
           py::arg("penalize_guess") = false, py::arg("tol") = 1e-7, py::arg("max_iter") = 10000, py::arg("seed") = 0,
           py::arg("fixed_lambda") = py::none())
      .def_readwrite("k_folds", &EstimatorConfig::k_folds)
      .def_readwrite("seed", &EstimatorConfig::seed);

  m.def("soft_threshold", &soft_threshold, py::arg("z"), py::arg("gamma"));
  m.def("build_lambda_grid", &build_lambda_grid, py::arg("lmax"), py::arg("grid_size"), py::arg("min_ratio"));
  m.def("empirical_quantile", &empirical_quantile, py::arg("values"), py::arg("target"));
  m.def("average_image_embeddings", &average_image_embeddings, py::arg("vectors"), py::arg("max_images") = 12);
  m.def("concat_features", &concat_features, py::arg("image_block"), py::arg("text_block"));

  py::class_<LassoFit>(m, "LassoFit")
      .def_readonly("intercept", &LassoFit::intercept)
      .def_readonly("unpenalized_coefs", &LassoFit::unpenalized_coefs)
      .def_readonly("penalized_coefs", &LassoFit::penalized_coefs)
      .def_readonly("lambda_", &LassoFit::lambda)
      .def_readonly("n_iterations", &LassoFit::n_iterations)
      .def_readonly("converged", &LassoFit::converged)
      .def_readonly("active_set_size", &LassoFit::active_set_size);

  py::class_<DesignSpec>(m, "DesignSpec")
      .def_static("build", &DesignSpec::build, py::arg("response"), py::arg("unpenalized"), py::arg("penalized"))
      .def_readonly("penalized_mean", &DesignSpec::penalized_mean)
      .def_readonly("penalized_scale", &DesignSpec::penalized_scale);

  m.def(
      "fit_lasso",
      [](const DesignSpec& spec, double lambda, double tol, int max_iter) {
        return fit_lasso(spec, lambda, nullptr, FitOptions{tol, max_iter, false});
      },
      py::arg("spec"), py::arg("lambda_"), py::arg("tol") = 1e-7, py::arg("max_iter") = 10000);
  m.def("lambda_max", &lambda_max, py::arg("spec"));
  m.def("kkt_residual", &kkt_residual, py::arg("spec"), py::arg("fit"), py::arg("lambda_"));

  py::class_<LambdaPath>(m, "LambdaPath")
      .def_readonly("grid", &LambdaPath::grid)
      .def_readonly("cv_errors", &LambdaPath::cv_errors)
      .def_readonly("chosen_index", &LambdaPath::chosen_index)
      .def("chosen_lambda", &LambdaPath::chosen_lambda);
  m.def(
      "select_lambda_cv",
      [](const DesignSpec& spec, const std::vector<double>& grid, const std::string& cv, std::uint64_t seed) {
        return select_lambda_cv(spec, grid, cv_from_string(cv), seed);
      },
      py::arg("spec"), py::arg("grid"), py::arg("cv") = "loocv", py::arg("seed") = 0);

  m.def(
      "residual_on_residual",
      [](const Eigen::VectorXd& r, const Eigen::VectorXd& v) {
        const auto est = residual_on_residual(r, v);
        return std::make_pair(est.theta_hat, est.robust_se);
      },
      py::arg("r"), py::arg("v"));

  py::class_<GuessCorrelations>(m, "GuessCorrelations")
      .def_readonly("outcome", &GuessCorrelations::outcome)
      .def_readonly("treatment", &GuessCorrelations::treatment);

  py::class_<DmlResult>(m, "DmlResult")
      .def_readonly("theta_hat", &DmlResult::theta_hat)
      .def_readonly("robust_se", &DmlResult::robust_se)
      .def_readonly("rmse_y", &DmlResult::rmse_y)
      .def_readonly("rmse_d", &DmlResult::rmse_d)
      .def_readonly("residuals_r", &DmlResult::residuals_r)
      .def_readonly("residuals_v", &DmlResult::residuals_v)
      .def_readonly("guess_correlations", &DmlResult::guess_correlations)
      .def_readonly("used_guesses", &DmlResult::used_guesses)
      .def_readonly("fingerprint", &DmlResult::fingerprint);

  m.def("run_dml", py::overload_cast<const ObservationTable&, const EstimatorConfig&, bool>(&run_dml),
        py::arg("table"), py::arg("config"), py::arg("use_guesses"));
  m.def("run_dml_with_plan",
        py::overload_cast<const ObservationTable&, const FoldPlan&, const EstimatorConfig&, bool>(&run_dml),
        py::arg("table"), py::arg("plan"), py::arg("config"), py::arg("use_guesses"));

  py::class_<ComparisonReport>(m, "ComparisonReport")
      .def_readonly("delta_rmse_y", &ComparisonReport::delta_rmse_y)
      .def_readonly("delta_rmse_d", &ComparisonReport::delta_rmse_d)
      .def_readonly("delta_se", &ComparisonReport::delta_se)
      .def_readonly("theta_with", &ComparisonReport::theta_with)
      .def_readonly("theta_without", &ComparisonReport::theta_without)
      .def("table", &ComparisonReport::table);
  m.def("compare_runs", &compare_runs, py::arg("with_guess"), py::arg("without_guess"));

  py::enum_<FunctionalForm>(m, "FunctionalForm")
      .value("sparse_linear", FunctionalForm::sparse_linear)
      .value("index_nonlinear", FunctionalForm::index_nonlinear);

  py::class_<NuisanceForm>(m, "NuisanceForm")
      .def(py::init([](FunctionalForm form, int sparsity, double amplitude) {
             return NuisanceForm{form, sparsity, amplitude};
           }),
           py::arg("form") = FunctionalForm::sparse_linear, py::arg("sparsity") = 5, py::arg("amplitude") = 1.0)
      .def_readwrite("form", &NuisanceForm::form)
      .def_readwrite("sparsity", &NuisanceForm::sparsity)
      .def_readwrite("amplitude", &NuisanceForm::amplitude);

  py::class_<DgpSpec>(m, "DgpSpec")
      .def(py::init([](std::size_t n, Eigen::Index p, double theta0, NuisanceForm g_form, NuisanceForm m_form,
                       double noise_sd_u, double noise_sd_v, double rho_y, double rho_d, std::uint64_t seed,
                       bool rank_transform_d) {
             DgpSpec spec{n, p, theta0, g_form, m_form, noise_sd_u, noise_sd_v, rho_y, rho_d, seed, rank_transform_d};
             spec.validate();
             return spec;
           }),
           py::arg("n"), py::arg("p"), py::arg("theta0") = 0.0, py::arg("g_form") = NuisanceForm{},
           py::arg("m_form") = NuisanceForm{}, py::arg("noise_sd_u") = 1.0, py::arg("noise_sd_v") = 1.0,
           py::arg("rho_y") = 1.0, py::arg("rho_d") = 1.0, py::arg("seed") = 0, py::arg("rank_transform_d") = false)
      .def_readwrite("seed", &DgpSpec::seed)
      .def_readwrite("rho_y", &DgpSpec::rho_y)
      .def_readwrite("rho_d", &DgpSpec::rho_d);

  py::class_<SynthDataset>(m, "SynthDataset")
      .def_readonly("table", &SynthDataset::table)
      .def_readonly("g_values", &SynthDataset::g_values)
      .def_readonly("m_values", &SynthDataset::m_values)
      .def_readonly("u", &SynthDataset::u)
      .def_readonly("v", &SynthDataset::v);
  m.def("generate", &generate, py::arg("spec"));

  py::class_<ArmSummary>(m, "ArmSummary")
      .def_readonly("mean_theta", &ArmSummary::mean_theta)
      .def_readonly("sd_theta", &ArmSummary::sd_theta)
      .def_readonly("mean_se", &ArmSummary::mean_se)
      .def_readonly("coverage", &ArmSummary::coverage)
      .def_readonly("mean_rmse_y", &ArmSummary::mean_rmse_y)
      .def_readonly("mean_rmse_d", &ArmSummary::mean_rmse_d);

  py::class_<MonteCarloSummary>(m, "MonteCarloSummary")
      .def_readonly("reps", &MonteCarloSummary::reps)
      .def_readonly("with_guess", &MonteCarloSummary::with_guess)
      .def_readonly("without_guess", &MonteCarloSummary::without_guess)
      .def_readonly("frac_rmse_y_improved", &MonteCarloSummary::frac_rmse_y_improved)
      .def_readonly("frac_se_improved", &MonteCarloSummary::frac_se_improved)
      .def_readonly("mean_delta_rmse_d", &MonteCarloSummary::mean_delta_rmse_d);
  m.def("monte_carlo", &monte_carlo, py::arg("spec"), py::arg("config"), py::arg("reps"), py::arg("workers") = 1);

  m.def(
      "parse_final_tag",
      [](const std::string& raw, const std::string& kind) { return parse_final_tag(raw, prompt_kind_from_name(kind)); },
      py::arg("raw"), py::arg("kind"));
  m.def(
      "mask_listing_text",
      [](const std::string& text) { return mask_listing_text(text, MaskingPolicy::defaults()); },
      py::arg("text"));
  m.def(
      "system_prompt",
      [](const std::string& kind) { return system_prompt_for(prompt_kind_from_name(kind)); },
      py::arg("kind"));
}
