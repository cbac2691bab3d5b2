// Command-line driver: ingest raw listings, run service predictions, fit the
// cross-fitted estimator, run Monte Carlo simulations, and render saved
// results. All randomness flows from --seed; with --workers 1 every command
// is byte-reproducible.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "dmlg/dataset_io.hpp"
#include "dmlg/dml.hpp"
#include "dmlg/error.hpp"
#include "dmlg/fingerprint.hpp"
#include "dmlg/llm_client.hpp"
#include "dmlg/preprocess.hpp"
#include "dmlg/synth.hpp"

namespace {

using dmlg::errc;
using dmlg::Error;

struct RunConfig {
  dmlg::EstimatorConfig est;
  int workers = 1;
  int max_images = 12;
  std::string transport = "mock:";
  std::string endpoint;
  std::string model_id;

  std::string canonical() const {
    std::ostringstream os;
    os << "version=" << dmlg::kVersion << ";seed=" << est.seed << ";folds=" << est.k_folds
       << ";cv=" << est.cv_mode.to_string() << ";grid=" << est.lambda_grid_size
       << ";min_ratio=" << est.lambda_min_ratio << ";penalize_guess=" << (est.penalize_guess ? 1 : 0)
       << ";tol=" << est.tol << ";max_iter=" << est.max_iter << ";workers=" << workers
       << ";max_images=" << max_images << ";transport=" << transport;
    if (est.fixed_lambda) os << ";fixed_lambda=" << *est.fixed_lambda;
    return os.str();
  }

  std::string fingerprint() const {
    dmlg::Fnv1a h;
    h.update(canonical());
    return h.hex();
  }

  nlohmann::json echo() const {
    nlohmann::json j{
        {"seed", est.seed},
        {"folds", est.k_folds},
        {"cv", est.cv_mode.to_string()},
        {"grid", est.lambda_grid_size},
        {"min_ratio", est.lambda_min_ratio},
        {"penalize_guess", est.penalize_guess},
        {"tol", est.tol},
        {"max_iter", est.max_iter},
        {"workers", workers},
        {"max_images", max_images},
        {"transport", transport},
    };
    if (est.fixed_lambda) j["fixed_lambda"] = *est.fixed_lambda;
    return j;
  }
};

dmlg::CvMode parse_cv_mode(const std::string& text) {
  if (text == "loocv") return dmlg::CvMode::loocv();
  if (text.rfind("kfold:", 0) == 0) {
    const int inner = std::stoi(text.substr(6));
    return dmlg::CvMode::kfold(inner);
  }
  dmlg::raise(errc::configuration, "unknown cv mode '" + text + "' (expected loocv or kfold:N)");
}

// Flags beat config-file values, which beat defaults.
struct ConfigResolver {
  CLI::App* app;
  nlohmann::json file;

  template <class T>
  void apply(const std::string& flag, const std::string& key, T& target) {
    if (app->count(flag) > 0) return;  // CLI already wrote the value
    if (file.contains(key)) target = file[key].get<T>();
  }
};

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case errc::invalid_table:
    case errc::transform:
    case errc::invalid_partition:
      return 2;
    case errc::nonconvergence:
    case errc::degenerate_treatment:
    case errc::degenerate_grid:
      return 3;
    case errc::service:
    case errc::prediction_unavailable:
    case errc::missing_final:
    case errc::ambiguous_final:
    case errc::parse:
      return 4;
    default:
      return 1;
  }
}

std::unique_ptr<dmlg::Transport> make_transport(const RunConfig& cfg) {
  if (cfg.transport.rfind("mock:", 0) == 0) {
    const std::string dir = cfg.transport.substr(5);
    if (dir.empty()) dmlg::raise(errc::configuration, "mock transport needs a directory: --transport mock:DIR");
    return std::make_unique<dmlg::MockTransport>(dir);
  }
  if (cfg.transport == "live") {
    return std::make_unique<dmlg::HttpTransport>(dmlg::HttpTransport::Settings{cfg.endpoint, cfg.model_id});
  }
  dmlg::raise(errc::configuration, "unknown transport '" + cfg.transport + "' (expected live or mock:DIR)");
}

void print_single_row(const dmlg::DmlResult& res) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-18s %14s %14s %12s %12s\n", "", "RMSE E[Y|W]", "RMSE E[D|W]", "theta_hat",
                "robust SE");
  std::cout << line;
  std::snprintf(line, sizeof(line), "%-18s %14.4f %14.4f %12.6f %12.4f\n",
                res.used_guesses ? "with guesses" : "embeddings only", res.rmse_y, res.rmse_d, res.theta_hat,
                res.robust_se);
  std::cout << line;
}

int cmd_ingest(const RunConfig& cfg, const std::string& raw_path, const std::string& out_dir,
               const std::string& price_guesses, const std::string& score_guesses) {
  auto listings = dmlg::io::read_raw_ndjson(raw_path);
  if (!price_guesses.empty()) dmlg::io::apply_guess_file(listings, price_guesses);
  if (!score_guesses.empty()) dmlg::io::apply_guess_file(listings, score_guesses);

  const dmlg::TransformOptions opts{cfg.max_images};
  const dmlg::BuiltTable built = dmlg::build_table(listings, opts);
  const auto report = dmlg::validate_table(built.table);
  if (!report.ok()) dmlg::raise(errc::invalid_table, report.to_string());

  dmlg::io::DatasetMeta meta;
  meta.p_img = built.p_img;
  meta.p_txt = built.p_txt;
  meta.transform = opts;
  meta.config_fingerprint = cfg.fingerprint();
  meta.version = dmlg::kVersion;
  dmlg::io::write_dataset(out_dir, built.table, meta);

  std::cout << dmlg::io::format_summary(dmlg::io::summarize_listings(listings));
  std::cout << "wrote " << built.table.n() << " rows, p = " << built.table.p() << " (" << built.p_img << " image + "
            << built.p_txt << " text) to " << out_dir << "\n";
  return 0;
}

int cmd_predict(const RunConfig& cfg, const std::string& raw_path, const std::string& kind_name,
                const std::string& out_path, std::string failures_path, double rate_limit) {
  const dmlg::PromptKind kind = dmlg::prompt_kind_from_name(kind_name);
  const auto listings = dmlg::io::read_raw_ndjson(raw_path);
  std::vector<dmlg::ListingInput> inputs;
  inputs.reserve(listings.size());
  for (const auto& l : listings) inputs.push_back({l.id, l.listing_text, l.image_links});

  auto transport = make_transport(cfg);
  const dmlg::BatchResult batch = dmlg::predict_batch(inputs, kind, *transport, cfg.workers, rate_limit);

  const nlohmann::json meta{{"config_fingerprint", cfg.fingerprint()},
                            {"version", dmlg::kVersion},
                            {"config", cfg.echo()}};
  dmlg::io::write_guesses(out_path, kind, batch, inputs, meta);
  if (failures_path.empty()) failures_path = out_path + ".failures.json";
  dmlg::io::write_failures(failures_path, batch, meta);

  const std::size_t ok = batch.records.size() - batch.failures.size();
  std::cout << "predicted " << ok << "/" << batch.records.size() << " listings (" << batch.failures.size()
            << " failures) -> " << out_path << "\n";
  return batch.failures.empty() ? 0 : 4;
}

int cmd_fit(const RunConfig& cfg, const std::string& data_dir, const std::string& out_path,
            const std::string& only_one) {
  auto [table, meta] = dmlg::io::read_dataset(data_dir);
  const auto report = dmlg::validate_table(table);
  if (!report.ok()) dmlg::raise(errc::invalid_table, report.to_string());

  const bool want_with = only_one.empty() || only_one == "with";
  const bool want_without = only_one.empty() || only_one == "without";
  if (want_with && !table.has_guesses()) {
    dmlg::raise(errc::invalid_table, "dataset has no guess columns; rerun with --only-one without");
  }

  const dmlg::FoldPlan plan =
      dmlg::make_fold_plan(static_cast<std::size_t>(table.n()), cfg.est.k_folds, cfg.est.seed);

  nlohmann::json out{{"version", dmlg::kVersion},
                     {"config_fingerprint", cfg.fingerprint()},
                     {"config", cfg.echo()},
                     {"dataset", data_dir}};
  std::optional<dmlg::DmlResult> with, without;
  if (want_with) {
    with = dmlg::run_dml(table, plan, cfg.est, true);
    out["with_guesses"] = dmlg::io::dml_result_to_json(*with);
  }
  if (want_without) {
    without = dmlg::run_dml(table, plan, cfg.est, false);
    out["without_guesses"] = dmlg::io::dml_result_to_json(*without);
  }

  if (with && without) {
    const auto comparison = dmlg::compare_runs(*with, *without);
    out["comparison"] = {{"delta_rmse_y", comparison.delta_rmse_y},
                         {"delta_rmse_d", comparison.delta_rmse_d},
                         {"delta_se", comparison.delta_se}};
    std::cout << comparison.table();
  } else if (with) {
    print_single_row(*with);
  } else if (without) {
    print_single_row(*without);
  }
  if (with && with->guess_correlations) {
    char line[120];
    std::snprintf(line, sizeof(line), "guess-truth correlations: outcome %.3f, treatment %.3f\n",
                  with->guess_correlations->outcome, with->guess_correlations->treatment);
    std::cout << line;
  }

  dmlg::io::write_json_file(out_path, out);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

struct SimulateFlags {
  dmlg::DgpSpec spec;
  std::string g_form = "sparse_linear";
  std::string m_form = "sparse_linear";
  int reps = 100;
  std::string out_path = "mc_summary.json";
  std::string emit_dataset;
  std::string emit_raw;
  Eigen::Index emit_p_img = 0;
};

dmlg::FunctionalForm parse_form(const std::string& name) {
  if (name == "sparse_linear") return dmlg::FunctionalForm::sparse_linear;
  if (name == "index_nonlinear") return dmlg::FunctionalForm::index_nonlinear;
  dmlg::raise(errc::configuration, "unknown form '" + name + "' (expected sparse_linear or index_nonlinear)");
}

int cmd_simulate(const RunConfig& cfg, SimulateFlags flags) {
  flags.spec.g_form.form = parse_form(flags.g_form);
  flags.spec.m_form.form = parse_form(flags.m_form);
  flags.spec.seed = cfg.est.seed;
  flags.spec.validate();

  const dmlg::MonteCarloSummary summary = dmlg::monte_carlo(flags.spec, cfg.est, flags.reps, cfg.workers);

  char line[160];
  std::snprintf(line, sizeof(line), "coverage (with guesses):    %.4f\n", summary.with_guess.coverage);
  std::cout << line;
  std::snprintf(line, sizeof(line), "coverage (embeddings only): %.4f\n", summary.without_guess.coverage);
  std::cout << line;
  std::snprintf(line, sizeof(line), "rmse_y improvement fraction: %.4f\n", summary.frac_rmse_y_improved);
  std::cout << line;
  std::snprintf(line, sizeof(line), "robust-se improvement fraction: %.4f\n", summary.frac_se_improved);
  std::cout << line;
  std::snprintf(line, sizeof(line), "mean delta rmse_d: %.6f (mc se %.6f)\n", summary.mean_delta_rmse_d,
                summary.se_mean_delta_rmse_d);
  std::cout << line;

  nlohmann::json dgp{{"n", flags.spec.n},
                     {"p", flags.spec.p},
                     {"theta0", flags.spec.theta0},
                     {"g_form", flags.g_form},
                     {"g_sparsity", flags.spec.g_form.sparsity},
                     {"g_amplitude", flags.spec.g_form.amplitude},
                     {"m_form", flags.m_form},
                     {"m_sparsity", flags.spec.m_form.sparsity},
                     {"m_amplitude", flags.spec.m_form.amplitude},
                     {"noise_sd_u", flags.spec.noise_sd_u},
                     {"noise_sd_v", flags.spec.noise_sd_v},
                     {"rho_y", flags.spec.rho_y},
                     {"rho_d", flags.spec.rho_d},
                     {"rank_transform_d", flags.spec.rank_transform_d},
                     {"seed", flags.spec.seed},
                     {"reps", flags.reps}};
  nlohmann::json out{{"version", dmlg::kVersion},
                     {"config_fingerprint", cfg.fingerprint()},
                     {"config", cfg.echo()},
                     {"dgp", dgp},
                     {"summary", dmlg::io::mc_summary_to_json(summary)}};
  dmlg::io::write_json_file(flags.out_path, out);
  std::cout << "wrote " << flags.out_path << "\n";

  if (!flags.emit_dataset.empty() || !flags.emit_raw.empty()) {
    const dmlg::SynthDataset ds = dmlg::generate(flags.spec);  // replication 0
    if (!flags.emit_dataset.empty()) {
      dmlg::io::DatasetMeta meta;
      meta.p_img = flags.emit_p_img > 0 ? flags.emit_p_img : ds.table.p();
      meta.p_txt = ds.table.p() - meta.p_img;
      meta.config_fingerprint = cfg.fingerprint();
      meta.version = dmlg::kVersion;
      dmlg::io::write_dataset(flags.emit_dataset, ds.table, meta);
      std::cout << "wrote dataset " << flags.emit_dataset << "\n";
    }
    if (!flags.emit_raw.empty()) {
      Eigen::Index p_img = flags.emit_p_img;
      if (p_img <= 0) {
        // Default split mirrors the expected embedding model dimensions.
        p_img = std::max<Eigen::Index>(1, (ds.table.p() * 1408 + 1088) / 2176);
      }
      dmlg::io::write_raw_ndjson(flags.emit_raw, dmlg::to_raw_listings(ds, p_img));
      std::cout << "wrote raw listings " << flags.emit_raw << "\n";
    }
  }
  return 0;
}

int cmd_report(const std::string& single, const std::string& with_path, const std::string& without_path) {
  nlohmann::json with_json, without_json;
  if (!single.empty()) {
    const auto j = dmlg::io::read_json_file(single);
    if (j.contains("with_guesses")) with_json = j["with_guesses"];
    if (j.contains("without_guesses")) without_json = j["without_guesses"];
  } else {
    if (with_path.empty() || without_path.empty()) {
      dmlg::raise(errc::configuration, "report needs a result file or both --with and --without");
    }
    auto pick = [](const nlohmann::json& j, const char* key) {
      return j.contains(key) ? j[key] : j;
    };
    with_json = pick(dmlg::io::read_json_file(with_path), "with_guesses");
    without_json = pick(dmlg::io::read_json_file(without_path), "without_guesses");
  }

  if (!with_json.is_null() && !without_json.is_null()) {
    const auto comparison =
        dmlg::compare_runs(dmlg::io::dml_result_from_json(with_json), dmlg::io::dml_result_from_json(without_json));
    std::cout << comparison.table();
  } else if (!with_json.is_null()) {
    print_single_row(dmlg::io::dml_result_from_json(with_json));
  } else if (!without_json.is_null()) {
    print_single_row(dmlg::io::dml_result_from_json(without_json));
  } else {
    dmlg::raise(errc::configuration, "result file carries no runs");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"double machine learning with auxiliary guess predictors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dmlg::kVersion);
  app.fallthrough();

  RunConfig cfg;
  std::string config_path;
  std::string cv_text = "loocv";
  double fixed_lambda = -1.0;
  app.add_option("--config", config_path, "JSON config file; flags override its values");
  app.add_option("--seed", cfg.est.seed, "master seed for all randomness");
  app.add_option("--folds", cfg.est.k_folds, "cross-fitting fold count")->capture_default_str();
  app.add_option("--cv", cv_text, "penalty selection: loocv or kfold:N")->capture_default_str();
  app.add_option("--grid", cfg.est.lambda_grid_size, "lambda grid size")->capture_default_str();
  app.add_option("--min-ratio", cfg.est.lambda_min_ratio, "lambda_min / lambda_max")->capture_default_str();
  app.add_flag("--penalize-guess", cfg.est.penalize_guess, "penalize the guess coefficient too");
  app.add_option("--tol", cfg.est.tol, "solver convergence tolerance")->capture_default_str();
  app.add_option("--max-iter", cfg.est.max_iter, "solver sweep cap")->capture_default_str();
  app.add_option("--fixed-lambda", fixed_lambda, "skip selection and fit at this penalty (debug)");
  app.add_option("--workers", cfg.workers, "worker threads (1 = bit-reproducible)")->capture_default_str();
  app.add_option("--transport", cfg.transport, "prediction transport: live or mock:DIR");
  app.add_option("--endpoint", cfg.endpoint, "live endpoint url");
  app.add_option("--model", cfg.model_id, "live model id");
  app.add_option("--max-images", cfg.max_images, "image embeddings averaged per listing")->capture_default_str();

  auto* ingest = app.add_subcommand("ingest", "raw ndjson listings -> canonical dataset directory");
  std::string raw_path, out_dir, price_guesses, score_guesses;
  ingest->add_option("--raw", raw_path, "raw ndjson file")->required();
  ingest->add_option("--out", out_dir, "output dataset directory")->required();
  ingest->add_option("--price-guesses", price_guesses, "guesses file to join (price)");
  ingest->add_option("--score-guesses", score_guesses, "guesses file to join (feedback score)");

  auto* predict = app.add_subcommand("predict", "query the prediction service for one target");
  std::string kind_name = "price", guesses_out = "guesses.json", failures_out;
  double rate_limit = 0.0;
  predict->add_option("--raw", raw_path, "raw ndjson file with listing_text/image_links")->required();
  predict->add_option("--kind", kind_name, "price or feedback_score")->required();
  predict->add_option("--out", guesses_out, "guesses output file")->capture_default_str();
  predict->add_option("--failures", failures_out, "failures sidecar path");
  predict->add_option("--rate-limit", rate_limit, "requests per second (0 = unlimited)");

  auto* fit = app.add_subcommand("fit", "cross-fitted residual-on-residual estimate on a dataset");
  std::string data_dir, fit_out = "dml_result.json", only_one;
  fit->add_option("--data", data_dir, "dataset directory")->required();
  fit->add_option("--out", fit_out, "result file")->capture_default_str();
  fit->add_option("--only-one", only_one, "run a single arm: with or without")
      ->check(CLI::IsMember({"with", "without"}));

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on a synthetic data-generating process");
  SimulateFlags sim;
  simulate->add_option("--reps", sim.reps, "replications")->capture_default_str();
  simulate->add_option("--n", sim.spec.n, "sample size")->required();
  simulate->add_option("--p", sim.spec.p, "feature dimension")->required();
  simulate->add_option("--theta0", sim.spec.theta0, "true effect")->capture_default_str();
  simulate->add_option("--g-form", sim.g_form, "sparse_linear or index_nonlinear")->capture_default_str();
  simulate->add_option("--g-sparsity", sim.spec.g_form.sparsity)->capture_default_str();
  simulate->add_option("--g-amplitude", sim.spec.g_form.amplitude)->capture_default_str();
  simulate->add_option("--m-form", sim.m_form, "sparse_linear or index_nonlinear")->capture_default_str();
  simulate->add_option("--m-sparsity", sim.spec.m_form.sparsity)->capture_default_str();
  simulate->add_option("--m-amplitude", sim.spec.m_form.amplitude)->capture_default_str();
  simulate->add_option("--noise-u", sim.spec.noise_sd_u, "outcome noise sd")->capture_default_str();
  simulate->add_option("--noise-v", sim.spec.noise_sd_v, "treatment noise sd")->capture_default_str();
  simulate->add_option("--rho-y", sim.spec.rho_y, "outcome guess quality in [0,1]")->capture_default_str();
  simulate->add_option("--rho-d", sim.spec.rho_d, "treatment guess quality in [0,1]")->capture_default_str();
  simulate->add_flag("--rank-d", sim.spec.rank_transform_d, "rank-transform d onto (0,1]");
  simulate->add_option("--out", sim.out_path, "summary output file")->capture_default_str();
  simulate->add_option("--emit-dataset", sim.emit_dataset, "also write replication 0 as a dataset directory");
  simulate->add_option("--emit-raw", sim.emit_raw, "also write replication 0 in the raw ingestion format");
  simulate->add_option("--emit-p-img", sim.emit_p_img, "image-block width for emitted data");

  auto* report = app.add_subcommand("report", "render saved results in the comparison layout");
  std::string report_single, report_with, report_without;
  report->add_option("result", report_single, "result file from fit");
  report->add_option("--with", report_with, "with-guess result file");
  report->add_option("--without", report_without, "without-guess result file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) {
      ConfigResolver resolver{&app, dmlg::io::read_json_file(config_path)};
      resolver.apply("--seed", "seed", cfg.est.seed);
      resolver.apply("--folds", "folds", cfg.est.k_folds);
      resolver.apply("--cv", "cv", cv_text);
      resolver.apply("--grid", "grid", cfg.est.lambda_grid_size);
      resolver.apply("--min-ratio", "min_ratio", cfg.est.lambda_min_ratio);
      resolver.apply("--penalize-guess", "penalize_guess", cfg.est.penalize_guess);
      resolver.apply("--tol", "tol", cfg.est.tol);
      resolver.apply("--max-iter", "max_iter", cfg.est.max_iter);
      resolver.apply("--workers", "workers", cfg.workers);
      resolver.apply("--transport", "transport", cfg.transport);
      resolver.apply("--endpoint", "endpoint", cfg.endpoint);
      resolver.apply("--model", "model", cfg.model_id);
      resolver.apply("--max-images", "max_images", cfg.max_images);
    }
    cfg.est.cv_mode = parse_cv_mode(cv_text);
    if (fixed_lambda >= 0.0) cfg.est.fixed_lambda = fixed_lambda;
    cfg.est.validate();

    if (ingest->parsed()) return cmd_ingest(cfg, raw_path, out_dir, price_guesses, score_guesses);
    if (predict->parsed()) return cmd_predict(cfg, raw_path, kind_name, guesses_out, failures_out, rate_limit);
    if (fit->parsed()) return cmd_fit(cfg, data_dir, fit_out, only_one);
    if (simulate->parsed()) return cmd_simulate(cfg, sim);
    if (report->parsed()) return cmd_report(report_single, report_with, report_without);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
