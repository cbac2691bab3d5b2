#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "dmlg/dataset_io.hpp"
#include "dmlg/error.hpp"
#include "test_util.hpp"

using namespace dmlg;

namespace {

std::vector<RawListing> sample_listings() {
  std::vector<RawListing> listings;
  Rng rng(15);
  for (int i = 0; i < 4; ++i) {
    RawListing l;
    l.id = "item-" + std::to_string(i);
    l.price = 10.0 * (i + 1);
    l.feedback_score = 100 * i;
    l.image_embeddings = {test::random_vector(rng, 3), test::random_vector(rng, 3)};
    l.text_embedding = test::random_vector(rng, 2);
    l.price_guess = 12.0 * (i + 1);
    l.score_guess = 90 * i + 5;
    l.listing_text = "Title: item " + std::to_string(i);
    l.image_links = {"https://img/" + std::to_string(i)};
    listings.push_back(std::move(l));
  }
  return listings;
}

ObservationTable sample_table(Rng& rng) {
  ObservationTable t;
  t.y = test::random_vector(rng, 7);
  t.d = test::random_vector(rng, 7);
  t.x = test::random_matrix(rng, 7, 4);
  t.y_guess = test::random_vector(rng, 7);
  t.d_guess = test::random_vector(rng, 7);
  for (int i = 0; i < 7; ++i) t.ids.push_back("row-" + std::to_string(i));
  return t;
}

}  // namespace

TEST_CASE("raw ndjson round trip") {
  test::TempDir dir;
  const auto original = sample_listings();
  const auto path = dir.path() / "raw.ndjson";
  io::write_raw_ndjson(path, original);
  const auto loaded = io::read_raw_ndjson(path);

  REQUIRE(loaded.size() == original.size());
  for (std::size_t i = 0; i < original.size(); ++i) {
    CHECK(loaded[i].id == original[i].id);
    CHECK(loaded[i].price == original[i].price);
    CHECK(loaded[i].feedback_score == original[i].feedback_score);
    REQUIRE(loaded[i].image_embeddings.size() == original[i].image_embeddings.size());
    CHECK((loaded[i].image_embeddings[0] - original[i].image_embeddings[0]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded[i].text_embedding - original[i].text_embedding).cwiseAbs().maxCoeff() == 0.0);
    CHECK(loaded[i].price_guess == original[i].price_guess);
    CHECK(loaded[i].score_guess == original[i].score_guess);
    CHECK(loaded[i].listing_text == original[i].listing_text);
    CHECK(loaded[i].image_links == original[i].image_links);
  }
}

TEST_CASE("raw ndjson errors carry line coordinates") {
  test::TempDir dir;
  const auto path = dir.path() / "bad.ndjson";
  io::write_text_file(path, "{\"id\": \"a\"}\n");
  try {
    io::read_raw_ndjson(path);
    FAIL("expected io error");
  } catch (const Error& e) {
    CHECK(e.kind() == errc::io);
    CHECK(std::string(e.what()).find(":1") != std::string::npos);
  }
}

TEST_CASE("dataset directory round trip is bit exact") {
  test::TempDir dir;
  Rng rng(8);
  const ObservationTable t = sample_table(rng);
  io::DatasetMeta meta;
  meta.p_img = 3;
  meta.p_txt = 1;
  meta.config_fingerprint = "cafe";
  meta.version = "0.1.0";
  io::write_dataset(dir.path() / "ds", t, meta);
  const auto [loaded, loaded_meta] = io::read_dataset(dir.path() / "ds");

  CHECK((loaded.y - t.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.d - t.d).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.x - t.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((*loaded.y_guess - *t.y_guess).cwiseAbs().maxCoeff() == 0.0);
  CHECK((*loaded.d_guess - *t.d_guess).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loaded.ids == t.ids);
  CHECK(loaded_meta.p_img == 3);
  CHECK(loaded_meta.p_txt == 1);
  CHECK(loaded_meta.config_fingerprint == "cafe");
}

TEST_CASE("dataset without guess columns round trips") {
  test::TempDir dir;
  Rng rng(9);
  ObservationTable t = sample_table(rng);
  t.y_guess.reset();
  t.d_guess.reset();
  io::write_dataset(dir.path() / "ds", t, {});
  const auto [loaded, meta] = io::read_dataset(dir.path() / "ds");
  CHECK_FALSE(loaded.y_guess.has_value());
  CHECK_FALSE(loaded.d_guess.has_value());
  CHECK((loaded.x - t.x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("summary statistics") {
  const auto rows = io::summarize_listings(sample_listings());
  REQUIRE(rows.size() >= 6);
  CHECK(rows[0].name == "price");
  CHECK(rows[0].mean == doctest::Approx(25.0));
  CHECK(rows[0].min == doctest::Approx(10.0));
  CHECK(rows[0].max == doctest::Approx(40.0));
  CHECK(rows[0].median == doctest::Approx(25.0));
  CHECK(rows[1].name == "log price");
  CHECK(rows[1].median == doctest::Approx(0.5 * (std::log(20.0) + std::log(30.0))));
  CHECK(rows[2].name == "feedback score");
  CHECK(rows[3].name == "# images");
  CHECK(rows[3].mean == doctest::Approx(2.0));
  const std::string text = io::format_summary(rows);
  CHECK(text.find("price") != std::string::npos);
  CHECK(text.find("median") != std::string::npos);
}

TEST_CASE("dml result json round trip") {
  DmlResult result;
  result.theta_hat = -0.0525;
  result.robust_se = 0.1677;
  result.rmse_y = 0.7357;
  result.rmse_d = 0.1985;
  result.residuals_r = Eigen::Vector3d(0.1, -0.2, 0.3);
  result.residuals_v = Eigen::Vector3d(-0.4, 0.5, -0.6);
  result.outcome_lambdas = {0.1, 0.2};
  result.treatment_lambdas = {0.3, 0.4};
  result.used_guesses = true;
  result.fingerprint = "deadbeef";
  result.guess_correlations = GuessCorrelations{0.669, 0.500};

  const auto j = io::dml_result_to_json(result);
  const DmlResult back = io::dml_result_from_json(j);
  CHECK(back.theta_hat == result.theta_hat);
  CHECK(back.robust_se == result.robust_se);
  CHECK((back.residuals_r - result.residuals_r).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.outcome_lambdas == result.outcome_lambdas);
  CHECK(back.used_guesses);
  CHECK(back.fingerprint == "deadbeef");
  REQUIRE(back.guess_correlations.has_value());
  CHECK(back.guess_correlations->outcome == 0.669);
}

TEST_CASE("guess files join onto listings by id") {
  test::TempDir dir;
  auto listings = sample_listings();
  for (auto& l : listings) {
    l.price_guess.reset();
    l.score_guess.reset();
  }

  BatchResult batch;
  batch.records.resize(listings.size());
  std::vector<ListingInput> inputs;
  for (std::size_t i = 0; i < listings.size(); ++i) {
    inputs.push_back({listings[i].id, "text", {}});
    PredictionRecord rec;
    rec.parsed_value = 100.0 + static_cast<double>(i);
    rec.attempts = 1;
    rec.model_id = "replay";
    batch.records[i] = rec;
  }
  const auto path = dir.path() / "guesses.json";
  io::write_guesses(path, PromptKind::price, batch, inputs, {{"config_fingerprint", "f"}});
  io::apply_guess_file(listings, path);
  for (std::size_t i = 0; i < listings.size(); ++i) {
    REQUIRE(listings[i].price_guess.has_value());
    CHECK(*listings[i].price_guess == 100.0 + static_cast<double>(i));
  }
}

// Bundled-data checks; skipped when DMLG_DATA_DIR is not set (ctest sets it).
TEST_CASE("bundled calibration file lands on the documented scales") {
  const char* data_dir = std::getenv("DMLG_DATA_DIR");
  if (data_dir == nullptr) return;
  const auto listings = io::read_raw_ndjson(std::filesystem::path(data_dir) / "calibration_raw.ndjson");
  REQUIRE(listings.size() == 333);
  const auto rows = io::summarize_listings(listings);
  REQUIRE(rows.size() >= 3);
  CHECK(rows[0].name == "price");
  CHECK(rows[0].median == doctest::Approx(108.49).epsilon(0.02));
  CHECK(rows[1].name == "log price");
  CHECK(rows[1].median == doctest::Approx(4.69).epsilon(0.01));
  CHECK(rows[2].median == doctest::Approx(4062).epsilon(0.05));

  const BuiltTable built = build_table(listings, TransformOptions{});
  CHECK(validate_table(built.table).ok());
  CHECK(built.table.has_guesses());
  CHECK(built.table.d.maxCoeff() <= 1.0);
  CHECK(built.table.d.minCoeff() > 0.0);
}

TEST_CASE("bundled flagship dataset: guesses lower the outcome RMSE") {
  const char* data_dir = std::getenv("DMLG_DATA_DIR");
  if (data_dir == nullptr) return;
  const auto [table, meta] = io::read_dataset(std::filesystem::path(data_dir) / "flagship");
  REQUIRE(table.n() == 333);
  REQUIRE(table.p() == 200);
  REQUIRE(table.has_guesses());
  CHECK(meta.p_img == 129);

  EstimatorConfig cfg;
  cfg.k_folds = 5;
  cfg.cv_mode = CvMode::kfold(4);
  cfg.lambda_grid_size = 25;
  cfg.lambda_min_ratio = 0.02;
  cfg.tol = 1e-6;
  cfg.seed = 707;
  const FoldPlan plan = make_fold_plan(333, cfg.k_folds, cfg.seed);
  const DmlResult with = run_dml(table, plan, cfg, true);
  const DmlResult without = run_dml(table, plan, cfg, false);
  CHECK(with.rmse_y < without.rmse_y);
  CHECK(with.robust_se < without.robust_se);
  CHECK(std::abs(with.rmse_d - without.rmse_d) < 0.01);
  REQUIRE(with.guess_correlations.has_value());
  CHECK(with.guess_correlations->outcome == doctest::Approx(0.669).epsilon(0.05));
}
