#include <doctest.h>

#include <cmath>

#include "dmlg/error.hpp"
#include "dmlg/preprocess.hpp"
#include "test_util.hpp"

using namespace dmlg;

namespace {

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

RawListing listing(const std::string& id, double price, long long score) {
  RawListing l;
  l.id = id;
  l.price = price;
  l.feedback_score = score;
  l.image_embeddings = {vec2(1.0, 2.0)};
  l.text_embedding = vec2(0.5, -0.5);
  return l;
}

}  // namespace

TEST_CASE("averaging: single vector is unit-normalized") {
  const auto out = average_image_embeddings({vec2(3.0, 4.0)}, 12);
  CHECK(out[0] == doctest::Approx(0.6));
  CHECK(out[1] == doctest::Approx(0.8));
}

TEST_CASE("averaging: identical directions average to themselves") {
  const auto out = average_image_embeddings({vec2(1.0, 0.0), vec2(2.0, 0.0)}, 12);
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == doctest::Approx(0.0));
}

TEST_CASE("averaging: orthogonal unit vectors") {
  const auto out = average_image_embeddings({vec2(1.0, 0.0), vec2(0.0, 1.0)}, 12);
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(0.5));
  CHECK(out.norm() == doctest::Approx(0.7071067811865476));
}

TEST_CASE("averaging: zero vector is a degenerate-norm error") {
  try {
    average_image_embeddings({vec2(0.0, 0.0)}, 12);
    FAIL("expected degenerate-norm error");
  } catch (const Error& e) {
    CHECK(e.kind() == errc::degenerate_norm);
  }
}

TEST_CASE("averaging: vectors past the cap are ignored") {
  std::vector<Eigen::VectorXd> vecs(12, vec2(1.0, 1.0));
  const auto base = average_image_embeddings(vecs, 12);
  vecs.push_back(vec2(-5.0, 7.0));
  const auto with_extra = average_image_embeddings(vecs, 12);
  CHECK((base - with_extra).norm() == 0.0);
}

TEST_CASE("averaging: output norm never exceeds one") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Eigen::VectorXd> vecs;
    const int count = 1 + static_cast<int>(rng.bounded(8));
    for (int i = 0; i < count; ++i) vecs.push_back(test::random_vector(rng, 6));
    const auto out = average_image_embeddings(vecs, 12);
    CHECK(out.norm() <= 1.0 + 1e-12);
  }
}

TEST_CASE("concat keeps image block first") {
  Eigen::VectorXd img(2), txt(1);
  img << 1.0, 2.0;
  txt << 3.0;
  const auto out = concat_features(img, txt);
  REQUIRE(out.size() == 3);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 2.0);
  CHECK(out[2] == 3.0);

  const auto img_only = concat_features(img, Eigen::VectorXd(0));
  CHECK(img_only.size() == 2);
  CHECK((img_only - img).norm() == 0.0);

  CHECK(concat_features(Eigen::VectorXd::Zero(1408), Eigen::VectorXd::Zero(768)).size() == 2176);
}

TEST_CASE("empirical quantile: examples") {
  CHECK(empirical_quantile({1, 2, 3}, 3) == doctest::Approx(1.0));
  CHECK(empirical_quantile({5, 5, 5, 5}, 5) == doctest::Approx(0.625));
  CHECK(empirical_quantile({10, 20}, 10) == doctest::Approx(0.5));
}

TEST_CASE("empirical quantile: monotone with range in (0, 1]") {
  Rng rng(3);
  std::vector<double> values;
  for (int i = 0; i < 40; ++i) values.push_back(std::floor(rng.normal() * 3.0));
  double prev = 0.0;
  for (double target = -12.0; target <= 12.0; target += 0.25) {
    const double q = empirical_quantile(values, target);
    CHECK(q > 0.0);
    CHECK(q <= 1.0);
    CHECK(q >= prev);
    prev = q;
  }
}

TEST_CASE("build_table applies the variable definitions") {
  std::vector<RawListing> listings;
  listings.push_back(listing("a", 108.49, 100));
  listings.push_back(listing("b", 1.0, 50));
  listings.push_back(listing("c", 20.0, 200));
  listings[0].price_guess = 108.49;
  listings[1].price_guess = 2.5;
  listings[2].price_guess = 30.0;
  listings[0].score_guess = 200;  // ties the largest observed score
  listings[1].score_guess = 10;
  listings[2].score_guess = 120;

  const BuiltTable built = build_table(listings, TransformOptions{});
  const ObservationTable& t = built.table;
  CHECK(built.p_img == 2);
  CHECK(built.p_txt == 2);
  CHECK(t.p() == 4);

  CHECK(t.y[0] == doctest::Approx(4.6867).epsilon(1e-4));
  CHECK(t.y[1] == 0.0);

  // Distinct scores 50 < 100 < 200: midrank quantiles 1/3, 2/3, 1.
  CHECK(t.d[1] == doctest::Approx(1.0 / 3.0));
  CHECK(t.d[0] == doctest::Approx(2.0 / 3.0));
  CHECK(t.d[2] == doctest::Approx(1.0));

  REQUIRE(t.y_guess.has_value());
  CHECK((*t.y_guess)[0] == doctest::Approx(std::log(108.49)));
  REQUIRE(t.d_guess.has_value());
  CHECK((*t.d_guess)[0] == doctest::Approx(1.0));  // guess equals the max observed score

  CHECK(validate_table(t).ok());
}

TEST_CASE("build_table: nonpositive price names the row") {
  std::vector<RawListing> listings{listing("a", 10.0, 1), listing("b", -2.0, 2)};
  try {
    build_table(listings, TransformOptions{});
    FAIL("expected transform error");
  } catch (const Error& e) {
    CHECK(e.kind() == errc::transform);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("build_table: partial guess columns rejected") {
  std::vector<RawListing> listings{listing("a", 10.0, 1), listing("b", 20.0, 2)};
  listings[0].price_guess = 15.0;
  CHECK_THROWS_AS(build_table(listings, TransformOptions{}), Error);
}

TEST_CASE("build_table then validate_table passes on random input") {
  Rng rng(17);
  std::vector<RawListing> listings;
  for (int i = 0; i < 25; ++i) {
    RawListing l;
    l.id = "row-" + std::to_string(i);
    l.price = 1.0 + std::abs(rng.normal()) * 50.0;
    l.feedback_score = static_cast<long long>(rng.bounded(5000));
    const int n_imgs = 1 + static_cast<int>(rng.bounded(14));
    for (int k = 0; k < n_imgs; ++k) l.image_embeddings.push_back(test::random_vector(rng, 5));
    l.text_embedding = test::random_vector(rng, 3);
    listings.push_back(std::move(l));
  }
  const BuiltTable built = build_table(listings, TransformOptions{});
  CHECK(validate_table(built.table).ok());
  CHECK(built.table.p() == 8);
}
