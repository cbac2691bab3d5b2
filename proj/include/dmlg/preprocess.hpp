#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "dmlg/data_model.hpp"

namespace dmlg {

// One listing as it arrives from the retrieval stage: precomputed embeddings
// plus the raw price/score fields and, when available, service guesses and
// the text/link payload the prediction client needs.
struct RawListing {
  std::string id;
  double price = 0.0;
  long long feedback_score = 0;
  std::vector<Eigen::VectorXd> image_embeddings;
  Eigen::VectorXd text_embedding;
  std::optional<double> price_guess;
  std::optional<long long> score_guess;
  std::string listing_text;              // optional; consumed by the prediction client
  std::vector<std::string> image_links;  // optional; consumed by the prediction client
};

struct TransformOptions {
  int max_images = 12;
};

// Scales each of the first max_images vectors to unit L2 norm and returns
// their arithmetic mean. Vectors past the cap are ignored. A zero vector
// among the used inputs is a degenerate-norm error.
Eigen::VectorXd average_image_embeddings(const std::vector<Eigen::VectorXd>& vectors, int max_images);

// Image block first, text block second; fixed order across the dataset.
Eigen::VectorXd concat_features(const Eigen::VectorXd& img_avg, const Eigen::VectorXd& txt);

// Midrank quantile of target within values, i.e. (#below + (#equal + 1)/2) / n,
// clamped to at most 1 so the range stays within (0, 1] for any target.
double empirical_quantile(const std::vector<double>& values, double target);

// Same, against a pre-sorted sample.
double empirical_quantile_sorted(const std::vector<double>& sorted_values, double target);

struct BuiltTable {
  ObservationTable table;
  Eigen::Index p_img = 0;
  Eigen::Index p_txt = 0;
};

// Applies the variable definitions: y = ln(price), d = empirical quantile of
// the feedback score within the sample, x = averaged image block ++ text
// block. Guess columns, when present on every listing, are mapped through the
// same transforms (ln for price guesses, quantile against the observed score
// distribution for score guesses).
BuiltTable build_table(const std::vector<RawListing>& listings, const TransformOptions& opts);

}  // namespace dmlg
