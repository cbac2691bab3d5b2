#include "dmlg/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "dmlg/error.hpp"

namespace dmlg {

Eigen::VectorXd average_image_embeddings(const std::vector<Eigen::VectorXd>& vectors, int max_images) {
  if (vectors.empty()) raise(errc::invalid_argument, "no image embeddings to average");
  if (max_images < 1) raise(errc::invalid_argument, "max_images must be >= 1");

  const auto used = std::min<std::size_t>(vectors.size(), static_cast<std::size_t>(max_images));
  const Eigen::Index dim = vectors.front().size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  for (std::size_t i = 0; i < used; ++i) {
    const auto& v = vectors[i];
    if (v.size() != dim) {
      raise(errc::invalid_argument, "image embedding " + std::to_string(i) + " has dimension " +
                                        std::to_string(v.size()) + ", expected " + std::to_string(dim));
    }
    const double norm = v.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      raise(errc::degenerate_norm, "image embedding " + std::to_string(i) + " cannot be normalized");
    }
    sum += v / norm;
  }
  return sum / static_cast<double>(used);
}

Eigen::VectorXd concat_features(const Eigen::VectorXd& img_avg, const Eigen::VectorXd& txt) {
  Eigen::VectorXd out(img_avg.size() + txt.size());
  out.head(img_avg.size()) = img_avg;
  out.tail(txt.size()) = txt;
  return out;
}

double empirical_quantile_sorted(const std::vector<double>& sorted_values, double target) {
  if (sorted_values.empty()) raise(errc::invalid_argument, "empty sample for quantile");
  const auto lo = std::lower_bound(sorted_values.begin(), sorted_values.end(), target);
  const auto hi = std::upper_bound(lo, sorted_values.end(), target);
  const double below = static_cast<double>(lo - sorted_values.begin());
  const double equal = static_cast<double>(hi - lo);
  const double midrank = below + (equal + 1.0) / 2.0;
  const double n = static_cast<double>(sorted_values.size());
  return std::min(midrank / n, 1.0);
}

double empirical_quantile(const std::vector<double>& values, double target) {
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  return empirical_quantile_sorted(sorted, target);
}

BuiltTable build_table(const std::vector<RawListing>& listings, const TransformOptions& opts) {
  if (listings.empty()) raise(errc::invalid_argument, "no listings");

  const Eigen::Index n = static_cast<Eigen::Index>(listings.size());

  // Per-listing validation happens up front so errors carry row coordinates.
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& l = listings[static_cast<std::size_t>(i)];
    if (l.image_embeddings.empty()) {
      raise(errc::transform, "row " + std::to_string(i) + " (id " + l.id + "): no image embeddings");
    }
    if (!(l.price > 0.0)) {
      raise(errc::transform, "row " + std::to_string(i) + " (id " + l.id + "): price must be positive");
    }
    if (l.price_guess && !(*l.price_guess > 0.0)) {
      raise(errc::transform, "row " + std::to_string(i) + " (id " + l.id + "): price_guess must be positive");
    }
    if (l.score_guess && *l.score_guess < 0) {
      raise(errc::transform, "row " + std::to_string(i) + " (id " + l.id + "): score_guess must be >= 0");
    }
  }

  const bool any_price_guess =
      std::any_of(listings.begin(), listings.end(), [](const RawListing& l) { return l.price_guess.has_value(); });
  const bool any_score_guess =
      std::any_of(listings.begin(), listings.end(), [](const RawListing& l) { return l.score_guess.has_value(); });
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& l = listings[static_cast<std::size_t>(i)];
    if (any_price_guess && !l.price_guess) {
      raise(errc::transform, "row " + std::to_string(i) + " (id " + l.id + "): price_guess missing while other rows have one");
    }
    if (any_score_guess && !l.score_guess) {
      raise(errc::transform, "row " + std::to_string(i) + " (id " + l.id + "): score_guess missing while other rows have one");
    }
  }

  std::vector<double> scores_sorted;
  scores_sorted.reserve(static_cast<std::size_t>(n));
  for (const auto& l : listings) scores_sorted.push_back(static_cast<double>(l.feedback_score));
  std::sort(scores_sorted.begin(), scores_sorted.end());

  BuiltTable built;
  ObservationTable& t = built.table;
  t.y.resize(n);
  t.d.resize(n);
  t.ids.reserve(static_cast<std::size_t>(n));
  if (any_price_guess) t.y_guess = Eigen::VectorXd(n);
  if (any_score_guess) t.d_guess = Eigen::VectorXd(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& l = listings[static_cast<std::size_t>(i)];
    const Eigen::VectorXd img = average_image_embeddings(l.image_embeddings, opts.max_images);
    if (i == 0) {
      built.p_img = img.size();
      built.p_txt = l.text_embedding.size();
      t.x.resize(n, built.p_img + built.p_txt);
    } else {
      if (img.size() != built.p_img) {
        raise(errc::transform, "row " + std::to_string(i) + " (id " + l.id + "): image embedding dimension " +
                                   std::to_string(img.size()) + " differs from " + std::to_string(built.p_img));
      }
      if (l.text_embedding.size() != built.p_txt) {
        raise(errc::transform, "row " + std::to_string(i) + " (id " + l.id + "): text embedding dimension " +
                                   std::to_string(l.text_embedding.size()) + " differs from " +
                                   std::to_string(built.p_txt));
      }
    }
    t.x.row(i) = concat_features(img, l.text_embedding).transpose();
    t.y[i] = std::log(l.price);
    t.d[i] = empirical_quantile_sorted(scores_sorted, static_cast<double>(l.feedback_score));
    if (t.y_guess) (*t.y_guess)[i] = std::log(*l.price_guess);
    if (t.d_guess) (*t.d_guess)[i] = empirical_quantile_sorted(scores_sorted, static_cast<double>(*l.score_guess));
    t.ids.push_back(l.id);
  }

  return built;
}

}  // namespace dmlg
