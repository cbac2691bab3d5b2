#include "dmlg/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "dmlg/error.hpp"
#include "dmlg/random.hpp"

namespace dmlg {

namespace {

constexpr double kIndexSteepness = 2.5;

Eigen::VectorXd draw_direction(Rng& rng, Eigen::Index p, int sparsity) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  for (int j = 0; j < sparsity; ++j) w[j] = rng.normal();
  const double norm = w.norm();
  if (norm > 0.0) w /= norm;
  return w;
}

Eigen::VectorXd nuisance_values(const Eigen::MatrixXd& x, const Eigen::VectorXd& direction,
                                const NuisanceForm& form) {
  Eigen::VectorXd index = x * direction;  // ~ N(0,1) per row
  if (form.form == FunctionalForm::sparse_linear) {
    return form.amplitude * index;
  }
  return form.amplitude * (kIndexSteepness * index.array()).tanh().matrix();
}

double population_sd(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size()));
}

// truth + calibrated noise so corr(guess, truth) lands near rho.
Eigen::VectorXd calibrated_guess(const Eigen::VectorXd& truth, double rho, Rng& rng) {
  const Eigen::Index n = truth.size();
  Eigen::VectorXd noise(n);
  for (Eigen::Index i = 0; i < n; ++i) noise[i] = rng.normal();
  const double sd_truth = population_sd(truth);
  if (rho >= 1.0 || sd_truth == 0.0) return truth;
  if (rho <= 0.0) return Eigen::VectorXd::Constant(n, truth.mean()) + sd_truth * noise;
  const double noise_sd = sd_truth * std::sqrt(1.0 - rho * rho) / rho;
  return truth + noise_sd * noise;
}

void run_replications(int reps, int workers, const std::function<void(int)>& body) {
  if (workers <= 1 || reps <= 1) {
    for (int r = 0; r < reps; ++r) body(r);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&]() {
    for (int r = next.fetch_add(1); r < reps; r = next.fetch_add(1)) {
      try {
        body(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int count = std::min(workers, reps);
  pool.reserve(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

double interp_anchors(const std::array<double, 5>& anchors, double q) {
  static constexpr std::array<double, 5> knots{0.0, 0.25, 0.5, 0.75, 1.0};
  q = std::clamp(q, 0.0, 1.0);
  std::size_t hi = 1;
  while (hi < 4 && q > knots[hi]) ++hi;
  const double t = (q - knots[hi - 1]) / (knots[hi] - knots[hi - 1]);
  // Linear in log1p space: heavy-tailed scales stay positive and monotone.
  const double lo_log = std::log1p(anchors[hi - 1]);
  const double hi_log = std::log1p(anchors[hi]);
  return std::expm1(lo_log + t * (hi_log - lo_log));
}

std::vector<double> midrank_quantiles(const Eigen::VectorXd& v) {
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out[static_cast<std::size_t>(i)] = empirical_quantile_sorted(sorted, v[i]);
  }
  return out;
}

}  // namespace

void DgpSpec::validate() const {
  if (n < 2) raise(errc::invalid_argument, "n must be >= 2");
  if (p < 1) raise(errc::invalid_argument, "p must be >= 1");
  auto check_form = [this](const NuisanceForm& f, const char* name) {
    if (f.sparsity < 1 || f.sparsity > p) {
      raise(errc::invalid_argument, std::string(name) + " sparsity must lie in [1, p]");
    }
    if (!(f.amplitude >= 0.0)) raise(errc::invalid_argument, std::string(name) + " amplitude must be >= 0");
  };
  check_form(g_form, "g_form");
  check_form(m_form, "m_form");
  if (!(noise_sd_u > 0.0) || !(noise_sd_v > 0.0)) raise(errc::invalid_argument, "noise SDs must be positive");
  if (rho_y < 0.0 || rho_y > 1.0 || rho_d < 0.0 || rho_d > 1.0) {
    raise(errc::invalid_argument, "guess quality targets must lie in [0, 1]");
  }
}

SynthDataset generate(const DgpSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed));
  const Eigen::Index n = static_cast<Eigen::Index>(spec.n);
  const Eigen::Index p = spec.p;

  const Eigen::VectorXd g_dir = draw_direction(rng, p, spec.g_form.sparsity);
  const Eigen::VectorXd m_dir = draw_direction(rng, p, spec.m_form.sparsity);

  SynthDataset ds;
  ds.table.x.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) ds.table.x(i, j) = rng.normal();
  }

  ds.g_values = nuisance_values(ds.table.x, g_dir, spec.g_form);
  ds.m_values = nuisance_values(ds.table.x, m_dir, spec.m_form);

  ds.u.resize(n);
  ds.v.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) ds.u[i] = spec.noise_sd_u * rng.normal();
  for (Eigen::Index i = 0; i < n; ++i) ds.v[i] = spec.noise_sd_v * rng.normal();

  ds.table.d = ds.m_values + ds.v;
  if (spec.rank_transform_d) {
    const std::vector<double> q = midrank_quantiles(ds.table.d);
    for (Eigen::Index i = 0; i < n; ++i) ds.table.d[i] = q[static_cast<std::size_t>(i)];
    ds.v = ds.table.d - ds.m_values;  // keep the decomposition exact
  }
  ds.table.y = spec.theta0 * ds.table.d + ds.g_values + ds.u;

  const Eigen::VectorXd truth_y = spec.theta0 * ds.table.d + ds.g_values;
  ds.table.y_guess = calibrated_guess(truth_y, spec.rho_y, rng);
  ds.table.d_guess = calibrated_guess(ds.m_values, spec.rho_d, rng);

  ds.table.ids.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "synth-%06zu", i);
    ds.table.ids.emplace_back(buf);
  }
  return ds;
}

MonteCarloSummary monte_carlo(const DgpSpec& spec, const EstimatorConfig& cfg, int reps, int workers) {
  if (reps < 1) raise(errc::invalid_argument, "reps must be >= 1");
  spec.validate();
  cfg.validate();

  MonteCarloSummary summary;
  summary.reps = reps;
  summary.records.resize(static_cast<std::size_t>(reps));

  run_replications(reps, workers, [&](int r) {
    DgpSpec rep_spec = spec;
    rep_spec.seed = spec.seed + static_cast<std::uint64_t>(r);
    EstimatorConfig rep_cfg = cfg;
    rep_cfg.seed = cfg.seed + static_cast<std::uint64_t>(r);

    const SynthDataset ds = generate(rep_spec);
    const FoldPlan plan = make_fold_plan(spec.n, rep_cfg.k_folds, rep_cfg.seed);
    const DmlResult with = run_dml(ds.table, plan, rep_cfg, true);
    const DmlResult without = run_dml(ds.table, plan, rep_cfg, false);

    RepRecord rec;
    rec.theta_with = with.theta_hat;
    rec.se_with = with.robust_se;
    rec.rmse_y_with = with.rmse_y;
    rec.rmse_d_with = with.rmse_d;
    rec.covered_with = std::abs(with.theta_hat - spec.theta0) <= 1.96 * with.robust_se;
    rec.theta_without = without.theta_hat;
    rec.se_without = without.robust_se;
    rec.rmse_y_without = without.rmse_y;
    rec.rmse_d_without = without.rmse_d;
    rec.covered_without = std::abs(without.theta_hat - spec.theta0) <= 1.96 * without.robust_se;
    summary.records[static_cast<std::size_t>(r)] = rec;
  });

  auto summarize = [&](bool with_arm) {
    ArmSummary arm;
    double sum_theta = 0.0, sum_se = 0.0, sum_rmse_y = 0.0, sum_rmse_d = 0.0;
    int covered = 0;
    for (const auto& rec : summary.records) {
      sum_theta += with_arm ? rec.theta_with : rec.theta_without;
      sum_se += with_arm ? rec.se_with : rec.se_without;
      sum_rmse_y += with_arm ? rec.rmse_y_with : rec.rmse_y_without;
      sum_rmse_d += with_arm ? rec.rmse_d_with : rec.rmse_d_without;
      covered += (with_arm ? rec.covered_with : rec.covered_without) ? 1 : 0;
    }
    const double inv = 1.0 / static_cast<double>(reps);
    arm.mean_theta = sum_theta * inv;
    arm.mean_se = sum_se * inv;
    arm.mean_rmse_y = sum_rmse_y * inv;
    arm.mean_rmse_d = sum_rmse_d * inv;
    arm.coverage = covered * inv;
    double ss = 0.0;
    for (const auto& rec : summary.records) {
      const double t = with_arm ? rec.theta_with : rec.theta_without;
      ss += (t - arm.mean_theta) * (t - arm.mean_theta);
    }
    arm.sd_theta = reps > 1 ? std::sqrt(ss / static_cast<double>(reps - 1)) : 0.0;
    return arm;
  };
  summary.with_guess = summarize(true);
  summary.without_guess = summarize(false);

  int improved_rmse_y = 0, improved_se = 0;
  double sum_delta_d = 0.0;
  for (const auto& rec : summary.records) {
    improved_rmse_y += rec.rmse_y_with < rec.rmse_y_without ? 1 : 0;
    improved_se += rec.se_with < rec.se_without ? 1 : 0;
    sum_delta_d += rec.rmse_d_with - rec.rmse_d_without;
  }
  summary.frac_rmse_y_improved = static_cast<double>(improved_rmse_y) / reps;
  summary.frac_se_improved = static_cast<double>(improved_se) / reps;
  summary.mean_delta_rmse_d = sum_delta_d / reps;
  double ss_delta = 0.0;
  for (const auto& rec : summary.records) {
    const double d = rec.rmse_d_with - rec.rmse_d_without - summary.mean_delta_rmse_d;
    ss_delta += d * d;
  }
  summary.se_mean_delta_rmse_d =
      reps > 1 ? std::sqrt(ss_delta / static_cast<double>(reps - 1)) / std::sqrt(static_cast<double>(reps)) : 0.0;
  return summary;
}

std::vector<RawListing> to_raw_listings(const SynthDataset& ds, Eigen::Index p_img,
                                        const CalibrationAnchors& anchors) {
  const Eigen::Index n = ds.table.n();
  const Eigen::Index p = ds.table.p();
  if (p_img < 1 || p_img > p) raise(errc::invalid_argument, "p_img must lie in [1, p]");
  const Eigen::Index p_txt = p - p_img;

  const std::vector<double> q_y = midrank_quantiles(ds.table.y);
  const std::vector<double> q_d = midrank_quantiles(ds.table.d);
  std::vector<double> q_yg, q_dg;
  if (ds.table.y_guess) q_yg = midrank_quantiles(*ds.table.y_guess);
  if (ds.table.d_guess) q_dg = midrank_quantiles(*ds.table.d_guess);

  std::vector<RawListing> listings;
  listings.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    RawListing l;
    l.id = ds.table.ids[static_cast<std::size_t>(i)];
    l.price = interp_anchors(anchors.price, q_y[static_cast<std::size_t>(i)]);
    l.feedback_score = std::llround(interp_anchors(anchors.score, q_d[static_cast<std::size_t>(i)]));
    Eigen::VectorXd img = ds.table.x.row(i).head(p_img);
    const double norm = img.norm();
    if (!(norm > 0.0)) raise(errc::degenerate_norm, "feature row " + std::to_string(i) + " has a zero image block");
    l.image_embeddings.push_back(img / norm);
    l.text_embedding = ds.table.x.row(i).tail(p_txt);
    if (ds.table.y_guess) l.price_guess = interp_anchors(anchors.price_guess, q_yg[static_cast<std::size_t>(i)]);
    if (ds.table.d_guess) {
      l.score_guess = std::llround(interp_anchors(anchors.score_guess, q_dg[static_cast<std::size_t>(i)]));
    }
    listings.push_back(std::move(l));
  }
  return listings;
}

}  // namespace dmlg
