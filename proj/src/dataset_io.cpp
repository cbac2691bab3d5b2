#include "dmlg/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dmlg/error.hpp"
#include "dmlg/fingerprint.hpp"

namespace dmlg::io {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Eigen::VectorXd json_to_vector(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) raise(errc::io, what + " must be a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& cell : j) {
    if (!cell.is_number()) raise(errc::io, what + " must contain only numbers");
    v[i++] = cell.get<double>();
  }
  return v;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
    if (tab == std::string::npos) break;
    pos = tab + 1;
  }
  return out;
}

double parse_double_cell(const std::string& cell, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0') raise(errc::io, "unparsable number '" + cell + "' in " + where);
  return v;
}

// Type-7 quantile (linear interpolation between order statistics).
double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) return 0.0;
  if (sorted.size() == 1) return sorted[0];
  const double h = static_cast<double>(sorted.size() - 1) * prob;
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

SummaryRow summarize_values(const std::string& name, std::vector<double> values) {
  SummaryRow row;
  row.name = name;
  if (values.empty()) return row;
  const double n = static_cast<double>(values.size());
  row.mean = 0.0;
  for (double v : values) row.mean += v;
  row.mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - row.mean) * (v - row.mean);
  row.sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::sort(values.begin(), values.end());
  row.min = values.front();
  row.q25 = quantile_sorted(values, 0.25);
  row.median = quantile_sorted(values, 0.50);
  row.q75 = quantile_sorted(values, 0.75);
  row.max = values.back();
  return row;
}

}  // namespace

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(errc::io, "cannot open " + path.string() + " for writing");
  out << content;
  if (!out) raise(errc::io, "failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(errc::io, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  const auto parsed = nlohmann::json::parse(read_text_file(path), nullptr, false);
  if (parsed.is_discarded()) raise(errc::io, "malformed JSON in " + path.string());
  return parsed;
}

std::vector<RawListing> read_raw_ndjson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io, "cannot open " + path.string());
  std::vector<RawListing> listings;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) raise(errc::io, path.string() + ":" + std::to_string(line_no) + ": malformed JSON");
    const std::string where = path.string() + ":" + std::to_string(line_no);
    RawListing l;
    if (!j.contains("id") || !j["id"].is_string()) raise(errc::io, where + ": missing string field 'id'");
    l.id = j["id"].get<std::string>();
    if (!j.contains("price") || !j["price"].is_number()) raise(errc::io, where + ": missing numeric field 'price'");
    l.price = j["price"].get<double>();
    if (!j.contains("feedback_score") || !j["feedback_score"].is_number_integer()) {
      raise(errc::io, where + ": missing integer field 'feedback_score'");
    }
    l.feedback_score = j["feedback_score"].get<long long>();
    if (!j.contains("image_embeddings") || !j["image_embeddings"].is_array()) {
      raise(errc::io, where + ": missing array field 'image_embeddings'");
    }
    for (const auto& vec : j["image_embeddings"]) {
      l.image_embeddings.push_back(json_to_vector(vec, where + ": image embedding"));
    }
    l.text_embedding =
        j.contains("text_embedding") ? json_to_vector(j["text_embedding"], where + ": text_embedding") : Eigen::VectorXd(0);
    if (j.contains("price_guess") && !j["price_guess"].is_null()) l.price_guess = j["price_guess"].get<double>();
    if (j.contains("score_guess") && !j["score_guess"].is_null()) l.score_guess = j["score_guess"].get<long long>();
    if (j.contains("listing_text") && j["listing_text"].is_string()) l.listing_text = j["listing_text"].get<std::string>();
    if (j.contains("image_links") && j["image_links"].is_array()) {
      for (const auto& link : j["image_links"]) l.image_links.push_back(link.get<std::string>());
    }
    listings.push_back(std::move(l));
  }
  return listings;
}

void write_raw_ndjson(const std::filesystem::path& path, const std::vector<RawListing>& listings) {
  std::ostringstream out;
  for (const auto& l : listings) {
    nlohmann::json j{{"id", l.id}, {"price", l.price}, {"feedback_score", l.feedback_score}};
    nlohmann::json imgs = nlohmann::json::array();
    for (const auto& v : l.image_embeddings) imgs.push_back(vector_to_json(v));
    j["image_embeddings"] = std::move(imgs);
    j["text_embedding"] = vector_to_json(l.text_embedding);
    if (l.price_guess) j["price_guess"] = *l.price_guess;
    if (l.score_guess) j["score_guess"] = *l.score_guess;
    if (!l.listing_text.empty()) j["listing_text"] = l.listing_text;
    if (!l.image_links.empty()) j["image_links"] = l.image_links;
    out << j.dump() << "\n";
  }
  write_text_file(path, out.str());
}

void write_dataset(const std::filesystem::path& dir, const ObservationTable& t, const DatasetMeta& meta) {
  std::filesystem::create_directories(dir);
  std::ostringstream tsv;
  tsv << "id\ty\td";
  if (t.y_guess) tsv << "\ty_guess";
  if (t.d_guess) tsv << "\td_guess";
  for (Eigen::Index j = 0; j < t.p(); ++j) tsv << "\tx_" << j;
  tsv << "\n";
  for (Eigen::Index i = 0; i < t.n(); ++i) {
    const std::string& id = t.ids[static_cast<std::size_t>(i)];
    if (id.find('\t') != std::string::npos || id.find('\n') != std::string::npos) {
      raise(errc::io, "id '" + id + "' contains a tab or newline");
    }
    tsv << id << '\t' << fmt_double(t.y[i]) << '\t' << fmt_double(t.d[i]);
    if (t.y_guess) tsv << '\t' << fmt_double((*t.y_guess)[i]);
    if (t.d_guess) tsv << '\t' << fmt_double((*t.d_guess)[i]);
    for (Eigen::Index j = 0; j < t.p(); ++j) tsv << '\t' << fmt_double(t.x(i, j));
    tsv << "\n";
  }
  write_text_file(dir / "data.tsv", tsv.str());

  nlohmann::json j{
      {"n", t.n()},
      {"p", t.p()},
      {"p_img", meta.p_img},
      {"p_txt", meta.p_txt},
      {"has_y_guess", t.y_guess.has_value()},
      {"has_d_guess", t.d_guess.has_value()},
      {"transform", {{"max_images", meta.transform.max_images}}},
      {"config_fingerprint", meta.config_fingerprint},
      {"version", meta.version.empty() ? kVersion : meta.version},
  };
  write_json_file(dir / "meta.json", j);
}

std::pair<ObservationTable, DatasetMeta> read_dataset(const std::filesystem::path& dir) {
  const nlohmann::json meta_json = read_json_file(dir / "meta.json");
  DatasetMeta meta;
  meta.p_img = meta_json.value("p_img", Eigen::Index{0});
  meta.p_txt = meta_json.value("p_txt", Eigen::Index{0});
  if (meta_json.contains("transform")) meta.transform.max_images = meta_json["transform"].value("max_images", 12);
  meta.config_fingerprint = meta_json.value("config_fingerprint", std::string{});
  meta.version = meta_json.value("version", std::string{});

  std::istringstream in(read_text_file(dir / "data.tsv"));
  std::string header;
  if (!std::getline(in, header)) raise(errc::io, "empty data.tsv in " + dir.string());
  const auto cols = split_tabs(header);
  if (cols.size() < 3 || cols[0] != "id" || cols[1] != "y" || cols[2] != "d") {
    raise(errc::io, "unexpected data.tsv header in " + dir.string());
  }
  std::size_t at = 3;
  const bool has_y_guess = at < cols.size() && cols[at] == "y_guess";
  if (has_y_guess) ++at;
  const bool has_d_guess = at < cols.size() && cols[at] == "d_guess";
  if (has_d_guess) ++at;
  const std::size_t p = cols.size() - at;

  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_tabs(line);
    if (cells.size() != cols.size()) {
      raise(errc::io, "row " + std::to_string(rows.size()) + " has " + std::to_string(cells.size()) +
                          " cells, expected " + std::to_string(cols.size()));
    }
    rows.push_back(std::move(cells));
  }

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  ObservationTable t;
  t.y.resize(n);
  t.d.resize(n);
  t.x.resize(n, static_cast<Eigen::Index>(p));
  if (has_y_guess) t.y_guess = Eigen::VectorXd(n);
  if (has_d_guess) t.d_guess = Eigen::VectorXd(n);
  t.ids.reserve(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& cells = rows[static_cast<std::size_t>(i)];
    const std::string where = "data.tsv row " + std::to_string(i);
    std::size_t c = 0;
    t.ids.push_back(cells[c++]);
    t.y[i] = parse_double_cell(cells[c++], where);
    t.d[i] = parse_double_cell(cells[c++], where);
    if (has_y_guess) (*t.y_guess)[i] = parse_double_cell(cells[c++], where);
    if (has_d_guess) (*t.d_guess)[i] = parse_double_cell(cells[c++], where);
    for (std::size_t j = 0; j < p; ++j) {
      t.x(i, static_cast<Eigen::Index>(j)) = parse_double_cell(cells[c++], where);
    }
  }
  return {std::move(t), std::move(meta)};
}

std::vector<SummaryRow> summarize_listings(const std::vector<RawListing>& listings) {
  std::vector<double> price, log_price, score, n_images, price_guess, score_guess, text_chars;
  for (const auto& l : listings) {
    price.push_back(l.price);
    if (l.price > 0.0) log_price.push_back(std::log(l.price));
    score.push_back(static_cast<double>(l.feedback_score));
    n_images.push_back(static_cast<double>(l.image_embeddings.size()));
    if (l.price_guess) price_guess.push_back(*l.price_guess);
    if (l.score_guess) score_guess.push_back(static_cast<double>(*l.score_guess));
    if (!l.listing_text.empty()) text_chars.push_back(static_cast<double>(l.listing_text.size()));
  }
  std::vector<SummaryRow> rows;
  rows.push_back(summarize_values("price", std::move(price)));
  rows.push_back(summarize_values("log price", std::move(log_price)));
  rows.push_back(summarize_values("feedback score", std::move(score)));
  rows.push_back(summarize_values("# images", std::move(n_images)));
  if (!text_chars.empty()) rows.push_back(summarize_values("# chars. in text", std::move(text_chars)));
  if (!price_guess.empty()) rows.push_back(summarize_values("price guess", std::move(price_guess)));
  if (!score_guess.empty()) rows.push_back(summarize_values("score guess", std::move(score_guess)));
  return rows;
}

std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  char line[200];
  std::snprintf(line, sizeof(line), "%-18s %12s %12s %12s %12s %12s %12s %12s\n", "statistic", "mean", "sd", "min",
                "p25", "median", "p75", "max");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-18s %12.2f %12.2f %12.2f %12.2f %12.2f %12.2f %12.2f\n", r.name.c_str(),
                  r.mean, r.sd, r.min, r.q25, r.median, r.q75, r.max);
    os << line;
  }
  return os.str();
}

nlohmann::json dml_result_to_json(const DmlResult& result) {
  nlohmann::json j{
      {"theta_hat", result.theta_hat},
      {"robust_se", result.robust_se},
      {"rmse_y", result.rmse_y},
      {"rmse_d", result.rmse_d},
      {"residuals_r", vector_to_json(result.residuals_r)},
      {"residuals_v", vector_to_json(result.residuals_v)},
      {"outcome_lambdas", result.outcome_lambdas},
      {"treatment_lambdas", result.treatment_lambdas},
      {"used_guesses", result.used_guesses},
      {"fingerprint", result.fingerprint},
  };
  if (result.guess_correlations) {
    j["guess_correlations"] = {{"outcome", result.guess_correlations->outcome},
                               {"treatment", result.guess_correlations->treatment}};
  }
  return j;
}

DmlResult dml_result_from_json(const nlohmann::json& j) {
  DmlResult result;
  result.theta_hat = j.at("theta_hat").get<double>();
  result.robust_se = j.at("robust_se").get<double>();
  result.rmse_y = j.at("rmse_y").get<double>();
  result.rmse_d = j.at("rmse_d").get<double>();
  result.residuals_r = json_to_vector(j.at("residuals_r"), "residuals_r");
  result.residuals_v = json_to_vector(j.at("residuals_v"), "residuals_v");
  result.outcome_lambdas = j.value("outcome_lambdas", std::vector<double>{});
  result.treatment_lambdas = j.value("treatment_lambdas", std::vector<double>{});
  result.used_guesses = j.at("used_guesses").get<bool>();
  result.fingerprint = j.at("fingerprint").get<std::string>();
  if (j.contains("guess_correlations")) {
    result.guess_correlations = GuessCorrelations{j["guess_correlations"].at("outcome").get<double>(),
                                                  j["guess_correlations"].at("treatment").get<double>()};
  }
  return result;
}

nlohmann::json mc_summary_to_json(const MonteCarloSummary& summary) {
  auto arm_json = [](const ArmSummary& arm) {
    return nlohmann::json{{"mean_theta", arm.mean_theta}, {"sd_theta", arm.sd_theta},   {"mean_se", arm.mean_se},
                          {"coverage", arm.coverage},     {"mean_rmse_y", arm.mean_rmse_y},
                          {"mean_rmse_d", arm.mean_rmse_d}};
  };
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& rec : summary.records) {
    reps.push_back({{"theta_with", rec.theta_with},
                    {"se_with", rec.se_with},
                    {"rmse_y_with", rec.rmse_y_with},
                    {"rmse_d_with", rec.rmse_d_with},
                    {"covered_with", rec.covered_with},
                    {"theta_without", rec.theta_without},
                    {"se_without", rec.se_without},
                    {"rmse_y_without", rec.rmse_y_without},
                    {"rmse_d_without", rec.rmse_d_without},
                    {"covered_without", rec.covered_without}});
  }
  return nlohmann::json{
      {"reps", summary.reps},
      {"with_guess", arm_json(summary.with_guess)},
      {"without_guess", arm_json(summary.without_guess)},
      {"frac_rmse_y_improved", summary.frac_rmse_y_improved},
      {"frac_se_improved", summary.frac_se_improved},
      {"mean_delta_rmse_d", summary.mean_delta_rmse_d},
      {"se_mean_delta_rmse_d", summary.se_mean_delta_rmse_d},
      {"records", std::move(reps)},
  };
}

void write_guesses(const std::filesystem::path& path, PromptKind kind, const BatchResult& batch,
                   const std::vector<ListingInput>& inputs, const nlohmann::json& meta) {
  nlohmann::json guesses = nlohmann::json::array();
  for (std::size_t i = 0; i < batch.records.size(); ++i) {
    if (!batch.records[i].has_value()) continue;
    const auto& rec = *batch.records[i];
    guesses.push_back({{"id", inputs[i].id},
                       {"value", rec.parsed_value},
                       {"attempts", rec.attempts},
                       {"model_id", rec.model_id},
                       {"raw_response", rec.raw_response}});
  }
  nlohmann::json j{{"kind", prompt_kind_name(kind)}, {"guesses", std::move(guesses)}};
  j["meta"] = meta;
  write_json_file(path, j);
}

void write_failures(const std::filesystem::path& path, const BatchResult& batch, const nlohmann::json& meta) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : batch.failures) {
    failures.push_back({{"index", f.index}, {"id", f.id}, {"error", f.error}});
  }
  nlohmann::json j{{"failures", std::move(failures)}};
  j["meta"] = meta;
  write_json_file(path, j);
}

void apply_guess_file(std::vector<RawListing>& listings, const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  if (!j.contains("kind") || !j.contains("guesses")) raise(errc::io, path.string() + " is not a guesses file");
  const PromptKind kind = prompt_kind_from_name(j["kind"].get<std::string>());
  std::map<std::string, double> by_id;
  for (const auto& g : j["guesses"]) {
    by_id[g.at("id").get<std::string>()] = g.at("value").get<double>();
  }
  for (auto& l : listings) {
    const auto it = by_id.find(l.id);
    if (it == by_id.end()) continue;
    if (kind == PromptKind::price) {
      l.price_guess = it->second;
    } else {
      l.score_guess = std::llround(it->second);
    }
  }
}

}  // namespace dmlg::io
