#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmlg/data_model.hpp"
#include "dmlg/dml.hpp"
#include "dmlg/llm_client.hpp"
#include "dmlg/preprocess.hpp"
#include "dmlg/synth.hpp"

namespace dmlg::io {

// Raw ingestion format: newline-delimited JSON, one listing per line, with
// embeddings inline as numeric arrays. listing_text / image_links are
// optional and only consumed by the prediction command.
std::vector<RawListing> read_raw_ndjson(const std::filesystem::path& path);
void write_raw_ndjson(const std::filesystem::path& path, const std::vector<RawListing>& listings);

struct DatasetMeta {
  Eigen::Index p_img = 0;
  Eigen::Index p_txt = 0;
  TransformOptions transform;
  std::string config_fingerprint;
  std::string version;
};

// Canonical dataset directory: data.tsv (id, y, d, optional guess columns,
// then x_0..x_{p-1}; doubles printed with round-trip precision) plus
// meta.json. Numeric content survives a write/read cycle bit-exactly.
void write_dataset(const std::filesystem::path& dir, const ObservationTable& t, const DatasetMeta& meta);
std::pair<ObservationTable, DatasetMeta> read_dataset(const std::filesystem::path& dir);

struct SummaryRow {
  std::string name;
  double mean = 0.0, sd = 0.0, min = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, max = 0.0;
};

// Mean, sd, min, quartiles, median, max for price, log price, feedback
// score, image count, and the guess columns when present.
std::vector<SummaryRow> summarize_listings(const std::vector<RawListing>& listings);
std::string format_summary(const std::vector<SummaryRow>& rows);

nlohmann::json dml_result_to_json(const DmlResult& result);
DmlResult dml_result_from_json(const nlohmann::json& j);

nlohmann::json mc_summary_to_json(const MonteCarloSummary& summary);

// Guesses artifact written by the prediction command: {"kind", "guesses":
// [{"id", "value", ...}]} plus a failures sidecar.
void write_guesses(const std::filesystem::path& path, PromptKind kind, const BatchResult& batch,
                   const std::vector<ListingInput>& inputs, const nlohmann::json& meta);
void write_failures(const std::filesystem::path& path, const BatchResult& batch, const nlohmann::json& meta);

// Joins a guesses file onto listings by id; every id must resolve.
void apply_guess_file(std::vector<RawListing>& listings, const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace dmlg::io
