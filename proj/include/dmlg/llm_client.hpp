#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dmlg {

enum class PromptKind { price, feedback_score };

const char* prompt_kind_name(PromptKind kind);
PromptKind prompt_kind_from_name(const std::string& name);

// System prompt text shipped with the tool for each prediction target.
const std::string& system_prompt_for(PromptKind kind);

// Seller fields stripped from listing text before it reaches any external
// service. A line mentioning any blocklisted field name (case-insensitive)
// is dropped wholesale.
struct MaskingPolicy {
  std::vector<std::string> blocklist;
  static MaskingPolicy defaults();
};

std::string mask_listing_text(const std::string& text, const MaskingPolicy& policy);

struct PromptRequest {
  PromptKind kind = PromptKind::price;
  std::string listing_id;
  std::string listing_text;  // already masked
  std::vector<std::string> image_links;  // capped at kMaxImageLinks
  std::string system_prompt;
};

inline constexpr std::size_t kMaxImageLinks = 12;

// Masks the listing text (both prompt kinds; the service never sees seller
// fields), truncates image links to the cap, and attaches the system prompt.
PromptRequest build_prompt(PromptKind kind, const std::string& listing_id, const std::string& listing_text,
                           std::vector<std::string> image_links,
                           const MaskingPolicy& masking = MaskingPolicy::defaults());

// Extracts the unique <final>...</final> span and parses its contents:
// a positive plain decimal for price, a nonnegative plain integer for
// feedback_score. Zero tags, multiple tags, signs, currency symbols, and
// non-numeric contents are all rejected with their own error kinds.
double parse_final_tag(const std::string& raw, PromptKind kind);

struct PredictionRecord {
  PromptRequest request;
  std::string raw_response;
  double parsed_value = 0.0;
  int attempts = 0;
  std::string model_id;
  std::string timestamp;  // ISO-8601 UTC; empty under the replay transport
};

// Chat-style JSON transport boundary. send() receives the full request
// payload and returns the raw assistant text.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string send(const nlohmann::json& payload) = 0;
  virtual std::string model_id() const = 0;
  virtual bool deterministic() const { return false; }
};

// Live endpoint: POST of the payload with a bearer token. The token comes
// from the DMLA_API_KEY environment variable.
class HttpTransport : public Transport {
 public:
  struct Settings {
    std::string url;   // e.g. https://host:443/v1/chat/completions
    std::string model;
  };
  explicit HttpTransport(Settings settings);
  std::string send(const nlohmann::json& payload) override;
  std::string model_id() const override { return settings_.model; }

 private:
  Settings settings_;
  std::string api_key_;
};

// Replay transport reading canned transcripts from a directory: one
// <listing_id>.jsonl file per listing, newline-delimited JSON objects with a
// "response" field (an optional "request" echo is ignored), consumed in
// order across calls so scripted retries work. Every payload sent is
// retained for inspection.
class MockTransport : public Transport {
 public:
  explicit MockTransport(std::filesystem::path dir);
  std::string send(const nlohmann::json& payload) override;
  std::string model_id() const override { return "replay"; }
  bool deterministic() const override { return true; }

  std::vector<std::string> sent_payloads() const;

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<std::string>> scripts_;
  std::map<std::string, std::size_t> cursors_;
  std::vector<std::string> sent_;
};

struct RetryPolicy {
  int max_retries = 2;  // total attempts = 1 + max_retries
};

// One prediction round trip. Unparsable responses are retried with the parse
// error appended as a corrective user turn; transport failures are retried
// as-is. Exhausted retries raise service (transport) or
// prediction-unavailable (parse) errors; a value is never imputed.
PredictionRecord predict(const PromptRequest& req, Transport& transport, const RetryPolicy& retry = {});

struct ListingInput {
  std::string id;
  std::string text;
  std::vector<std::string> image_links;
};

struct BatchFailure {
  std::size_t index = 0;
  std::string id;
  std::string error;
};

struct BatchResult {
  std::vector<std::optional<PredictionRecord>> records;  // input order; nullopt marks a failure
  std::vector<BatchFailure> failures;                    // ascending input order
};

// predict() per listing with bounded concurrency and a shared token-bucket
// rate limit (requests per second; 0 disables). Output order always matches
// input order; per-row failures are collected, not fatal.
BatchResult predict_batch(const std::vector<ListingInput>& listings, PromptKind kind, Transport& transport,
                          int parallelism = 1, double rate_limit_per_sec = 0.0,
                          const MaskingPolicy& masking = MaskingPolicy::defaults(), const RetryPolicy& retry = {});

// Chat payload exactly as handed to the transport; exposed so tests can scan
// serialized bytes for masked fields.
nlohmann::json build_chat_payload(const PromptRequest& req, const std::string& model_id);

}  // namespace dmlg
