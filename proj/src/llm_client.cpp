#include "dmlg/llm_client.hpp"

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "dmlg/error.hpp"

namespace dmlg {

namespace {

const std::string kPriceSystemPrompt =
    R"(You are an e-commerce due-diligence analyst. Your job is to estimate the sale price in USD of an eBay jewelry listing.

Rules:
- Think step by step.
- After your reasoning, output the final numeric guess wrapped EXACTLY like: <final>100</final>
- Never include more than one <final> tag.
- Do not include dollar sign or anything other than the number.
)";

const std::string kFeedbackScoreSystemPrompt =
    R"(You are an e-commerce analyst specializing in fine-jewelry auctions on eBay. Your job is to estimate the seller’s feedback score, defined as:
  feedback_score = (# positive ratings) - (# negative ratings)

Context: Feedback score correlates with customer satisfaction and—critically—with seller scale/experience.

ESTIMATION HEURISTICS (guidance, not hard rules):
- Very Low:     0–50       → one-off/private sellers; amateur photos; no returns; sparse specifics.
- Low:          50–500     → small casual sellers; mixed photo quality; some policy text.
- Medium:       500–5,000  → established storefront; consistent SKUs/watermarks; standard returns; many specifics.
- High:         5,000–50,000 → power sellers; professional studio images; branded store; fast/paid shipping options.
- Ultra:        50,000+    → top eBay stores; highly standardized listings; extensive policies; certification partners.

PRICE BAND (inferred from purity/weight/brand/gemstones/certification/condition/images):
- <$100, $100–$500, $500–$2k, $2k–$10k, >$10k
Use the band as a *soft* upward/downward adjustment: higher price bands tend to imply higher seller scale.

REASONING & OUTPUT RULES
- Provide 2–5 terse evidence bullets naming only the strongest *observable* signals (include the inferred price band).
- Be specific (“studio lighting + branded watermark” instead of “good images”).
- If a signal is absent/unclear, say “no signal” rather than guessing.
- Then output ONLY the final integer guess for the feedback score, wrapped EXACTLY once:
  <final>1234</final>
- Never include more than one <final> tag. Do not add any other text after the <final>…</final> line.
- The final must be an integer (round your estimate).

FORMAT
1) Bullets (2–5)
2) <final>…</final>
)";

std::string to_lower(const std::string& s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_digits(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  return true;
}

std::string iso_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

class RateLimiter {
 public:
  explicit RateLimiter(double per_sec) {
    if (per_sec > 0.0) {
      interval_ = std::chrono::nanoseconds(static_cast<long long>(1e9 / per_sec));
    }
    next_ = std::chrono::steady_clock::now();
  }

  void acquire() {
    if (interval_.count() == 0) return;
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard<std::mutex> lock(mu_);
      slot = std::max(next_, std::chrono::steady_clock::now());
      next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_;
  std::chrono::nanoseconds interval_{0};
};

}  // namespace

const char* prompt_kind_name(PromptKind kind) {
  return kind == PromptKind::price ? "price" : "feedback_score";
}

PromptKind prompt_kind_from_name(const std::string& name) {
  if (name == "price") return PromptKind::price;
  if (name == "feedback_score") return PromptKind::feedback_score;
  raise(errc::configuration, "unknown prompt kind '" + name + "'");
}

const std::string& system_prompt_for(PromptKind kind) {
  return kind == PromptKind::price ? kPriceSystemPrompt : kFeedbackScoreSystemPrompt;
}

MaskingPolicy MaskingPolicy::defaults() {
  return MaskingPolicy{{
      "feedback score:",
      "feedback rating:",
      "seller:",
      "seller id:",
      "seller name:",
      "positive ratings:",
      "negative ratings:",
  }};
}

std::string mask_listing_text(const std::string& text, const MaskingPolicy& policy) {
  if (policy.blocklist.empty()) {
    raise(errc::configuration, "masking requested but the field blocklist is empty");
  }
  std::vector<std::string> needles;
  needles.reserve(policy.blocklist.size());
  for (const auto& field : policy.blocklist) needles.push_back(to_lower(field));

  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = text.find('\n', pos);
    const std::string line = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    const std::string lowered = to_lower(line);
    bool blocked = false;
    for (const auto& needle : needles) {
      if (lowered.find(needle) != std::string::npos) {
        blocked = true;
        break;
      }
    }
    if (!blocked) {
      if (!out.empty()) out.push_back('\n');
      out += line;
    }
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return out;
}

PromptRequest build_prompt(PromptKind kind, const std::string& listing_id, const std::string& listing_text,
                           std::vector<std::string> image_links, const MaskingPolicy& masking) {
  if (listing_text.empty()) raise(errc::invalid_argument, "listing text is empty");
  PromptRequest req;
  req.kind = kind;
  req.listing_id = listing_id;
  req.listing_text = mask_listing_text(listing_text, masking);
  if (image_links.size() > kMaxImageLinks) image_links.resize(kMaxImageLinks);
  req.image_links = std::move(image_links);
  req.system_prompt = system_prompt_for(kind);
  return req;
}

double parse_final_tag(const std::string& raw, PromptKind kind) {
  static const std::string open = "<final>";
  static const std::string close = "</final>";

  std::size_t opens = 0;
  for (std::size_t pos = raw.find(open); pos != std::string::npos; pos = raw.find(open, pos + open.size())) ++opens;
  if (opens == 0) raise(errc::missing_final, "response contains no <final> tag");
  if (opens > 1) raise(errc::ambiguous_final, "response contains more than one <final> tag");

  const std::size_t start = raw.find(open) + open.size();
  const std::size_t stop = raw.find(close, start);
  if (stop == std::string::npos) raise(errc::missing_final, "<final> tag is never closed");

  std::string body = raw.substr(start, stop - start);
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!body.empty() && is_space(body.front())) body.erase(body.begin());
  while (!body.empty() && is_space(body.back())) body.pop_back();

  if (body.empty()) raise(errc::parse, "<final> tag is empty");
  if (body.front() == '+' || body.front() == '-') {
    raise(errc::parse, "signed values are not allowed in <final>");
  }

  if (kind == PromptKind::feedback_score) {
    if (!is_digits(body)) raise(errc::parse, "feedback score must be a plain nonnegative integer, got '" + body + "'");
    return static_cast<double>(std::stoll(body));
  }

  const std::size_t dot = body.find('.');
  const std::string int_part = dot == std::string::npos ? body : body.substr(0, dot);
  const std::string frac_part = dot == std::string::npos ? "" : body.substr(dot + 1);
  const bool ok = is_digits(int_part) && (dot == std::string::npos || is_digits(frac_part)) &&
                  body.find('.', dot == std::string::npos ? body.size() : dot + 1) == std::string::npos;
  if (!ok) raise(errc::parse, "price must be a plain decimal number, got '" + body + "'");
  const double value = std::stod(body);
  if (!(value > 0.0)) raise(errc::parse, "price guess must be positive, got '" + body + "'");
  return value;
}

nlohmann::json build_chat_payload(const PromptRequest& req, const std::string& model_id) {
  nlohmann::json user_content = nlohmann::json::array();
  user_content.push_back({{"type", "text"}, {"text", req.listing_text}});
  for (const auto& link : req.image_links) {
    user_content.push_back({{"type", "image_url"}, {"image_url", {{"url", link}}}});
  }
  return nlohmann::json{
      {"model", model_id},
      {"listing_id", req.listing_id},
      {"messages",
       nlohmann::json::array({
           nlohmann::json{{"role", "system"}, {"content", req.system_prompt}},
           nlohmann::json{{"role", "user"}, {"content", user_content}},
       })},
  };
}

HttpTransport::HttpTransport(Settings settings) : settings_(std::move(settings)) {
  const char* key = std::getenv("DMLA_API_KEY");
  if (key == nullptr || *key == '\0') {
    raise(errc::configuration, "live transport requires the DMLA_API_KEY environment variable");
  }
  api_key_ = key;
  if (settings_.url.empty()) raise(errc::configuration, "live transport requires an endpoint url");
}

std::string HttpTransport::send(const nlohmann::json& payload) {
  // Split scheme://authority from the request path.
  const std::size_t scheme_end = settings_.url.find("://");
  if (scheme_end == std::string::npos) raise(errc::configuration, "endpoint url must carry a scheme");
  const std::size_t path_start = settings_.url.find('/', scheme_end + 3);
  const std::string base = path_start == std::string::npos ? settings_.url : settings_.url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : settings_.url.substr(path_start);

  httplib::Client client(base);
  client.set_connection_timeout(30);
  client.set_read_timeout(120);
  httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
  auto res = client.Post(path, headers, payload.dump(), "application/json");
  if (!res) raise(errc::service, "endpoint unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    raise(errc::service, "endpoint returned status " + std::to_string(res->status));
  }
  const auto body = nlohmann::json::parse(res->body, nullptr, false);
  if (body.is_discarded()) raise(errc::service, "endpoint returned malformed JSON");
  if (body.contains("choices") && body["choices"].is_array() && !body["choices"].empty()) {
    const auto& message = body["choices"][0];
    if (message.contains("message") && message["message"].contains("content")) {
      return message["message"]["content"].get<std::string>();
    }
  }
  if (body.contains("content") && body["content"].is_string()) return body["content"].get<std::string>();
  raise(errc::service, "endpoint response carries no assistant text");
}

MockTransport::MockTransport(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!std::filesystem::is_directory(dir_)) {
    raise(errc::configuration, "transcript directory does not exist: " + dir_.string());
  }
}

std::string MockTransport::send(const nlohmann::json& payload) {
  const std::string id = payload.value("listing_id", std::string{});
  std::lock_guard<std::mutex> lock(mu_);
  sent_.push_back(payload.dump());

  auto it = scripts_.find(id);
  if (it == scripts_.end()) {
    const auto file = dir_ / (id + ".jsonl");
    std::ifstream in(file);
    if (!in) raise(errc::service, "no transcript for listing '" + id + "' at " + file.string());
    std::vector<std::string> responses;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto entry = nlohmann::json::parse(line, nullptr, false);
      if (entry.is_discarded() || !entry.contains("response")) {
        raise(errc::io, "malformed transcript line in " + file.string());
      }
      responses.push_back(entry["response"].get<std::string>());
    }
    it = scripts_.emplace(id, std::move(responses)).first;
  }

  std::size_t& cursor = cursors_[id];
  if (cursor >= it->second.size()) {
    raise(errc::service, "transcript for listing '" + id + "' is exhausted");
  }
  return it->second[cursor++];
}

std::vector<std::string> MockTransport::sent_payloads() const {
  std::lock_guard<std::mutex> lock(mu_);
  return sent_;
}

PredictionRecord predict(const PromptRequest& req, Transport& transport, const RetryPolicy& retry) {
  if (retry.max_retries < 0) raise(errc::invalid_argument, "max_retries must be >= 0");
  nlohmann::json payload = build_chat_payload(req, transport.model_id());

  std::string last_error;
  bool last_was_transport = false;
  const int total_attempts = 1 + retry.max_retries;
  for (int attempt = 1; attempt <= total_attempts; ++attempt) {
    std::string raw;
    try {
      raw = transport.send(payload);
    } catch (const std::exception& e) {
      last_error = e.what();
      last_was_transport = true;
      continue;
    }
    try {
      const double value = parse_final_tag(raw, req.kind);
      PredictionRecord record;
      record.request = req;
      record.raw_response = raw;
      record.parsed_value = value;
      record.attempts = attempt;
      record.model_id = transport.model_id();
      record.timestamp = transport.deterministic() ? std::string{} : iso_timestamp_now();
      return record;
    } catch (const Error& e) {
      last_error = e.what();
      last_was_transport = false;
      payload["messages"].push_back({{"role", "assistant"}, {"content", raw}});
      payload["messages"].push_back(
          {{"role", "user"},
           {"content", std::string("Your previous reply could not be used (") + e.what() +
                           "). Respond again and end with exactly one <final>NUMBER</final> tag "
                           "containing a plain number."}});
    }
  }

  const std::string detail = "after " + std::to_string(total_attempts) + " attempts: " + last_error;
  if (last_was_transport) raise(errc::service, detail);
  raise(errc::prediction_unavailable, detail);
}

BatchResult predict_batch(const std::vector<ListingInput>& listings, PromptKind kind, Transport& transport,
                          int parallelism, double rate_limit_per_sec, const MaskingPolicy& masking,
                          const RetryPolicy& retry) {
  if (parallelism < 1) raise(errc::invalid_argument, "parallelism must be >= 1");

  BatchResult result;
  result.records.resize(listings.size());
  std::vector<std::string> errors(listings.size());
  RateLimiter limiter(rate_limit_per_sec);

  auto run_one = [&](std::size_t i) {
    try {
      const PromptRequest req = build_prompt(kind, listings[i].id, listings[i].text, listings[i].image_links, masking);
      limiter.acquire();
      result.records[i] = predict(req, transport, retry);
    } catch (const std::exception& e) {
      errors[i] = e.what();
      if (errors[i].empty()) errors[i] = "unknown failure";
    }
  };

  if (parallelism == 1 || listings.size() <= 1) {
    for (std::size_t i = 0; i < listings.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (std::size_t i = next.fetch_add(1); i < listings.size(); i = next.fetch_add(1)) run_one(i);
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(parallelism), listings.size());
    pool.reserve(count);
    for (std::size_t w = 0; w < count; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (std::size_t i = 0; i < listings.size(); ++i) {
    if (!result.records[i].has_value()) {
      result.failures.push_back({i, listings[i].id, errors[i]});
    }
  }
  return result;
}

}  // namespace dmlg
