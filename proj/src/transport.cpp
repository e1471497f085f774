#include "synthpsych/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "synthpsych/errors.hpp"
#include "synthpsych/parallel.hpp"

namespace synthpsych::transport {

using nlohmann::json;

namespace {

std::string_view role_name(Role role) { return role == Role::System ? "system" : "user"; }

json messages_json(const ChatRequest& req) {
  json out = json::array();
  for (const auto& m : req.messages) {
    out.push_back({{"content", m.text}, {"role", role_name(m.role)}});
  }
  return out;
}

json chat_key_json(const ChatRequest& req) {
  json j = {{"kind", "chat"},
            {"max_tokens", req.max_tokens},
            {"messages", messages_json(req)},
            {"model", req.model_id},
            {"temperature", req.temperature}};
  if (req.attempt != 0) j["attempt"] = req.attempt;
  return j;
}

json embedding_key_json(const std::string& text, const std::string& model_id) {
  return {{"input", text}, {"kind", "embedding"}, {"model", model_id}};
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path_prefix;
};

UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidInput, "malformed URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class HttpsBackend final : public HttpBackend {
 public:
  explicit HttpsBackend(std::chrono::seconds timeout) : timeout_(timeout) {}

  std::string post_json(const std::string& url, const std::string& body,
                        const std::string& api_key) override {
    const auto parts = split_url(url);
    httplib::Client client(parts.origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    const httplib::Headers headers = {{"Authorization", "Bearer " + api_key}};
    auto res = client.Post(parts.path_prefix, headers, body, "application/json");
    if (!res) {
      throw Error(ErrorCode::NetworkFailure, "POST " + url + ": " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
      throw Error(ErrorCode::NetworkFailure, "POST " + url + ": HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
      throw Error(ErrorCode::ProtocolError,
                  "POST " + url + ": HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    return res->body;
  }

 private:
  std::chrono::seconds timeout_;
};

}  // namespace

void validate(const ChatRequest& req) {
  if (req.model_id.empty()) throw Error(ErrorCode::InvalidInput, "empty model id");
  const bool has_user = std::any_of(req.messages.begin(), req.messages.end(),
                                    [](const Message& m) { return m.role == Role::User; });
  if (!has_user) throw Error(ErrorCode::InvalidInput, "chat request needs at least one user message");
  if (!std::isfinite(req.temperature) || req.temperature < 0.0 || req.temperature > 2.0) {
    throw Error(ErrorCode::InvalidInput, "temperature must be finite and in [0, 2]");
  }
  if (req.max_tokens <= 0) throw Error(ErrorCode::InvalidInput, "max_tokens must be positive");
}

std::string canonical_json(const ChatRequest& req) { return chat_key_json(req).dump(); }

std::string canonical_embedding_json(const std::string& text, const std::string& model_id) {
  return embedding_key_json(text, model_id).dump();
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoFailure, "SHA-256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string request_digest(const ChatRequest& req) { return sha256_hex(canonical_json(req)); }

StoreMode parse_store_mode(std::string_view name) {
  if (name == "record") return StoreMode::Record;
  if (name == "replay") return StoreMode::Replay;
  if (name == "passthrough") return StoreMode::Passthrough;
  throw Error(ErrorCode::ConfigInvalid, "unknown transcript mode: " + std::string(name));
}

std::string_view to_string(StoreMode mode) {
  switch (mode) {
    case StoreMode::Record: return "record";
    case StoreMode::Replay: return "replay";
    case StoreMode::Passthrough: return "passthrough";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// TranscriptStore

TranscriptStore::TranscriptStore(StoreMode mode, std::optional<std::filesystem::path> path)
    : mode_(mode), path_(std::move(path)) {
  if (mode_ == StoreMode::Replay && !path_) {
    throw Error(ErrorCode::ConfigInvalid, "replay mode requires a transcript store path");
  }
  load();
}

void TranscriptStore::load() {
  if (!path_ || !std::filesystem::exists(*path_)) {
    if (mode_ == StoreMode::Replay) {
      throw Error(ErrorCode::IoFailure, "transcript store not found: " + (path_ ? path_->string() : ""));
    }
    return;
  }
  std::ifstream in(*path_);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open transcript store " + path_->string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      TranscriptRecord rec{j.at("digest").get<std::string>(), j.at("request"),
                           j.at("response_text").get<std::string>(), j.value("timestamp", "")};
      records_.insert_or_assign(rec.digest, std::move(rec));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoFailure,
                  path_->string() + ":" + std::to_string(line_no) + ": bad transcript record: " + e.what());
    }
  }
}

std::optional<TranscriptRecord> TranscriptStore::find(const std::string& digest) const {
  std::shared_lock lock(mutex_);
  const auto it = records_.find(digest);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void TranscriptStore::put(TranscriptRecord record) {
  std::unique_lock lock(mutex_);
  if (mode_ == StoreMode::Record && path_) {
    if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
    std::ofstream out(*path_, std::ios::app);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot append to " + path_->string());
    const json j = {{"digest", record.digest},
                    {"request", record.request},
                    {"response_text", record.response_text},
                    {"timestamp", record.timestamp}};
    out << j.dump() << '\n';
  }
  records_.insert_or_assign(record.digest, std::move(record));
}

std::size_t TranscriptStore::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

std::vector<TranscriptRecord> TranscriptStore::records() const {
  std::shared_lock lock(mutex_);
  std::vector<TranscriptRecord> out;
  out.reserve(records_.size());
  for (const auto& [digest, rec] : records_) out.push_back(rec);
  return out;
}

// ---------------------------------------------------------------------------
// Wire format

std::string chat_wire_body(const ChatRequest& req) {
  const json body = {{"model", req.model_id},
                     {"messages", messages_json(req)},
                     {"temperature", req.temperature},
                     {"max_tokens", req.max_tokens}};
  return body.dump();
}

std::string embedding_wire_body(const std::string& text, const std::string& model_id) {
  return json{{"model", model_id}, {"input", json::array({text})}}.dump();
}

std::string extract_chat_text(const std::string& response_body) {
  try {
    const json j = json::parse(response_body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProtocolError, std::string("unexpected chat response: ") + e.what());
  }
}

std::vector<double> extract_embedding(const std::string& response_body) {
  try {
    const json j = json::parse(response_body);
    auto values = j.at("data").at(0).at("embedding").get<std::vector<double>>();
    for (double v : values) {
      if (!std::isfinite(v)) throw Error(ErrorCode::ProtocolError, "non-finite embedding value");
    }
    return values;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProtocolError, std::string("unexpected embedding response: ") + e.what());
  }
}

std::unique_ptr<HttpBackend> make_https_backend(std::chrono::seconds timeout) {
  return std::make_unique<HttpsBackend>(timeout);
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(GatewayConfig config, TranscriptStore& store, std::shared_ptr<HttpBackend> backend,
                 Sleeper sleeper)
    : config_(std::move(config)),
      store_(store),
      backend_(std::move(backend)),
      sleeper_(std::move(sleeper)),
      in_flight_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(config_.max_in_flight, 1, 64))) {
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::size_t Gateway::live_calls() const {
  std::lock_guard lock(stats_mutex_);
  return live_calls_;
}

std::string Gateway::resolve_credential() const {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw Error(ErrorCode::MissingCredential, "environment variable " + config_.api_key_env + " is not set");
  }
  return key;
}

std::string Gateway::post_with_retry(const std::string& url, const std::string& body) {
  const std::string key = resolve_credential();
  if (!backend_) throw Error(ErrorCode::NetworkFailure, "no network backend configured");

  auto delay = config_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      in_flight_.acquire();
      struct Release {
        std::counting_semaphore<64>& sem;
        ~Release() { sem.release(); }
      } release{in_flight_};
      {
        std::lock_guard lock(stats_mutex_);
        ++live_calls_;
      }
      return backend_->post_json(url, body, key);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NetworkFailure || attempt >= config_.max_attempts) throw;
      spdlog::warn("attempt {}/{} failed ({}); retrying in {} ms", attempt, config_.max_attempts, e.what(),
                   delay.count());
      sleeper_(delay);
      delay *= 2;
    }
  }
}

std::string Gateway::cached_or_live(const std::string& digest, const json& request_json, const std::string& url,
                                    const std::string& wire_body,
                                    const std::function<std::string(const std::string&)>& extract,
                                    Source& source) {
  if (store_.mode() != StoreMode::Passthrough) {
    if (auto hit = store_.find(digest)) {
      source = Source::Replay;
      return hit->response_text;
    }
    if (store_.mode() == StoreMode::Replay) {
      throw Error(ErrorCode::ReplayMiss, "no transcript for request digest " + digest);
    }
  }
  const std::string stored = extract(post_with_retry(url, wire_body));
  source = Source::Live;
  if (store_.mode() == StoreMode::Record) {
    store_.put({digest, request_json, stored, utc_timestamp()});
  }
  return stored;
}

ChatResponse Gateway::chat_complete(const ChatRequest& req) {
  validate(req);
  const json key = chat_key_json(req);
  const std::string digest = sha256_hex(key.dump());
  ChatResponse out;
  out.request_digest = digest;
  out.text = cached_or_live(digest, key, config_.base_url + "/chat/completions", chat_wire_body(req),
                            extract_chat_text, out.source);
  return out;
}

std::vector<EmbeddingVector> Gateway::embed(const std::vector<std::string>& texts, const std::string& model_id,
                                            const std::vector<int>& subject_ids) {
  if (texts.empty()) throw Error(ErrorCode::InvalidInput, "embed() needs at least one text");
  if (!subject_ids.empty() && subject_ids.size() != texts.size()) {
    throw Error(ErrorCode::InvalidInput, "subject id count does not match text count");
  }
  std::vector<EmbeddingVector> out(texts.size());
  const std::string url = config_.base_url + "/embeddings";
  auto extract = [](const std::string& body) { return json(extract_embedding(body)).dump(); };

  auto one = [&](std::size_t i) {
    const json key = embedding_key_json(texts[i], model_id);
    const std::string digest = sha256_hex(key.dump());
    Source source{};
    const std::string stored =
        cached_or_live(digest, key, url, embedding_wire_body(texts[i], model_id), extract, source);
    try {
      out[i].values = json::parse(stored).get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ProtocolError, "stored embedding for " + digest + " is not a number array");
    }
    out[i].subject_id = subject_ids.empty() ? static_cast<int>(i + 1) : subject_ids[i];
  };

  // Cache lookups are cheap; only live requests are bounded by the in-flight semaphore.
  parallel_for(texts.size(), store_.mode() == StoreMode::Replay ? 1 : config_.max_in_flight, one);

  const std::size_t dim = out.front().dim();
  for (const auto& v : out) {
    if (v.dim() == 0 || v.dim() != dim) {
      throw Error(ErrorCode::DimensionMismatch, "inconsistent embedding dimensions: " + std::to_string(dim) +
                                                    " vs " + std::to_string(v.dim()));
    }
  }
  if (config_.embedding_dim != 0 && dim != config_.embedding_dim) {
    throw Error(ErrorCode::DimensionMismatch, "expected embedding dim " + std::to_string(config_.embedding_dim) +
                                                  ", provider returned " + std::to_string(dim));
  }
  return out;
}

}  // namespace synthpsych::transport
