#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace synthpsych::transport {

enum class Role { System, User };

struct Message {
  Role role = Role::User;
  std::string text;
};

struct ChatRequest {
  std::string model_id;
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
  // Re-prompt ordinal. Part of the cache key so a re-prompt after a malformed reply is a
  // distinct transcript entry; never sent over the wire.
  int attempt = 0;
};

// Throws Error(InvalidInput) when the request violates its invariants.
void validate(const ChatRequest& req);

// Canonical form: lexicographically ordered keys, UTF-8, no insignificant whitespace.
std::string canonical_json(const ChatRequest& req);
std::string canonical_embedding_json(const std::string& text, const std::string& model_id);

std::string sha256_hex(std::string_view bytes);
std::string request_digest(const ChatRequest& req);

enum class Source { Live, Replay };

struct ChatResponse {
  std::string text;
  std::string request_digest;
  Source source = Source::Live;
};

struct EmbeddingVector {
  int subject_id = 0;
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
};

enum class StoreMode { Record, Replay, Passthrough };

StoreMode parse_store_mode(std::string_view name);
std::string_view to_string(StoreMode mode);

struct TranscriptRecord {
  std::string digest;
  nlohmann::json request;
  std::string response_text;
  std::string timestamp;
};

// Digest-keyed transcript cache backed by one JSONL file. Reads are concurrent; writes are
// serialized and appended to the file immediately in record mode.
class TranscriptStore {
 public:
  explicit TranscriptStore(StoreMode mode, std::optional<std::filesystem::path> path = {});

  StoreMode mode() const { return mode_; }
  const std::optional<std::filesystem::path>& path() const { return path_; }

  std::optional<TranscriptRecord> find(const std::string& digest) const;
  void put(TranscriptRecord record);
  std::size_t size() const;
  std::vector<TranscriptRecord> records() const;

 private:
  void load();

  StoreMode mode_;
  std::optional<std::filesystem::path> path_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, TranscriptRecord> records_;
};

// Raw HTTP POST. Implementations throw Error(NetworkFailure) for transport-level
// failures (connection, timeout, 5xx/429); any other failure is Error(ProtocolError).
class HttpBackend {
 public:
  virtual ~HttpBackend() = default;
  virtual std::string post_json(const std::string& url, const std::string& body,
                                const std::string& api_key) = 0;
};

std::unique_ptr<HttpBackend> make_https_backend(std::chrono::seconds timeout = std::chrono::seconds(120));

struct GatewayConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "SYNTHPSYCH_API_KEY";
  std::size_t max_in_flight = 4;
  std::size_t embedding_dim = 1536;  // 0 disables the fixed-dim check
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
};

class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  // `backend` may be null; any request that needs the network then fails with NetworkFailure.
  Gateway(GatewayConfig config, TranscriptStore& store, std::shared_ptr<HttpBackend> backend,
          Sleeper sleeper = {});

  ChatResponse chat_complete(const ChatRequest& req);
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts, const std::string& model_id,
                                     const std::vector<int>& subject_ids = {});

  const GatewayConfig& config() const { return config_; }
  std::size_t live_calls() const;

 private:
  std::string resolve_credential() const;
  std::string post_with_retry(const std::string& url, const std::string& body);
  std::string cached_or_live(const std::string& digest, const nlohmann::json& request_json,
                             const std::string& url, const std::string& wire_body,
                             const std::function<std::string(const std::string&)>& extract,
                             Source& source);

  GatewayConfig config_;
  TranscriptStore& store_;
  std::shared_ptr<HttpBackend> backend_;
  Sleeper sleeper_;
  std::counting_semaphore<64> in_flight_;
  mutable std::mutex stats_mutex_;
  std::size_t live_calls_ = 0;
};

// Wire bodies for the OpenAI-compatible endpoints.
std::string chat_wire_body(const ChatRequest& req);
std::string embedding_wire_body(const std::string& text, const std::string& model_id);
std::string extract_chat_text(const std::string& response_body);
std::vector<double> extract_embedding(const std::string& response_body);

}  // namespace synthpsych::transport
