// Copyright 2026 The CopForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace copforge {

std::string Sha256Hex(std::string_view data);

enum class MessageRole { kSystem, kUser, kAssistant };
std::string_view MessageRoleName(MessageRole role);

struct ChatMessage {
  MessageRole role = MessageRole::kUser;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

// Annotation requests use this temperature; see ChatRequest::ForAnnotation.
inline constexpr double kAnnotationTemperature = 0.1;
inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kJudgeTemperature = 0.0;
inline constexpr int kDefaultMaxOutputUnits = 1024;

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = kAnnotationTemperature;
  int max_output_units = kDefaultMaxOutputUnits;

  static ChatRequest SingleUser(std::string model_id, std::string content, double temperature,
                                int max_output_units = kDefaultMaxOutputUnits);

  // Throws Error(kValidation) when the request violates its invariants.
  void Validate() const;
  nlohmann::json ToJson() const;

  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

// Digest over a canonical encoding of every request field.
struct CacheKey {
  std::string hex;

  static CacheKey Of(const ChatRequest& req);
  friend bool operator==(const CacheKey&, const CacheKey&) = default;
  friend auto operator<=>(const CacheKey&, const CacheKey&) = default;
};

enum class FinishReason { kComplete, kTruncated, kRefused };
std::string_view FinishReasonName(FinishReason r);
FinishReason ParseFinishReason(std::string_view backend_value);

struct Usage {
  std::int64_t input_units = 0;
  std::int64_t output_units = 0;
};

struct ChatResult {
  std::string content;
  FinishReason finish_reason = FinishReason::kComplete;
  Usage usage;
  bool cache_hit = false;
  int retries = 0;

  nlohmann::json ToJson() const;
  static ChatResult FromJson(const nlohmann::json& j);
};

// Single-attempt reply from a transport.
struct BackendReply {
  int status = 200;
  std::string body;  // error body excerpt when status != 200
  std::string content;
  std::string finish_reason = "stop";
  std::optional<Usage> usage;
};

// Raw transport: one attempt per call. Network failures throw
// Error(kTransport); HTTP-level failures come back as a non-200 status.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual BackendReply Send(const ChatRequest& req) = 0;
};

// OpenAI-compatible chat-completion endpoint over HTTP(S).
class HttpChatBackend final : public ChatBackend {
 public:
  struct Options {
    std::string url;  // full endpoint, e.g. http://host:port/v1/chat/completions
    std::string api_key;
    std::chrono::milliseconds timeout{60000};
  };
  explicit HttpChatBackend(Options options);
  BackendReply Send(const ChatRequest& req) override;

 private:
  Options options_;
  std::string origin_;
  std::string path_;
};

// Wire helpers shared by HttpChatBackend and the mock server.
nlohmann::json EncodeWireRequest(const ChatRequest& req);
ChatRequest DecodeWireRequest(const nlohmann::json& j);
nlohmann::json EncodeWireResponse(const BackendReply& reply);

// Scripted responses for tests and offline runs.
//
// Script JSON:
//   {"sequence": [reply...],             consumed in order before any rule
//    "rules": [{"model": "...", "contains": "...", "digest": "...",
//               "statuses": [429, 429],  failures served before replies
//               "status": 200,           status for every call (e.g. 503)
//               "replies": ["...", ...], chosen by request digest
//               "finish_reason": "stop"}],
//    "default": reply}
// A reply is a string or {"status": n, "reply": "...", "finish_reason": "..."}.
// Rules are tried in order; "contains" matches any message content.
class ScriptedBackend final : public ChatBackend {
 public:
  explicit ScriptedBackend(nlohmann::json script);
  static std::shared_ptr<ScriptedBackend> FromFile(const std::string& path);

  BackendReply Send(const ChatRequest& req) override;

  std::int64_t calls() const { return calls_.load(); }
  std::vector<ChatRequest> requests() const;

 private:
  struct Rule {
    std::optional<std::string> model, contains, digest;
    std::vector<int> statuses;
    std::optional<int> status;
    std::vector<std::string> replies;
    std::string finish_reason = "stop";
    std::size_t consumed = 0;
  };
  BackendReply FromRule(Rule& rule, const ChatRequest& req);

  mutable std::mutex mu_;
  std::vector<nlohmann::json> sequence_;
  std::size_t sequence_pos_ = 0;
  std::vector<Rule> rules_;
  std::optional<nlohmann::json> default_;
  std::vector<ChatRequest> log_;
  std::atomic<std::int64_t> calls_{0};
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{500};
  double factor = 2.0;
  std::chrono::milliseconds max_delay{30000};
  // Fraction of each delay that is randomized, in [0, 1].
  double jitter = 0.2;
  // Total time budget for sleeping between attempts.
  std::chrono::milliseconds wall_ceiling{120000};

  // Un-jittered delay before attempt `attempt + 1` (attempt is 0-based).
  std::chrono::milliseconds DelayFor(int attempt) const;
};

bool IsRetriableStatus(int status);

// Token bucket; zero rate disables limiting.
class RateLimiter {
 public:
  RateLimiter(double requests_per_second, double burst);
  void Acquire();

 private:
  std::mutex mu_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

// Retrying client over a ChatBackend.
class ChatClient {
 public:
  ChatClient(std::shared_ptr<ChatBackend> backend, RetryPolicy policy = {},
             double requests_per_second = 0.0);

  // Retries transport failures and retriable statuses with capped, jittered
  // exponential backoff. Truncation is reported via finish_reason.
  ChatResult Complete(const ChatRequest& req);

  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }
  const RetryPolicy& policy() const { return policy_; }
  std::int64_t total_retries() const { return total_retries_.load(); }

 private:
  std::shared_ptr<ChatBackend> backend_;
  RetryPolicy policy_;
  std::unique_ptr<RateLimiter> limiter_;
  Sleeper sleeper_;
  std::atomic<std::int64_t> total_retries_{0};
  std::mutex rng_mu_;
  std::uint64_t rng_state_;
};

enum class CachePolicy { kReadWrite, kReadOnly, kBypass };
std::optional<CachePolicy> ParseCachePolicy(std::string_view s);

// Content-addressed on-disk store, one file per key, atomic writes.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<ChatResult> Load(const CacheKey& key) const;
  void Store(const CacheKey& key, const ChatRequest& req, const ChatResult& result) const;
  std::filesystem::path PathFor(const CacheKey& key) const;

 private:
  std::filesystem::path dir_;
};

struct GatewayStats {
  std::int64_t logical_requests = 0;
  std::int64_t backend_calls = 0;
  std::int64_t cache_hits = 0;
};

// The handle every pipeline stage uses: retrying client plus optional disk
// cache with a single-flight guarantee per key.
class Gateway {
 public:
  Gateway(std::shared_ptr<ChatClient> client, std::optional<std::filesystem::path> cache_dir,
          CachePolicy default_policy = CachePolicy::kReadWrite);

  ChatResult Complete(const ChatRequest& req);
  ChatResult CachedComplete(const ChatRequest& req, CachePolicy policy);
  ChatResult CachedComplete(const ChatRequest& req) { return CachedComplete(req, default_policy_); }

  GatewayStats stats() const;
  CachePolicy default_policy() const { return default_policy_; }
  ChatClient& client() { return *client_; }

 private:
  ChatResult Fetch(const ChatRequest& req, const CacheKey& key);

  std::shared_ptr<ChatClient> client_;
  std::optional<ResponseCache> cache_;
  CachePolicy default_policy_;

  std::mutex inflight_mu_;
  std::map<CacheKey, std::shared_future<ChatResult>> inflight_;

  std::atomic<std::int64_t> logical_{0};
  std::atomic<std::int64_t> backend_calls_{0};
  std::atomic<std::int64_t> cache_hits_{0};
};

// "mock:<script.json>" yields a ScriptedBackend; anything else is an HTTP URL.
std::shared_ptr<ChatBackend> MakeBackend(const std::string& url, const std::string& api_key);

}  // namespace copforge
