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

#include "copforge/gateway.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "copforge/error.hpp"
#include "copforge/text.hpp"

namespace copforge {

using nlohmann::json;

std::string Sha256Hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::kCache, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string_view MessageRoleName(MessageRole role) {
  switch (role) {
    case MessageRole::kSystem: return "system";
    case MessageRole::kUser: return "user";
    case MessageRole::kAssistant: return "assistant";
  }
  return "user";
}

namespace {

MessageRole ParseMessageRole(std::string_view s) {
  if (s == "system") return MessageRole::kSystem;
  if (s == "assistant") return MessageRole::kAssistant;
  if (s == "user") return MessageRole::kUser;
  throw Error(ErrorKind::kValidation, "unknown message role '" + std::string(s) + "'");
}

std::string Excerpt(std::string_view body) {
  constexpr std::size_t kMax = 200;
  return std::string(body.substr(0, kMax));
}

}  // namespace

ChatRequest ChatRequest::SingleUser(std::string model_id, std::string content, double temperature,
                                    int max_output_units) {
  ChatRequest req;
  req.model_id = std::move(model_id);
  req.messages.push_back({MessageRole::kUser, std::move(content)});
  req.temperature = temperature;
  req.max_output_units = max_output_units;
  return req;
}

void ChatRequest::Validate() const {
  if (messages.empty()) throw Error(ErrorKind::kValidation, "chat request has no messages");
  if (!std::isfinite(temperature) || temperature < 0.0 || temperature > 2.0) {
    throw Error(ErrorKind::kValidation, "temperature must be finite and within [0, 2]");
  }
  if (max_output_units <= 0) {
    throw Error(ErrorKind::kValidation, "max_output_units must be positive");
  }
}

json ChatRequest::ToJson() const {
  json msgs = json::array();
  for (const auto& m : messages) {
    msgs.push_back({{"role", MessageRoleName(m.role)}, {"content", m.content}});
  }
  return {{"model", model_id},
          {"messages", msgs},
          {"temperature", temperature},
          {"max_output_units", max_output_units}};
}

CacheKey CacheKey::Of(const ChatRequest& req) {
  // Temperature is encoded by its bit pattern so that no two distinct doubles
  // share a key.
  json msgs = json::array();
  for (const auto& m : req.messages) msgs.push_back({MessageRoleName(m.role), m.content});
  json canonical = json::array({"copforge.chat.v1", req.model_id, msgs,
                                std::bit_cast<std::uint64_t>(req.temperature),
                                req.max_output_units});
  return CacheKey{Sha256Hex(canonical.dump())};
}

std::string_view FinishReasonName(FinishReason r) {
  switch (r) {
    case FinishReason::kComplete: return "complete";
    case FinishReason::kTruncated: return "truncated";
    case FinishReason::kRefused: return "refused";
  }
  return "complete";
}

FinishReason ParseFinishReason(std::string_view v) {
  if (v == "length" || v == "truncated" || v == "max_tokens") return FinishReason::kTruncated;
  if (v == "content_filter" || v == "refused" || v == "refusal") return FinishReason::kRefused;
  return FinishReason::kComplete;
}

json ChatResult::ToJson() const {
  return {{"content", content},
          {"finish_reason", FinishReasonName(finish_reason)},
          {"usage", {{"input_units", usage.input_units}, {"output_units", usage.output_units}}}};
}

ChatResult ChatResult::FromJson(const json& j) {
  ChatResult r;
  r.content = j.at("content").get<std::string>();
  r.finish_reason = ParseFinishReason(j.at("finish_reason").get<std::string>());
  r.usage.input_units = j.at("usage").at("input_units").get<std::int64_t>();
  r.usage.output_units = j.at("usage").at("output_units").get<std::int64_t>();
  return r;
}

// ---------------------------------------------------------------------------
// Wire format

json EncodeWireRequest(const ChatRequest& req) {
  json msgs = json::array();
  for (const auto& m : req.messages) {
    msgs.push_back({{"role", MessageRoleName(m.role)}, {"content", m.content}});
  }
  return {{"model", req.model_id},
          {"messages", msgs},
          {"temperature", req.temperature},
          {"max_tokens", req.max_output_units}};
}

ChatRequest DecodeWireRequest(const json& j) {
  ChatRequest req;
  req.model_id = j.value("model", "");
  for (const auto& m : j.at("messages")) {
    req.messages.push_back(
        {ParseMessageRole(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  }
  req.temperature = j.value("temperature", 1.0);
  req.max_output_units = j.value("max_tokens", kDefaultMaxOutputUnits);
  return req;
}

json EncodeWireResponse(const BackendReply& reply) {
  json out = {{"object", "chat.completion"},
              {"choices",
               json::array({{{"index", 0},
                             {"message", {{"role", "assistant"}, {"content", reply.content}}},
                             {"finish_reason", reply.finish_reason}}})}};
  if (reply.usage) {
    out["usage"] = {{"prompt_tokens", reply.usage->input_units},
                    {"completion_tokens", reply.usage->output_units}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// HttpChatBackend

HttpChatBackend::HttpChatBackend(Options options) : options_(std::move(options)) {
  if (options_.timeout < std::chrono::seconds(1)) {
    throw Error(ErrorKind::kConfig, "backend timeout must be at least one second");
  }
  const auto scheme_end = options_.url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::kConfig, "backend url must include a scheme: " + options_.url);
  }
  const auto path_start = options_.url.find('/', scheme_end + 3);
  origin_ = options_.url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/v1/chat/completions" : options_.url.substr(path_start);
}

BackendReply HttpChatBackend::Send(const ChatRequest& req) {
  httplib::Client cli(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout).count();
  cli.set_connection_timeout(secs);
  cli.set_read_timeout(secs);
  cli.set_write_timeout(secs);
  httplib::Headers headers;
  if (!options_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + options_.api_key);
  }
  auto res = cli.Post(path_, headers, EncodeWireRequest(req).dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::kTransport,
                "request to " + origin_ + " failed: " + httplib::to_string(res.error()));
  }
  BackendReply reply;
  reply.status = res->status;
  if (res->status != 200) {
    reply.body = Excerpt(res->body);
    return reply;
  }
  try {
    const auto j = json::parse(res->body);
    const auto& choice = j.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    reply.content = content.is_string() ? content.get<std::string>() : std::string();
    const auto& fr = choice.contains("finish_reason") ? choice["finish_reason"] : json();
    reply.finish_reason = fr.is_string() ? fr.get<std::string>() : "stop";
    if (j.contains("usage") && j["usage"].is_object()) {
      reply.usage = Usage{j["usage"].value("prompt_tokens", std::int64_t{0}),
                          j["usage"].value("completion_tokens", std::int64_t{0})};
    }
  } catch (const json::exception& e) {
    reply.status = 502;
    reply.body = "unparseable backend response: " + Excerpt(res->body);
  }
  return reply;
}

// ---------------------------------------------------------------------------
// ScriptedBackend

ScriptedBackend::ScriptedBackend(json script) {
  if (script.contains("sequence")) {
    for (const auto& s : script["sequence"]) sequence_.push_back(s);
  }
  if (script.contains("rules")) {
    for (const auto& r : script["rules"]) {
      Rule rule;
      if (r.contains("model")) rule.model = r["model"].get<std::string>();
      if (r.contains("contains")) rule.contains = r["contains"].get<std::string>();
      if (r.contains("digest")) rule.digest = r["digest"].get<std::string>();
      if (r.contains("statuses")) rule.statuses = r["statuses"].get<std::vector<int>>();
      if (r.contains("status")) rule.status = r["status"].get<int>();
      if (r.contains("replies")) rule.replies = r["replies"].get<std::vector<std::string>>();
      if (r.contains("reply")) rule.replies.push_back(r["reply"].get<std::string>());
      rule.finish_reason = r.value("finish_reason", "stop");
      rules_.push_back(std::move(rule));
    }
  }
  if (script.contains("default")) default_ = script["default"];
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::FromFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open mock script " + path);
  try {
    return std::make_shared<ScriptedBackend>(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, "invalid mock script " + path + ": " + e.what());
  }
}

namespace {

BackendReply ReplyFromJson(const json& j, const ChatRequest& req) {
  BackendReply r;
  if (j.is_string()) {
    r.content = j.get<std::string>();
  } else {
    r.status = j.value("status", 200);
    r.content = j.value("reply", "");
    r.finish_reason = j.value("finish_reason", "stop");
    if (r.status != 200) r.body = j.value("body", "scripted failure");
  }
  std::int64_t in_units = 0;
  for (const auto& m : req.messages) in_units += static_cast<std::int64_t>(text::CountScalars(m.content));
  r.usage = Usage{in_units, static_cast<std::int64_t>(text::CountScalars(r.content))};
  return r;
}

bool AnyMessageContains(const ChatRequest& req, std::string_view needle) {
  return std::any_of(req.messages.begin(), req.messages.end(), [&](const ChatMessage& m) {
    return m.content.find(needle) != std::string::npos;
  });
}

}  // namespace

BackendReply ScriptedBackend::FromRule(Rule& rule, const ChatRequest& req) {
  if (rule.consumed < rule.statuses.size()) {
    json failure = {{"status", rule.statuses[rule.consumed++]}};
    return ReplyFromJson(failure, req);
  }
  if (rule.status && *rule.status != 200) {
    return ReplyFromJson(json{{"status", *rule.status}}, req);
  }
  if (rule.replies.empty()) return ReplyFromJson(json{{"status", 500}, {"body", "empty rule"}}, req);
  const auto key = CacheKey::Of(req).hex;
  const auto pick = std::stoull(key.substr(0, 12), nullptr, 16) % rule.replies.size();
  json reply = {{"reply", rule.replies[pick]}, {"finish_reason", rule.finish_reason}};
  return ReplyFromJson(reply, req);
}

BackendReply ScriptedBackend::Send(const ChatRequest& req) {
  ++calls_;
  std::lock_guard lock(mu_);
  log_.push_back(req);
  if (sequence_pos_ < sequence_.size()) return ReplyFromJson(sequence_[sequence_pos_++], req);
  std::optional<std::string> digest;
  for (auto& rule : rules_) {
    if (rule.model && *rule.model != req.model_id) continue;
    if (rule.contains && !AnyMessageContains(req, *rule.contains)) continue;
    if (rule.digest) {
      if (!digest) digest = CacheKey::Of(req).hex;
      if (*rule.digest != *digest) continue;
    }
    return FromRule(rule, req);
  }
  if (default_) return ReplyFromJson(*default_, req);
  return ReplyFromJson(json{{"status", 404}, {"body", "no scripted reply matches request"}}, req);
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mu_);
  return log_;
}

// ---------------------------------------------------------------------------
// Retry and rate limiting

std::chrono::milliseconds RetryPolicy::DelayFor(int attempt) const {
  const double raw = static_cast<double>(base_delay.count()) * std::pow(factor, attempt);
  const double capped = std::min(raw, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(capped));
}

bool IsRetriableStatus(int status) {
  return status == 408 || status == 409 || status == 429 || status >= 500;
}

RateLimiter::RateLimiter(double requests_per_second, double burst)
    : rate_(requests_per_second),
      burst_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::Acquire() {
  if (rate_ <= 0.0) return;
  std::unique_lock lock(mu_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const double wait = (1.0 - tokens_) / rate_;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    lock.lock();
  }
}

ChatClient::ChatClient(std::shared_ptr<ChatBackend> backend, RetryPolicy policy,
                       double requests_per_second)
    : backend_(std::move(backend)),
      policy_(policy),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }),
      rng_state_(std::random_device{}()) {
  if (requests_per_second > 0.0) {
    limiter_ = std::make_unique<RateLimiter>(requests_per_second, requests_per_second);
  }
  if (policy_.max_attempts < 1) throw Error(ErrorKind::kConfig, "max_attempts must be >= 1");
}

ChatResult ChatClient::Complete(const ChatRequest& req) {
  req.Validate();
  std::chrono::milliseconds slept{0};
  for (int attempt = 0;; ++attempt) {
    if (limiter_) limiter_->Acquire();
    std::optional<BackendReply> reply;
    std::string transport_error;
    try {
      reply = backend_->Send(req);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kTransport) throw;
      transport_error = e.what();
    }
    if (reply && reply->status == 200) {
      ChatResult result;
      result.content = std::move(reply->content);
      result.finish_reason = ParseFinishReason(reply->finish_reason);
      if (result.finish_reason == FinishReason::kComplete && text::Trim(result.content).empty()) {
        result.finish_reason = FinishReason::kRefused;
      }
      if (reply->usage) {
        result.usage = *reply->usage;
      } else {
        for (const auto& m : req.messages) {
          result.usage.input_units += static_cast<std::int64_t>(text::CountScalars(m.content));
        }
        result.usage.output_units = static_cast<std::int64_t>(text::CountScalars(result.content));
      }
      result.retries = attempt;
      return result;
    }
    const bool retriable = !reply || IsRetriableStatus(reply->status);
    const int attempts = attempt + 1;
    auto fail = [&]() -> ChatResult {
      if (reply) throw BackendError(reply->status, reply->body, attempts);
      throw Error(ErrorKind::kTransport,
                  transport_error + " (after " + std::to_string(attempts) + " attempt(s))");
    };
    if (!retriable || attempts >= policy_.max_attempts) return fail();

    auto delay = policy_.DelayFor(attempt);
    if (policy_.jitter > 0.0) {
      double u;
      {
        std::lock_guard lock(rng_mu_);
        std::mt19937_64 rng(rng_state_++);
        u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      }
      delay = std::chrono::milliseconds(
          static_cast<std::int64_t>(static_cast<double>(delay.count()) * (1.0 - policy_.jitter * u)));
    }
    if (slept + delay > policy_.wall_ceiling) return fail();
    slept += delay;
    ++total_retries_;
    sleeper_(delay);
  }
}

// ---------------------------------------------------------------------------
// Cache

std::optional<CachePolicy> ParseCachePolicy(std::string_view s) {
  if (s == "read-write" || s == "read_write" || s == "readwrite") return CachePolicy::kReadWrite;
  if (s == "read-only" || s == "read_only" || s == "readonly") return CachePolicy::kReadOnly;
  if (s == "bypass") return CachePolicy::kBypass;
  return std::nullopt;
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create cache directory " + dir_.string());
}

std::filesystem::path ResponseCache::PathFor(const CacheKey& key) const {
  return dir_ / key.hex.substr(0, 2) / (key.hex + ".json");
}

std::optional<ChatResult> ResponseCache::Load(const CacheKey& key) const {
  const auto path = PathFor(key);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    const auto record = json::parse(in);
    const auto& result = record.at("result");
    if (record.at("key").get<std::string>() != key.hex ||
        record.at("check").get<std::string>() != Sha256Hex(result.dump())) {
      throw Error(ErrorKind::kCache, "cache corruption: digest mismatch in " + path.string());
    }
    return ChatResult::FromJson(result);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kCache, "cache corruption: unreadable record " + path.string());
  }
}

void ResponseCache::Store(const CacheKey& key, const ChatRequest& req,
                          const ChatResult& result) const {
  const auto path = PathFor(key);
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  const auto stored = result.ToJson();
  const json record = {{"key", key.hex},
                       {"request", req.ToJson()},
                       {"result", stored},
                       {"check", Sha256Hex(stored.dump())}};
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + "." +
         std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write cache file " + tmp.string());
    out << record.dump();
    if (!out.flush()) throw Error(ErrorKind::kIo, "cannot write cache file " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::kIo, "cannot commit cache file " + path.string());
  }
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<ChatClient> client, std::optional<std::filesystem::path> cache_dir,
                 CachePolicy default_policy)
    : client_(std::move(client)), default_policy_(default_policy) {
  if (cache_dir) cache_.emplace(*cache_dir);
}

ChatResult Gateway::Complete(const ChatRequest& req) {
  ++backend_calls_;
  return client_->Complete(req);
}

ChatResult Gateway::Fetch(const ChatRequest& req, const CacheKey& key) {
  auto result = Complete(req);
  if (cache_) cache_->Store(key, req, result);
  return result;
}

ChatResult Gateway::CachedComplete(const ChatRequest& req, CachePolicy policy) {
  req.Validate();
  ++logical_;
  if (policy == CachePolicy::kBypass) return Complete(req);

  const auto key = CacheKey::Of(req);
  if (policy == CachePolicy::kReadOnly) {
    if (!cache_) throw Error(ErrorKind::kConfig, "read-only cache policy needs a cache directory");
    auto hit = cache_->Load(key);
    if (!hit) throw Error(ErrorKind::kCache, "cache miss for key " + key.hex);
    ++cache_hits_;
    hit->cache_hit = true;
    return *hit;
  }

  if (cache_) {
    if (auto hit = cache_->Load(key)) {
      ++cache_hits_;
      hit->cache_hit = true;
      return *hit;
    }
  }

  std::promise<ChatResult> promise;
  std::shared_future<ChatResult> waiter;
  {
    std::lock_guard lock(inflight_mu_);
    if (auto it = inflight_.find(key); it != inflight_.end()) {
      waiter = it->second;
    } else {
      inflight_.emplace(key, promise.get_future().share());
    }
  }
  if (waiter.valid()) {
    auto result = waiter.get();
    ++cache_hits_;
    result.cache_hit = true;
    return result;
  }

  auto release = [&] {
    std::lock_guard lock(inflight_mu_);
    inflight_.erase(key);
  };
  try {
    // A leader that finished between our disk probe and taking the slot
    // has already persisted the result.
    std::optional<ChatResult> late = cache_ ? cache_->Load(key) : std::nullopt;
    ChatResult result;
    if (late) {
      ++cache_hits_;
      result = *late;
      result.cache_hit = true;
    } else {
      result = Fetch(req, key);
    }
    promise.set_value(result);
    release();
    return result;
  } catch (...) {
    promise.set_exception(std::current_exception());
    release();
    throw;
  }
}

GatewayStats Gateway::stats() const {
  return {logical_.load(), backend_calls_.load(), cache_hits_.load()};
}

std::shared_ptr<ChatBackend> MakeBackend(const std::string& url, const std::string& api_key) {
  constexpr std::string_view kMock = "mock:";
  if (url.rfind(kMock, 0) == 0) return ScriptedBackend::FromFile(url.substr(kMock.size()));
  if (url.empty()) throw Error(ErrorKind::kConfig, "no backend url configured");
  HttpChatBackend::Options options;
  options.url = url;
  options.api_key = api_key;
  return std::make_shared<HttpChatBackend>(std::move(options));
}

}  // namespace copforge
