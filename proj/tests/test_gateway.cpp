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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "copforge/error.hpp"
#include "copforge/gateway.hpp"
#include "copforge/random.hpp"
#include "copforge/server.hpp"

using namespace copforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path TempDir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("copforge_gw_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::shared_ptr<ChatClient> Client(std::shared_ptr<ChatBackend> backend, RetryPolicy policy = {}) {
  auto client = std::make_shared<ChatClient>(std::move(backend), policy);
  client->set_sleeper([](std::chrono::milliseconds) {});
  return client;
}

ChatRequest Req(std::string content, std::string model = "m") {
  return ChatRequest::SingleUser(std::move(model), std::move(content), 0.1, 64);
}

// Counts calls and delays each one so concurrent callers overlap.
class SlowBackend final : public ChatBackend {
 public:
  explicit SlowBackend(std::shared_ptr<ChatBackend> inner) : inner_(std::move(inner)) {}
  BackendReply Send(const ChatRequest& req) override {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    return inner_->Send(req);
  }
  std::atomic<int> calls{0};

 private:
  std::shared_ptr<ChatBackend> inner_;
};

class CountingBackend final : public ChatBackend {
 public:
  explicit CountingBackend(std::shared_ptr<ChatBackend> inner) : inner_(std::move(inner)) {}
  BackendReply Send(const ChatRequest& req) override {
    ++calls;
    return inner_->Send(req);
  }
  std::atomic<int> calls{0};

 private:
  std::shared_ptr<ChatBackend> inner_;
};

}  // namespace

TEST_CASE("canned mock reply completes") {
  auto backend = std::make_shared<ScriptedBackend>(json{{"default", "canned"}});
  Gateway gw(Client(backend), std::nullopt);
  const auto r = gw.Complete(Req("hello"));
  CHECK(r.content == "canned");
  CHECK(r.finish_reason == FinishReason::kComplete);
  CHECK(r.retries == 0);
  CHECK(r.usage.input_units == 5);
}

TEST_CASE("429 twice then success records two retries") {
  auto backend = std::make_shared<ScriptedBackend>(
      json{{"rules", {{{"statuses", {429, 429}}, {"replies", {"ok"}}}}}});
  std::vector<std::chrono::milliseconds> delays;
  auto client = std::make_shared<ChatClient>(backend, RetryPolicy{});
  client->set_sleeper([&](std::chrono::milliseconds d) { delays.push_back(d); });
  const auto r = client->Complete(Req("x"));
  CHECK(r.content == "ok");
  CHECK(r.retries == 2);
  CHECK(backend->calls() == 3);
  REQUIRE(delays.size() == 2);
  // Jitter only shortens the nominal delay.
  CHECK(delays[0] <= std::chrono::milliseconds(500));
  CHECK(delays[0] >= std::chrono::milliseconds(400));
  CHECK(delays[1] <= std::chrono::milliseconds(1000));
  CHECK(delays[1] >= std::chrono::milliseconds(800));
}

TEST_CASE("non-retriable status fails immediately") {
  auto backend = std::make_shared<ScriptedBackend>(json{{"rules", {{{"status", 400}}}}});
  try {
    Client(backend)->Complete(Req("x"));
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.status() == 400);
    CHECK(e.attempts() == 1);
  }
}

TEST_CASE("unreachable backend fails after the configured attempts") {
  auto http = std::make_shared<HttpChatBackend>(
      HttpChatBackend::Options{"http://127.0.0.1:9/v1/chat/completions", "", std::chrono::milliseconds(1000)});
  auto counting = std::make_shared<CountingBackend>(http);
  try {
    Client(counting)->Complete(Req("x"));
    FAIL("expected transport error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTransport);
  }
  CHECK(counting->calls == 5);
}

TEST_CASE("retry schedule respects the wall-clock ceiling") {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    RetryPolicy p;
    p.max_attempts = 1 + static_cast<int>(rng.Below(12));
    p.base_delay = std::chrono::milliseconds(1 + rng.Below(2000));
    p.factor = 1.0 + static_cast<double>(rng.Below(30)) / 10.0;
    p.max_delay = std::chrono::milliseconds(1 + rng.Below(60000));
    p.jitter = static_cast<double>(rng.Below(11)) / 10.0;
    p.wall_ceiling = std::chrono::milliseconds(rng.Below(20000));
    auto backend = std::make_shared<ScriptedBackend>(json{{"rules", {{{"status", 503}}}}});
    auto client = std::make_shared<ChatClient>(backend, p);
    std::chrono::milliseconds total{0};
    client->set_sleeper([&](std::chrono::milliseconds d) { total += d; });
    CHECK_THROWS_AS(client->Complete(Req("x")), BackendError);
    CHECK(total <= p.wall_ceiling);
    CHECK(backend->calls() <= p.max_attempts);
    for (int a = 0; a < 10; ++a) CHECK(p.DelayFor(a) <= p.max_delay);
  }
}

TEST_CASE("finish reasons map to the result") {
  auto backend = std::make_shared<ScriptedBackend>(json{
      {"rules",
       {{{"contains", "long"}, {"replies", {"partial"}}, {"finish_reason", "length"}},
        {{"contains", "filtered"}, {"replies", {""}}, {"finish_reason", "content_filter"}},
        {{"contains", "empty"}, {"replies", {"  "}}}}}});
  auto client = Client(backend);
  CHECK(client->Complete(Req("long")).finish_reason == FinishReason::kTruncated);
  CHECK(client->Complete(Req("filtered")).finish_reason == FinishReason::kRefused);
  CHECK(client->Complete(Req("empty")).finish_reason == FinishReason::kRefused);
}

TEST_CASE("cache key is a pure function of every request field") {
  const auto base = Req("hello");
  CHECK(CacheKey::Of(base) == CacheKey::Of(Req("hello")));
  auto other = base;
  other.temperature = 0.2;
  CHECK(CacheKey::Of(other) != CacheKey::Of(base));
  other = base;
  other.max_output_units = 65;
  CHECK(CacheKey::Of(other) != CacheKey::Of(base));
  other = base;
  other.model_id = "n";
  CHECK(CacheKey::Of(other) != CacheKey::Of(base));
  other = base;
  other.messages[0].role = MessageRole::kSystem;
  CHECK(CacheKey::Of(other) != CacheKey::Of(base));
  CHECK(CacheKey::Of(base).hex.size() == 64);
}

TEST_CASE("read-write cache serves the second call") {
  const auto dir = TempDir("rw");
  auto backend = std::make_shared<ScriptedBackend>(json{{"rules", {{{"replies", {"a", "b", "c"}}}}}});
  Gateway gw(Client(backend), dir);
  const auto first = gw.CachedComplete(Req("q"));
  const auto second = gw.CachedComplete(Req("q"));
  CHECK_FALSE(first.cache_hit);
  CHECK(second.cache_hit);
  CHECK(second.content == first.content);
  CHECK(backend->calls() == 1);
  // A fresh gateway over the same directory hits disk.
  Gateway warm(Client(backend), dir);
  CHECK(warm.CachedComplete(Req("q")).cache_hit);
  CHECK(backend->calls() == 1);
  fs::remove_all(dir);
}

TEST_CASE("read-only cache miss is an error") {
  const auto dir = TempDir("ro");
  auto backend = std::make_shared<ScriptedBackend>(json{{"default", "x"}});
  Gateway gw(Client(backend), dir);
  try {
    gw.CachedComplete(Req("q"), CachePolicy::kReadOnly);
    FAIL("expected cache miss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCache);
    CHECK(std::string(e.what()).find("cache miss") != std::string::npos);
  }
  CHECK(backend->calls() == 0);
  fs::remove_all(dir);
}

TEST_CASE("bypass never touches the cache") {
  const auto dir = TempDir("bypass");
  auto backend = std::make_shared<ScriptedBackend>(json{{"default", "x"}});
  Gateway gw(Client(backend), dir);
  gw.CachedComplete(Req("q"), CachePolicy::kBypass);
  gw.CachedComplete(Req("q"), CachePolicy::kBypass);
  CHECK(backend->calls() == 2);
  CHECK_THROWS_AS(gw.CachedComplete(Req("q"), CachePolicy::kReadOnly), Error);
  fs::remove_all(dir);
}

TEST_CASE("corrupt cache entries are detected") {
  const auto dir = TempDir("corrupt");
  auto backend = std::make_shared<ScriptedBackend>(json{{"default", "x"}});
  Gateway gw(Client(backend), dir);
  gw.CachedComplete(Req("q"));
  ResponseCache cache(dir);
  const auto path = cache.PathFor(CacheKey::Of(Req("q")));
  REQUIRE(fs::exists(path));
  auto j = json::parse(std::ifstream(path));
  j["result"]["content"] = "tampered";
  std::ofstream(path) << j.dump();
  try {
    gw.CachedComplete(Req("q"));
    FAIL("expected corruption error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCache);
  }
  std::ofstream(path) << "{garbage";
  CHECK_THROWS_AS(gw.CachedComplete(Req("q")), Error);
  fs::remove_all(dir);
}

TEST_CASE("100 concurrent identical requests cause one backend call") {
  const auto dir = TempDir("flight");
  auto slow = std::make_shared<SlowBackend>(std::make_shared<ScriptedBackend>(json{{"default", "same"}}));
  Gateway gw(Client(slow), dir);
  std::vector<std::string> contents(100);
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 100; ++i) {
      threads.emplace_back([&, i] { contents[i] = gw.CachedComplete(Req("q")).content; });
    }
  }
  CHECK(slow->calls == 1);
  CHECK(std::all_of(contents.begin(), contents.end(), [](const auto& c) { return c == "same"; }));
  CHECK(gw.stats().logical_requests == 100);
  CHECK(gw.stats().cache_hits == 99);
  fs::remove_all(dir);
}

TEST_CASE("single flight works without a cache directory") {
  auto slow = std::make_shared<SlowBackend>(std::make_shared<ScriptedBackend>(json{{"default", "same"}}));
  Gateway gw(Client(slow), std::nullopt);
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 20; ++i) threads.emplace_back([&] { gw.CachedComplete(Req("q")); });
  }
  CHECK(slow->calls >= 1);
  CHECK(slow->calls <= 20);
}

TEST_CASE("backend calls never exceed distinct keys under read-write") {
  const auto dir = TempDir("bound");
  auto backend = std::make_shared<ScriptedBackend>(json{{"default", "x"}});
  Gateway gw(Client(backend), dir);
  SplitMix64 rng(17);
  std::set<std::string> keys;
  for (int i = 0; i < 300; ++i) {
    const auto req = Req("q" + std::to_string(rng.Below(40)));
    keys.insert(CacheKey::Of(req).hex);
    gw.CachedComplete(req);
    CHECK(backend->calls() <= static_cast<std::int64_t>(keys.size()));
  }
  CHECK(backend->calls() == static_cast<std::int64_t>(keys.size()));
  fs::remove_all(dir);
}

TEST_CASE("request validation") {
  auto r = Req("x");
  r.temperature = 3.0;
  CHECK_THROWS_AS(r.Validate(), Error);
  r = Req("x");
  r.messages.clear();
  CHECK_THROWS_AS(r.Validate(), Error);
  r = Req("x");
  r.max_output_units = 0;
  CHECK_THROWS_AS(r.Validate(), Error);
}

TEST_CASE("scripted replies depend on the request, not call order") {
  auto make = [] {
    return std::make_shared<ScriptedBackend>(json{{"rules", {{{"replies", {"a", "b", "c", "d", "e"}}}}}});
  };
  auto first = make();
  auto second = make();
  std::vector<std::string> forward, backward;
  for (int i = 0; i < 10; ++i) forward.push_back(first->Send(Req("p" + std::to_string(i))).content);
  for (int i = 9; i >= 0; --i) backward.push_back(second->Send(Req("p" + std::to_string(i))).content);
  std::reverse(backward.begin(), backward.end());
  CHECK(forward == backward);
}

TEST_CASE("HTTP backend against a local mock server") {
  auto scripted = std::make_shared<ScriptedBackend>(json{
      {"rules",
       {{{"contains", "busy"}, {"statuses", {503}}, {"replies", {"recovered"}}},
        {{"contains", "cut"}, {"replies", {"partial"}}, {"finish_reason", "length"}},
        {{"contains", "down"}, {"status", 500}},
        {{"replies", {"over http"}}}}}});
  MockBackendServer server(scripted);
  const int port = server.Start("127.0.0.1", 0);
  auto http = std::make_shared<HttpChatBackend>(HttpChatBackend::Options{
      "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "secret", std::chrono::milliseconds(5000)});
  auto client = Client(http);

  const auto ok = client->Complete(Req("hello"));
  CHECK(ok.content == "over http");
  CHECK(ok.finish_reason == FinishReason::kComplete);
  CHECK(ok.usage.output_units == 9);
  CHECK(scripted->requests().back() == Req("hello"));

  const auto recovered = client->Complete(Req("busy"));
  CHECK(recovered.content == "recovered");
  CHECK(recovered.retries == 1);

  CHECK(client->Complete(Req("cut")).finish_reason == FinishReason::kTruncated);

  try {
    client->Complete(Req("down"));
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.status() == 500);
    CHECK(e.attempts() == 5);
  }
  server.Stop();
}

TEST_CASE("http urls get a usable default timeout") {
  // Replies that are not ready immediately must not time out.
  MockBackendServer server(
      std::make_shared<SlowBackend>(std::make_shared<ScriptedBackend>(json{{"default", "slow"}})));
  const int port = server.Start("127.0.0.1", 0);
  auto backend = MakeBackend("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "");
  CHECK(backend->Send(Req("x")).content == "slow");
  server.Stop();
  CHECK_THROWS_AS(HttpChatBackend(HttpChatBackend::Options{"http://h/", "", std::chrono::milliseconds(0)}), Error);
}

TEST_CASE("wire encoding round-trips") {
  ChatRequest req{"m", {{MessageRole::kSystem, "sys"}, {MessageRole::kUser, "u"}}, 0.7, 12};
  CHECK(DecodeWireRequest(EncodeWireRequest(req)) == req);
  CHECK(ParseCachePolicy("read-only") == CachePolicy::kReadOnly);
  CHECK_FALSE(ParseCachePolicy("sometimes").has_value());
}

TEST_CASE("mock: urls load scripts from disk") {
  const auto dir = TempDir("script");
  const auto path = dir / "script.json";
  std::ofstream(path) << R"({"default": "from file"})";
  auto backend = MakeBackend("mock:" + path.string(), "");
  CHECK(backend->Send(Req("x")).content == "from file");
  CHECK_THROWS_AS(MakeBackend("mock:" + (dir / "missing.json").string(), ""), Error);
  CHECK_THROWS_AS(MakeBackend("no-scheme", ""), Error);
  fs::remove_all(dir);
}
