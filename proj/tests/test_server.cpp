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
#include <httplib.h>

#include "copforge/error.hpp"
#include "copforge/io.hpp"
#include "copforge/server.hpp"
#include "fixtures/synthetic.hpp"

using namespace copforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path TempDir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("copforge_srv_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Neutral response texts, so payloads cannot leak provenance; the test keeps
// the text -> source map on its side.
struct EvalFixture {
  std::vector<Dialogue> corpus = fixtures::PipelineCorpus();
  std::vector<ResponseRecord> responses;
  std::map<std::string, SourceVariant> source_of;
  std::vector<std::string> utterances;
  PresentationPlan plan;

  EvalFixture() {
    int k = 0;
    for (const auto& d : corpus) {
      for (const auto& ctx : ContextsOf(d)) {
        const auto id = UtteranceId(ctx);
        utterances.push_back(id);
        for (auto v : kAllSources) {
          ResponseRecord r;
          r.utterance_id = id;
          r.dialogue_id = d.id;
          r.target_turn_index = *ctx.target_turn_index;
          r.source = v;
          r.response = "reply " + std::to_string(++k);
          r.length = r.response.size();
          source_of[r.response] = v;
          responses.push_back(r);
        }
      }
    }
    plan = BuildPresentationPlan(utterances, kAllSources, 7);
  }

  std::shared_ptr<EvalStore> Store(const std::string& ratings_path) const {
    return std::make_shared<EvalStore>(corpus, responses, plan, ratings_path, "secret");
  }
};

int ScoreFor(SourceVariant v) { return 1 + static_cast<int>(v) % 5; }

json RateAll(const json& step, const EvalFixture& f) {
  json ratings = json::array();
  for (const auto& c : step["candidates"]) {
    ratings.push_back({{"utterance_id", step["utterance_id"]},
                       {"source_token", c["source_token"]},
                       {"score", ScoreFor(f.source_of.at(c["response"].get<std::string>()))}});
  }
  return {{"evaluator_id", step["evaluator_id"]}, {"ratings", ratings}};
}

void CheckBlind(const json& payload) {
  const auto text = payload.dump();
  for (auto v : kAllSources) {
    REQUIRE(text.find("\"" + std::string(SourceName(v)) + "\"") == std::string::npos);
    REQUIRE(text.find(std::string(SourceLabel(v))) == std::string::npos);
  }
  REQUIRE(!payload.contains("variant"));
  REQUIRE(!payload.contains("source"));
}

ErrorKind KindOf(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kIo;
}

struct ApiHarness {
  std::shared_ptr<ScriptedBackend> backend;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<CounselorRuntime> runtime;
  std::unique_ptr<ApiServer> server;
  std::unique_ptr<httplib::Client> client;

  explicit ApiHarness(std::shared_ptr<EvalStore> eval = nullptr, json script = fixtures::PipelineScript()) {
    backend = std::make_shared<ScriptedBackend>(std::move(script));
    auto c = std::make_shared<ChatClient>(backend);
    c->set_sleeper([](std::chrono::milliseconds) {});
    gateway = std::make_unique<Gateway>(c, std::nullopt);
    RuntimeConfig config;
    config.corpus = std::make_shared<const std::vector<Dialogue>>(fixtures::PipelineCorpus());
    runtime = std::make_unique<CounselorRuntime>(config, *gateway);
    server = std::make_unique<ApiServer>(*runtime, ServerOptions{}, std::move(eval));
    const int port = server->Start("127.0.0.1", 0);
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
  }

  std::pair<int, json> Post(const std::string& path, const json& body) {
    auto res = client->Post(path, body.dump(), "application/json");
    REQUIRE(res);
    return {res->status, json::parse(res->body)};
  }
  std::pair<int, json> Get(const std::string& path) {
    auto res = client->Get(path);
    REQUIRE(res);
    return {res->status, json::parse(res->body)};
  }
};

}  // namespace

TEST_CASE("response records round-trip") {
  ResponseRecord r;
  r.utterance_id = "d1#1";
  r.dialogue_id = "d1";
  r.target_turn_index = 1;
  r.source = SourceVariant::kCbtOnly;
  r.response = "你好";
  r.analysis = MakeAnalysis(Approach::kCbt, {"a", "b", "c", "d"}, AnalysisSource::kModelGenerated);
  r.length = 2;
  const auto back = ParseResponses(SerializeResponses({r}));
  REQUIRE(back.size() == 1);
  CHECK(back[0].analysis->dimensions == r.analysis->dimensions);
  CHECK(back[0].response == "你好");
  CHECK(LengthsOf(back).at({"d1#1", SourceVariant::kCbtOnly}) == 2);
}

TEST_CASE("chat API over HTTP") {
  ApiHarness h;
  CHECK(h.Get("/api/health").first == 200);

  auto [status, created] = h.Post("/api/sessions", {{"variant", "mixed"}});
  CHECK(status == 201);
  const auto id = created["session_id"].get<std::string>();
  CHECK(created["variant"] == "mixed");

  auto [s1, turn] = h.Post("/api/sessions/" + id + "/messages", {{"text", "我最近压力很大"}});
  CHECK(s1 == 200);
  CHECK(turn["variant"] == "mixed");
  CHECK(turn["response"].is_string());
  CHECK(!turn.contains("analysis"));
  CHECK(turn["flags"].is_array());

  h.Post("/api/sessions/" + id + "/messages", {{"text", "还是睡不着"}});
  auto [s2, transcript] = h.Get("/api/sessions/" + id);
  CHECK(s2 == 200);
  CHECK(transcript["turns"].size() == 4);

  CHECK(h.Post("/api/sessions/nope/messages", {{"text", "x"}}).first == 404);
  CHECK(h.Get("/api/sessions/nope").first == 404);
  auto [s3, bad] = h.Post("/api/sessions", {{"variant", "gpt5"}});
  CHECK(s3 == 400);
  CHECK(bad["error"] == "validation");
  CHECK(h.Post("/api/sessions/" + id + "/messages", json::object()).first == 400);

  auto [s4, gt] = h.Post("/api/sessions", {{"variant", "ground_truth"}, {"dialogue_id", "d2"}});
  CHECK(s4 == 201);
  const auto gt_id = gt["session_id"].get<std::string>();
  CHECK(h.Post("/api/sessions/" + gt_id + "/messages", {{"text", "a"}}).first == 200);
  CHECK(h.Post("/api/sessions/" + gt_id + "/messages", {{"text", "b"}}).first == 200);
  auto [s5, exhausted] = h.Post("/api/sessions/" + gt_id + "/messages", {{"text", "c"}});
  CHECK(s5 == 409);
  CHECK(exhausted["error"] == "exhausted");

  CHECK(h.Get("/api/eval/next?evaluator=A").first == 404);
  h.server->Stop();
}

TEST_CASE("respond-all endpoint") {
  auto script = fixtures::PipelineScript();
  script["rules"].insert(script["rules"].begin(),
                         json{{"model", "psymix-sfbt"}, {"status", 400}, {"replies", {"x"}}});
  ApiHarness h(nullptr, script);
  const json body = {{"dialogue_id", "d1"},
                     {"turns", {{{"role", "seeker"}, {"text", "我最近总是睡不着"}}}},
                     {"target_turn_index", 1}};
  auto [status, out] = h.Post("/api/respond-all", body);
  CHECK(status == 200);
  CHECK(out["utterance_id"] == "d1#1");
  CHECK(out["results"].size() == 6);
  CHECK(out["failures"].contains("sfbt"));
  CHECK(out["results"]["ground_truth"]["response"] == "听起来你很辛苦，能说说发生了什么吗？");

  json subset = body;
  subset["sources"] = {"naive", "baseline"};
  auto [s2, some] = h.Post("/api/respond-all", subset);
  CHECK(s2 == 200);
  CHECK(some["results"].size() == 2);
  subset["sources"] = {"nobody"};
  CHECK(h.Post("/api/respond-all", subset).first == 400);
}

TEST_CASE("evaluation flow persists blind ratings in plan order") {
  const auto dir = TempDir("flow");
  const auto path = (dir / "ratings.jsonl").string();
  EvalFixture f;
  auto store = f.Store(path);

  CHECK(store->Dialogues().size() == 3);
  auto step = store->NextStep("A", std::string("d1"));
  CHECK(step["done"] == false);
  CHECK(step["utterance_id"] == "d1#1");
  CHECK(step["position"] == 0);
  CHECK(step["total"] == 3);
  CHECK(step["seeker_utterance"] == "我最近总是睡不着");
  CHECK(step["context"].empty());
  CheckBlind(step);

  std::vector<SourceVariant> shown;
  for (const auto& c : step["candidates"]) shown.push_back(f.source_of.at(c["response"].get<std::string>()));
  CHECK(shown == *f.plan.OrderFor("d1#1"));

  const auto result = store->Submit(RateAll(step, f));
  CHECK(result["accepted"] == 7);
  CHECK(result["next"]["utterance_id"] == "d1#3");
  CHECK(result["next"]["context"].size() == 2);
  CheckBlind(result["next"]);

  const auto saved = ParseRatings(ReadFile(path));
  REQUIRE(saved.size() == 7);
  for (const auto& r : saved) {
    CHECK(r.utterance_id == "d1#1");
    CHECK(r.evaluator_id == "A");
    CHECK(r.score == ScoreFor(r.source));
  }

  // Tokens are per evaluator.
  const auto other = store->NextStep("B", std::string("d1"));
  CHECK(other["candidates"][0]["source_token"] != step["candidates"][0]["source_token"]);

  // A fresh store over the same file resumes where A stopped.
  auto reloaded = f.Store(path);
  CHECK(reloaded->NextStep("A", std::string("d1"))["utterance_id"] == "d1#3");
  CHECK(reloaded->ratings().size() == 7);
  fs::remove_all(dir);
}

TEST_CASE("submissions must complete the next step exactly") {
  EvalFixture f;
  auto store = f.Store("");
  const auto step = store->NextStep("A", std::string("d1"));
  auto full = RateAll(step, f);

  auto missing = full;
  missing["ratings"].erase(missing["ratings"].size() - 1);
  CHECK(KindOf([&] { store->Submit(missing); }) == ErrorKind::kValidation);

  auto twice = full;
  twice["ratings"][1]["source_token"] = twice["ratings"][0]["source_token"];
  CHECK(KindOf([&] { store->Submit(twice); }) == ErrorKind::kValidation);

  auto bad_score = full;
  bad_score["ratings"][0]["score"] = 6;
  CHECK(KindOf([&] { store->Submit(bad_score); }) == ErrorKind::kValidation);

  auto fake = full;
  fake["ratings"][0]["source_token"] = "000000000000000000000000";
  CHECK(KindOf([&] { store->Submit(fake); }) == ErrorKind::kValidation);

  // Another evaluator's tokens do not work for A.
  auto foreign = RateAll(store->NextStep("B", std::string("d1")), f);
  foreign["evaluator_id"] = "A";
  CHECK(KindOf([&] { store->Submit(foreign); }) == ErrorKind::kValidation);

  // Skipping ahead is refused.
  auto peek = store->Submit(full)["next"];
  auto later = RateAll(store->NextStep("B", std::string("d1")), f);
  CHECK(store->Submit(later)["accepted"] == 7);
  CHECK(KindOf([&] { store->Submit(full); }) == ErrorKind::kExhausted);
  json ahead = {{"evaluator_id", "A"},
                {"ratings", {{{"utterance_id", "d1#5"}, {"source_token", "x"}, {"score", 3}}}}};
  CHECK(KindOf([&] { store->Submit(ahead); }) == ErrorKind::kExhausted);
  CHECK(peek["utterance_id"] == "d1#3");
  CHECK(store->ratings().size() == 14);
}

TEST_CASE("two evaluators complete every dialogue over HTTP") {
  const auto dir = TempDir("http");
  const auto path = (dir / "ratings.jsonl").string();
  EvalFixture f;
  ApiHarness h(f.Store(path));

  auto [s0, dialogues] = h.Get("/api/eval/dialogues");
  CHECK(s0 == 200);
  CHECK(dialogues.size() == 3);

  for (const std::string evaluator : {"A", "B"}) {
    auto [status, step] = h.Get("/api/eval/next?evaluator=" + evaluator);
    CHECK(status == 200);
    int steps = 0;
    while (step["done"] == false) {
      CheckBlind(step);
      auto [s, res] = h.Post("/api/eval/ratings", RateAll(step, f));
      REQUIRE(s == 200);
      ++steps;
      step = h.Get("/api/eval/next?evaluator=" + evaluator).second;
    }
    CHECK(steps == 7);
  }
  const auto saved = ParseRatings(ReadFile(path));
  CHECK(saved.size() == 2 * 7 * 7);
  std::map<TableKey, int> per_key;
  for (const auto& r : saved) ++per_key[{r.utterance_id, r.source}];
  CHECK(per_key.size() == 49);
  for (const auto& [key, n] : per_key) CHECK(n == 2);
  CHECK(PairwiseAgreement(saved) == 1.0);

  auto [s1, err] = h.Post("/api/eval/ratings", {{"evaluator_id", "A"}, {"ratings", json::array()}});
  CHECK(s1 == 400);
  CHECK(err.contains("message"));
  CHECK(h.Get("/api/eval/next?evaluator=A&dialogue=zzz").first == 400);
  h.server->Stop();
  fs::remove_all(dir);
}

TEST_CASE("eval store rejects plans it cannot serve") {
  EvalFixture f;
  auto partial = f.responses;
  partial.pop_back();
  CHECK_THROWS_AS(EvalStore(f.corpus, partial, f.plan, "", "s"), Error);
  auto elsewhere = BuildPresentationPlan({"x#1"}, kAllSources, 1);
  CHECK_THROWS_AS(EvalStore(f.corpus, f.responses, elsewhere, "", "s"), Error);
}
