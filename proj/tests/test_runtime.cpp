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

#include "copforge/error.hpp"
#include "copforge/runtime.hpp"
#include "copforge/text.hpp"
#include "fixtures/synthetic.hpp"

using namespace copforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path TempDir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("copforge_rt_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Harness {
  std::shared_ptr<ScriptedBackend> backend;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<CounselorRuntime> runtime;

  explicit Harness(json script, std::optional<fs::path> cache = {},
                   std::vector<Dialogue> corpus = fixtures::PipelineCorpus()) {
    backend = std::make_shared<ScriptedBackend>(std::move(script));
    auto client = std::make_shared<ChatClient>(backend);
    client->set_sleeper([](std::chrono::milliseconds) {});
    gateway = std::make_unique<Gateway>(client, cache);
    RuntimeConfig config;
    config.corpus = std::make_shared<const std::vector<Dialogue>>(std::move(corpus));
    runtime = std::make_unique<CounselorRuntime>(config, *gateway);
  }
};

DialogueContext FirstContext(const std::string& dialogue) {
  for (const auto& d : fixtures::PipelineCorpus()) {
    if (d.id == dialogue) return ContextsOf(d).front();
  }
  throw std::logic_error("no dialogue");
}

}  // namespace

TEST_CASE("parse_generation splits analysis from response") {
  const auto cbt = MakeAnalysis(Approach::kCbt, {"e", "c", "b", "bl"});
  const auto packed = PackTarget(cbt, "我理解你的感受。");
  const auto p = ParseGeneration(SourceVariant::kMixed, packed);
  REQUIRE(p.analysis);
  CHECK(p.analysis->approach == Approach::kCbt);
  CHECK(p.analysis->dimensions == cbt.dimensions);
  CHECK(p.analysis->source == AnalysisSource::kModelGenerated);
  CHECK(p.response == "我理解你的感受。");
  CHECK(!p.analysis_missing);

  // No counselor label: the response follows the blank line.
  const auto unlabeled =
      ParseGeneration(SourceVariant::kPctOnly,
                      "[Person-Centered Therapy Analysis]\n*Emotion: a\n*Self-Awareness: b\n\nHello there");
  REQUIRE(unlabeled.analysis);
  CHECK(unlabeled.response == "Hello there");

  // Malformed analysis degrades to a plain response.
  const auto broken = ParseGeneration(SourceVariant::kSfbtOnly,
                                      "[Solution-Focused Brief Therapy Analysis]\n*Goal: g\n\n"
                                      "counselor: Let's try.");
  CHECK(!broken.analysis);
  CHECK(broken.analysis_missing);
  CHECK(broken.response.find("Let's try.") != std::string::npos);
  CHECK(broken.response.find("Analysis]") == std::string::npos);

  const auto plain = ParseGeneration(SourceVariant::kCbtOnly, "Just a reply");
  CHECK(plain.analysis_missing);
  CHECK(plain.response == "Just a reply");

  CHECK(ParseGeneration(SourceVariant::kPromptedBaseline, "counselor: 你好").response == "你好");
  CHECK(ParseGeneration(SourceVariant::kNaive, "你好").response == "你好");
}

TEST_CASE("displayed responses never contain analysis header lines") {
  SplitMix64 rng(41);
  const std::vector<std::string> headers = {"[Cognitive Behavioural Therapy Analysis]",
                                            "[Person-Centered Therapy Analysis]", "[SFBT Analysis]"};
  for (int i = 0; i < 500; ++i) {
    std::string raw;
    const auto lines = 1 + rng.Below(8);
    for (std::size_t k = 0; k < lines; ++k) {
      switch (rng.Below(5)) {
        case 0: raw += headers[rng.Below(headers.size())]; break;
        case 1: raw += "*Emotion: " + fixtures::RandomText(rng); break;
        case 2: raw += "counselor: " + fixtures::RandomText(rng); break;
        case 3: break;
        default: raw += fixtures::RandomText(rng);
      }
      raw += '\n';
    }
    const auto variant = kAllSources[rng.Below(6)];
    const auto p = ParseGeneration(variant, raw);
    for (auto line : text::SplitLines(p.response)) REQUIRE(!DetectHeader(line));
    if (IsCopVariant(variant)) CHECK(p.analysis_missing == !p.analysis.has_value());
  }
}

TEST_CASE("baseline prompt embeds the transcript once") {
  const auto ctx = FirstContext("d1");
  const auto prompt = RenderBaselinePrompt(ctx);
  CHECK(prompt.find("maintaining a gentle attitude") != std::string::npos);
  CHECK(prompt.ends_with("counselor: <response>"));
  CHECK(text::CountOccurrences(prompt, RenderTranscript(ctx)) == 1);
}

TEST_CASE("naive and mixed variants respond through the backend") {
  Harness h(fixtures::PipelineScript());
  const auto ctx = FirstContext("d1");
  const auto naive = h.runtime->Respond(SourceVariant::kNaive, ctx);
  CHECK(!naive.analysis);
  CHECK(!naive.analysis_missing);
  CHECK(!naive.response.empty());
  CHECK(naive.length() == text::CountScalars(naive.response));

  const auto mixed = h.runtime->Respond(SourceVariant::kMixed, ctx);
  REQUIRE(mixed.analysis);
  CHECK(mixed.response.find('[') == std::string::npos);
  CHECK(mixed.View(false).contains("analysis") == false);
  CHECK(mixed.View(true)["analysis"]["approach"].is_string());

  const auto reqs = h.backend->requests();
  REQUIRE(reqs.size() == 2);
  CHECK(reqs[0].model_id == "psymix-naive");
  CHECK(reqs[0].messages[0].content == RenderTurns(ctx.turns));
  CHECK(reqs[0].temperature == doctest::Approx(0.7));
  CHECK(reqs[1].model_id == "psymix-mixed");
}

TEST_CASE("fine-tuned prompts are trimmed to leave room for the generation") {
  Harness h(fixtures::PipelineScript());
  DialogueContext ctx;
  ctx.dialogue_id = "long";
  for (std::size_t i = 0; i < 20; ++i) {
    ctx.turns.push_back({i % 2 == 0 ? Role::kSeeker : Role::kCounselor, std::string(400, 'z'), i});
  }
  ctx.turns.push_back({Role::kSeeker, "last", 20});
  ctx.target_turn_index = 21;
  h.runtime->Respond(SourceVariant::kNaive, ctx);
  const auto prompt = h.backend->requests().at(0).messages[0].content;
  CHECK(text::CountScalars(prompt) + 1024 <= 4096);
  CHECK(prompt.ends_with("seeker: last"));
}

TEST_CASE("ground truth replays the corpus and reports exhaustion") {
  Harness h(fixtures::PipelineScript());
  const auto gt = h.runtime->Respond(SourceVariant::kGroundTruth, FirstContext("d1"));
  CHECK(gt.response == "听起来你很辛苦，能说说发生了什么吗？");
  CHECK(h.backend->calls() == 0);

  Dialogue four;
  four.id = "g4";
  four.turns = {{Role::kSeeker, "a", 0}, {Role::kCounselor, "b", 1}, {Role::kSeeker, "c", 2},
                {Role::kCounselor, "d", 3}};
  Harness g(fixtures::PipelineScript(), {}, {four});
  auto session = g.runtime->CreateSession(SourceVariant::kGroundTruth, "g4");
  CHECK(g.runtime->PostMessage(session->id, "hi").response == "b");
  CHECK(g.runtime->PostMessage(session->id, "more").response == "d");
  try {
    g.runtime->PostMessage(session->id, "again");
    FAIL("expected exhaustion");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kExhausted);
  }
  CHECK(session->turns.size() == 4);
  CHECK_THROWS_AS(g.runtime->CreateSession(SourceVariant::kGroundTruth, "missing"), Error);
}

TEST_CASE("respond_all runs every variant on the same context") {
  const auto dir = TempDir("all");
  const auto ctx = FirstContext("d2");
  {
    Harness h(fixtures::PipelineScript(), dir);
    const auto all = h.runtime->RespondAll(ctx, kAllSources);
    CHECK(all.turns.size() == 7);
    CHECK(all.failures.empty());
    CHECK(h.backend->calls() == 6);
    for (auto v : {SourceVariant::kMixed, SourceVariant::kCbtOnly, SourceVariant::kPctOnly,
                   SourceVariant::kSfbtOnly}) {
      CHECK(all.turns.at(v).analysis);
    }
    CHECK(all.turns.at(SourceVariant::kCbtOnly).analysis->approach == Approach::kCbt);
    CHECK(all.turns.at(SourceVariant::kGroundTruth).response == "吵架之后你现在感觉怎么样？");
  }
  Harness warm(fixtures::PipelineScript(), dir);
  const auto again = warm.runtime->RespondAll(ctx, kAllSources);
  CHECK(again.turns.size() == 7);
  CHECK(warm.backend->calls() == 0);
  for (const auto& [v, t] : again.turns) {
    if (v != SourceVariant::kGroundTruth) CHECK(t.cache_hit);
  }

  auto script = fixtures::PipelineScript();
  script["rules"].insert(script["rules"].begin(),
                         json{{"model", "psymix-pct"}, {"status", 400}, {"replies", {"x"}}});
  Harness partial(script);
  const auto some = partial.runtime->RespondAll(ctx, kAllSources);
  CHECK(some.turns.size() == 6);
  REQUIRE(some.failures.size() == 1);
  CHECK(some.failures.contains(SourceVariant::kPctOnly));
  fs::remove_all(dir);
}

TEST_CASE("unbound variants are configuration errors") {
  auto backend = std::make_shared<ScriptedBackend>(fixtures::PipelineScript());
  Gateway gateway(std::make_shared<ChatClient>(backend), std::nullopt);
  RuntimeConfig config;
  config.models.erase(SourceVariant::kNaive);
  CounselorRuntime runtime(config, gateway);
  try {
    runtime.Respond(SourceVariant::kNaive, FirstContext("d1"));
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
  CHECK_THROWS_AS(runtime.CreateSession(SourceVariant::kGroundTruth, "d1"), Error);
}

TEST_CASE("chat sessions grow by one exchange per message and stay isolated") {
  Harness h(fixtures::PipelineScript());
  auto a = h.runtime->CreateSession(SourceVariant::kMixed);
  auto b = h.runtime->CreateSession(SourceVariant::kNaive);
  CHECK(a->id != b->id);
  h.runtime->PostMessage(a->id, "我压力很大");
  h.runtime->PostMessage(a->id, "还是睡不着");
  h.runtime->PostMessage(b->id, "hello");
  CHECK(a->turns.size() == 4);
  CHECK(a->replies.size() == 2);
  CHECK(b->turns.size() == 2);
  CHECK(a->turns[1].role == Role::kCounselor);
  CHECK(a->turns[1].text == a->replies[0].response);

  // The second prompt carries the first exchange.
  const auto reqs = h.backend->requests();
  CHECK(reqs[1].messages[0].content.starts_with("seeker: 我压力很大\ncounselor: "));

  const auto transcript = a->Transcript(false);
  CHECK(transcript["turns"].size() == 4);
  CHECK(transcript["variant"] == "mixed");
  CHECK(!transcript["turns"][1]["turn"].contains("analysis"));

  CHECK_THROWS_AS(h.runtime->PostMessage("nope", "x"), Error);
  CHECK_THROWS_AS(h.runtime->PostMessage(a->id, "  "), Error);
}

TEST_CASE("a failed generation leaves the session unchanged") {
  Harness h(json{{"default", {{"status", 400}, {"reply", "bad"}}}});
  auto s = h.runtime->CreateSession(SourceVariant::kNaive);
  CHECK_THROWS_AS(h.runtime->PostMessage(s->id, "hello"), Error);
  CHECK(s->turns.empty());
  CHECK(s->replies.empty());
}
