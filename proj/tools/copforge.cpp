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

// Command-line entry point for the data, serving and evaluation pipeline.

#include <algorithm>
#include <csignal>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "copforge/config.hpp"
#include "copforge/cop.hpp"
#include "copforge/dialogue.hpp"
#include "copforge/error.hpp"
#include "copforge/eval.hpp"
#include "copforge/gateway.hpp"
#include "copforge/io.hpp"
#include "copforge/parallel.hpp"
#include "copforge/runtime.hpp"
#include "copforge/server.hpp"
#include "copforge/sft.hpp"
#include "copforge/text.hpp"

namespace {

using nlohmann::json;
using namespace copforge;

struct Flags {
  std::string config, cache_dir, cache_policy, mode, out, backend_url, model;
  std::size_t budget = 0, parallelism = 0;
  std::uint64_t seed = 0;
  bool strict = false;

  std::string corpus, annotated, responses, ratings, empathy, plan, script, static_dir, sources;
  std::string host;
  int port = 0;
  bool expose_analysis = false;
  std::string token_secret;
};

struct Options {
  CLI::Option* cache_dir;
  CLI::Option* cache_policy;
  CLI::Option* budget;
  CLI::Option* parallelism;
  CLI::Option* seed;
  CLI::Option* strict;
  CLI::Option* mode;
  CLI::Option* out;
  CLI::Option* backend_url;
  CLI::Option* model;
  CLI::Option* host;
  CLI::Option* port;
  CLI::Option* static_dir;
  CLI::Option* expose_analysis;
};

RunConfig Resolve(const Flags& f, const Options& o) {
  json layer = json::object();
  if (o.cache_dir->count()) layer["cache_dir"] = f.cache_dir;
  if (o.cache_policy->count()) layer["cache_policy"] = f.cache_policy;
  if (o.budget->count()) layer["budget"] = f.budget;
  if (o.parallelism->count()) layer["parallelism"] = f.parallelism;
  if (o.seed->count()) layer["seed"] = f.seed;
  if (o.strict->count()) layer["strict"] = f.strict;
  if (o.mode->count()) layer["mode"] = f.mode;
  if (o.out->count()) layer["out"] = f.out;
  if (o.backend_url->count()) layer["backend_url"] = f.backend_url;
  if (o.model->count()) layer["model"] = f.model;
  if (o.host->count()) layer["host"] = f.host;
  if (o.port->count()) layer["port"] = f.port;
  if (o.static_dir->count()) layer["static_dir"] = f.static_dir;
  if (o.expose_analysis->count()) layer["expose_analysis"] = f.expose_analysis;
  std::string config_path = f.config;
  if (config_path.empty()) {
    if (auto env = ProcessEnv()("COPFORGE_CONFIG")) config_path = *env;
  }
  const json file = config_path.empty() ? json::object() : LoadConfigFile(config_path);
  return ResolveConfig(file, ProcessEnv(), layer);
}

const std::string& Require(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(ErrorKind::kConfig, std::string("missing required ") + flag);
  return value;
}

void PrintJson(const json& j) { std::cout << j.dump() << std::endl; }

std::unique_ptr<Gateway> MakeGateway(const RunConfig& c) {
  if (c.backend_url.empty()) {
    throw Error(ErrorKind::kConfig, "no backend configured; set --backend-url or COPFORGE_BACKEND_URL");
  }
  RetryPolicy policy;
  policy.max_attempts = c.max_attempts;
  auto client = std::make_shared<ChatClient>(MakeBackend(c.backend_url, c.api_key), policy,
                                             c.requests_per_second);
  std::optional<std::filesystem::path> cache;
  if (!c.cache_dir.empty()) cache = c.cache_dir;
  return std::make_unique<Gateway>(client, cache, c.cache_policy);
}

RuntimeConfig MakeRuntimeConfig(const RunConfig& c, std::shared_ptr<const std::vector<Dialogue>> corpus) {
  RuntimeConfig rc;
  for (const auto& [v, id] : c.models) rc.models[v] = id;
  rc.corpus = std::move(corpus);
  rc.budget = c.budget;
  rc.temperature = c.temperature;
  rc.max_output_units = c.max_output_units;
  rc.cache_policy = c.cache_policy;
  return rc;
}

std::vector<SourceVariant> ParseSources(const std::string& list) {
  if (list.empty()) return {kAllSources.begin(), kAllSources.end()};
  std::vector<SourceVariant> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    auto end = list.find(',', start);
    if (end == std::string::npos) end = list.size();
    const auto name = std::string(text::Trim(std::string_view(list).substr(start, end - start)));
    auto v = ParseSource(name);
    if (!v) throw Error(ErrorKind::kConfig, "unknown source '" + name + "'");
    out.push_back(*v);
    start = end + 1;
  }
  return out;
}

std::vector<Dialogue> Corpus(const Flags& f, const RunConfig& c) {
  return LoadCorpus(Require(f.corpus, "--corpus"), ParseOptions{c.strict});
}

// ---------------------------------------------------------------------------

int Ingest(const Flags& f, const RunConfig& c) {
  const auto corpus = Corpus(f, c);
  std::size_t turns = 0, seeker = 0, counselor = 0, seeker_len = 0, counselor_len = 0;
  for (const auto& d : corpus) {
    for (const auto& t : d.turns) {
      ++turns;
      if (t.role == Role::kSeeker) {
        ++seeker;
        seeker_len += text::CountScalars(t.text);
      } else {
        ++counselor;
        counselor_len += text::CountScalars(t.text);
      }
    }
  }
  auto mean = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  const json stats = {{"dialogues", corpus.size()},
                      {"turns", turns},
                      {"seeker_turns", seeker},
                      {"counselor_turns", counselor},
                      {"contexts", CountContexts(corpus)},
                      {"avg_turns_per_dialogue", mean(turns, corpus.size())},
                      {"avg_seeker_length", mean(seeker_len, seeker)},
                      {"avg_counselor_length", mean(counselor_len, counselor)}};
  if (!c.out.empty()) WriteFile(c.out, stats.dump(2) + "\n");
  PrintJson(stats);
  return 0;
}

int Annotate(const Flags& f, const RunConfig& c) {
  const auto corpus = Corpus(f, c);
  const auto& out = Require(c.out, "--out");
  auto gateway = MakeGateway(c);
  AnnotationOptions options;
  options.model_id = c.model.empty() ? c.annotator_model : c.model;
  options.max_output_units = c.max_output_units;
  options.parse.strict_header = c.strict;
  options.cache_policy = c.cache_policy;
  const auto run = AnnotateCorpus(corpus, *gateway, c.parallelism, options);
  WriteFile(out, SerializeAnnotated(run.turns));
  PrintJson(run.report.ToJson());
  return 0;
}

int BuildSft(const Flags& f, const RunConfig& c) {
  const auto& out = Require(c.out, "--out");
  SftOptions options;
  options.budget = c.budget;
  SftBuild build;
  if (c.mode == "naive") {
    build = BuildNaive(Corpus(f, c), options);
  } else {
    const auto annotated = ParseAnnotated(ReadFile(Require(f.annotated, "--annotated")));
    if (c.mode == "mixed") {
      build = BuildMixed(annotated, options);
    } else if (auto a = ParseApproachCode(c.mode)) {
      build = BuildSingle(annotated, *a, options);
    } else {
      throw Error(ErrorKind::kConfig, "unknown --mode '" + c.mode + "' (mixed|cbt|pct|sfbt|naive)");
    }
  }
  TrainManifest manifest;
  manifest.max_context = c.budget;
  const auto manifest_path = EmitDataset(build.examples, out, manifest);
  for (const auto& w : build.warnings) std::cerr << w << "\n";
  PrintJson({{"mode", c.mode},
             {"examples", build.examples.size()},
             {"skipped_turns", build.skipped_turns},
             {"dataset", out},
             {"manifest", manifest_path}});
  return 0;
}

int RespondAllCmd(const Flags& f, const RunConfig& c) {
  auto corpus = std::make_shared<const std::vector<Dialogue>>(Corpus(f, c));
  const auto& out = Require(c.out, "--out");
  const auto sources = ParseSources(f.sources);
  auto gateway = MakeGateway(c);
  CounselorRuntime runtime(MakeRuntimeConfig(c, corpus), *gateway);
  for (auto v : sources) runtime.config().RequireBound(v);

  std::vector<DialogueContext> contexts;
  for (const auto& d : *corpus) {
    for (auto& ctx : ContextsOf(d)) contexts.push_back(std::move(ctx));
  }
  std::vector<RespondAllResult> results(contexts.size());
  ParallelFor(contexts.size(), c.parallelism,
              [&](std::size_t i) { results[i] = runtime.RespondAll(contexts[i], sources); });

  std::vector<ResponseRecord> records;
  json failures = json::array();
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    for (auto v : sources) {
      if (auto it = results[i].turns.find(v); it != results[i].turns.end()) {
        const auto& t = it->second;
        records.push_back({UtteranceId(contexts[i]), contexts[i].dialogue_id,
                           *contexts[i].target_turn_index, v, t.response, t.analysis,
                           t.analysis_missing, t.length()});
      } else {
        failures.push_back({{"utterance_id", UtteranceId(contexts[i])},
                            {"source", SourceName(v)},
                            {"reason", results[i].failures.at(v)}});
      }
    }
  }
  const auto total = contexts.size() * sources.size();
  WriteFile(out, SerializeResponses(records));
  PrintJson({{"contexts", contexts.size()},
             {"records", records.size()},
             {"failures", failures},
             {"backend_calls", gateway->stats().backend_calls},
             {"cache_hits", gateway->stats().cache_hits}});
  if (total > 0 && static_cast<double>(failures.size()) / static_cast<double>(total) > c.max_failure_rate) {
    throw Error(ErrorKind::kBackend, std::to_string(failures.size()) + " of " + std::to_string(total) +
                                         " responses failed; first: " + failures[0]["reason"].get<std::string>());
  }
  return 0;
}

int Judge(const Flags& f, const RunConfig& c) {
  const auto corpus = Corpus(f, c);
  const auto& out = Require(c.out, "--out");
  const auto responses = ParseResponses(ReadFile(Require(f.responses, "--responses")));
  std::map<std::string, DialogueContext> contexts;
  for (const auto& d : corpus) {
    for (auto& ctx : ContextsOf(d)) contexts.emplace(UtteranceId(ctx), std::move(ctx));
  }
  std::vector<JudgeItem> items;
  for (const auto& r : responses) {
    auto it = contexts.find(r.utterance_id);
    if (it == contexts.end()) {
      throw Error(ErrorKind::kValidation, "response for unknown utterance " + r.utterance_id);
    }
    items.push_back({it->second, r.source, r.response});
  }
  auto gateway = MakeGateway(c);
  JudgeOptions options;
  options.model_id = c.model.empty() ? c.judge_model : c.model;
  options.max_output_units = c.max_output_units;
  options.parallelism = c.parallelism;
  options.max_failure_rate = c.max_failure_rate;
  options.cache_policy = c.cache_policy;
  const auto run = JudgeCorpus(items, *gateway, options);
  WriteFile(out, SerializeEmpathyTable(run.table));
  json failures = json::array();
  for (const auto& [key, reason] : run.failures) {
    failures.push_back({{"utterance_id", key.first}, {"source", SourceName(key.second)}, {"reason", reason}});
  }
  PrintJson({{"rows", run.table.size()},
             {"failures", failures},
             {"backend_calls", run.backend_calls},
             {"cache_hits", run.cache_hits}});
  return 0;
}

int Stats(const Flags& f, const RunConfig& c) {
  if (f.ratings.empty() && f.empathy.empty()) {
    throw Error(ErrorKind::kConfig, "stats needs --ratings and/or --empathy");
  }
  StatsInputs inputs;
  inputs.sources = ParseSources(f.sources);
  if (!f.ratings.empty()) inputs.ratings = ParseRatings(ReadFile(f.ratings));
  if (!f.empathy.empty()) inputs.empathy = ParseEmpathyTable(ReadFile(f.empathy));
  if (!f.responses.empty()) inputs.lengths = LengthsOf(ParseResponses(ReadFile(f.responses)));
  const auto report = BuildReport(inputs);
  if (!c.out.empty()) WriteFile(c.out, report.dump(2) + "\n");
  std::cout << RenderReportText(report);
  return 0;
}

int Plan(const Flags& f, const RunConfig& c) {
  const auto& out = Require(c.out, "--out");
  const auto responses = ParseResponses(ReadFile(Require(f.responses, "--responses")));
  std::vector<std::string> ids;
  std::set<std::string> seen_ids;
  std::set<SourceVariant> present;
  for (const auto& r : responses) {
    if (seen_ids.insert(r.utterance_id).second) ids.push_back(r.utterance_id);
    present.insert(r.source);
  }
  std::vector<SourceVariant> sources;
  for (auto v : ParseSources(f.sources)) {
    if (present.contains(v)) sources.push_back(v);
  }
  const auto plan = BuildPresentationPlan(ids, sources, c.seed);
  WriteFile(out, plan.ToJson().dump(2) + "\n");
  PrintJson({{"utterances", ids.size()}, {"sources", sources.size()}, {"seed", c.seed}, {"plan", out}});
  return 0;
}

HttpService* g_running = nullptr;

void HandleSignal(int) {
  if (g_running) g_running->Stop();
}

int Serve(const Flags& f, const RunConfig& c) {
  std::shared_ptr<const std::vector<Dialogue>> corpus;
  if (!f.corpus.empty()) corpus = std::make_shared<const std::vector<Dialogue>>(Corpus(f, c));
  auto gateway = MakeGateway(c);
  CounselorRuntime runtime(MakeRuntimeConfig(c, corpus), *gateway);
  std::shared_ptr<EvalStore> eval;
  if (!f.responses.empty()) {
    if (!corpus) throw Error(ErrorKind::kConfig, "evaluation needs --corpus");
    const auto responses = ParseResponses(ReadFile(f.responses));
    const auto plan = PresentationPlan::FromJson(json::parse(ReadFile(Require(f.plan, "--plan"))));
    eval = std::make_shared<EvalStore>(*corpus, responses, plan, Require(f.ratings, "--ratings"),
                                       f.token_secret);
  }
  ServerOptions options;
  options.expose_analysis = c.expose_analysis;
  options.static_dir = c.static_dir;
  options.sources = ParseSources(f.sources);
  ApiServer server(runtime, options, eval);
  g_running = &server;
  std::signal(SIGINT, HandleSignal);
  std::signal(SIGTERM, HandleSignal);
  std::cerr << "serving on " << c.host << ":" << c.port << std::endl;
  server.Run(c.host, c.port);
  return 0;
}

int MockBackend(const Flags& f, const RunConfig& c) {
  MockBackendServer server(ScriptedBackend::FromFile(Require(f.script, "--script")));
  g_running = &server;
  std::signal(SIGINT, HandleSignal);
  std::signal(SIGTERM, HandleSignal);
  std::cerr << "mock backend on " << c.host << ":" << c.port << std::endl;
  server.Run(c.host, c.port);
  return 0;
}

void PrintError(std::string_view kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"copforge: psychotherapy-analysis dialogue pipeline"};
  app.require_subcommand(1);
  Flags f;
  Options o;
  app.add_option("--config", f.config, "JSON config file");
  o.cache_dir = app.add_option("--cache-dir", f.cache_dir, "Response cache directory");
  o.cache_policy = app.add_option("--cache-policy", f.cache_policy, "read-write|read-only|bypass");
  o.budget = app.add_option("--budget", f.budget, "Token budget (default 4096)");
  o.parallelism = app.add_option("--parallelism", f.parallelism, "Worker count");
  o.seed = app.add_option("--seed", f.seed, "Seed for plans and splits");
  o.strict = app.add_flag("--strict", f.strict, "Strict parsing");
  o.mode = app.add_option("--mode", f.mode, "build-sft mode: mixed|cbt|pct|sfbt|naive");
  o.out = app.add_option("--out", f.out, "Output path");
  o.backend_url = app.add_option("--backend-url", f.backend_url, "Chat endpoint URL or mock:<script.json>");
  o.model = app.add_option("--model", f.model, "Model id for the annotator (annotate) or judge (judge)");
  o.host = app.add_option("--host", f.host, "Listen address");
  o.port = app.add_option("--port", f.port, "Listen port");
  o.static_dir = app.add_option("--static-dir", f.static_dir, "Static UI assets");
  o.expose_analysis = app.add_flag("--expose-analysis", f.expose_analysis, "Include analyses in API views");

  auto sub = [&](const char* name, const char* help) {
    auto* s = app.add_subcommand(name, help);
    s->fallthrough();
    return s;
  };
  auto* ingest = sub("ingest", "Validate a corpus and print statistics");
  ingest->add_option("--corpus", f.corpus, "Dialogue corpus (JSONL)")->required();
  auto* annotate = sub("annotate", "Annotate every counselor turn with the three analyses");
  annotate->add_option("--corpus", f.corpus, "Dialogue corpus (JSONL)")->required();
  auto* build = sub("build-sft", "Emit a fine-tuning dataset and manifest");
  build->add_option("--annotated", f.annotated, "Annotated turns (JSONL)");
  build->add_option("--corpus", f.corpus, "Dialogue corpus, for --mode naive");
  auto* serve = sub("serve", "Serve the chat and evaluation HTTP API");
  serve->add_option("--corpus", f.corpus, "Corpus for ground-truth playback and evaluation");
  serve->add_option("--responses", f.responses, "respond-all output to evaluate");
  serve->add_option("--plan", f.plan, "Presentation plan");
  serve->add_option("--ratings", f.ratings, "Ratings file (appended)");
  serve->add_option("--sources", f.sources, "Comma-separated sources");
  serve->add_option("--token-secret", f.token_secret, "Secret for candidate tokens");
  auto* respond = sub("respond-all", "Generate responses from every source for each context");
  respond->add_option("--corpus", f.corpus, "Evaluation corpus (JSONL)")->required();
  respond->add_option("--sources", f.sources, "Comma-separated sources");
  auto* judge = sub("judge", "Score responses with the judge model");
  judge->add_option("--corpus", f.corpus, "Evaluation corpus (JSONL)")->required();
  judge->add_option("--responses", f.responses, "respond-all output")->required();
  auto* stats = sub("stats", "Summarize ratings and empathy scores");
  stats->add_option("--ratings", f.ratings, "Rating records (JSONL)");
  stats->add_option("--empathy", f.empathy, "Empathy table (JSONL)");
  stats->add_option("--responses", f.responses, "respond-all output, for lengths");
  stats->add_option("--sources", f.sources, "Comma-separated sources");
  auto* plan = sub("plan", "Build a blind presentation plan");
  plan->add_option("--responses", f.responses, "respond-all output")->required();
  plan->add_option("--sources", f.sources, "Comma-separated sources");
  auto* mock = sub("mock-backend", "Serve a scripted chat-completion endpoint");
  mock->add_option("--script", f.script, "Mock script (JSON)")->required();

  if (argc > 1 && argv[1][0] != '-') {
    const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
    const bool known = std::any_of(subs.begin(), subs.end(),
                                   [&](const CLI::App* s) { return s->get_name() == argv[1]; });
    if (!known) {
      std::cerr << app.help();
      PrintError("usage", std::string("unknown subcommand '") + argv[1] + "'");
      return 2;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    PrintError("usage", e.what());
    return 2;
  }

  try {
    const auto config = Resolve(f, o);
    if (*ingest) return Ingest(f, config);
    if (*annotate) return Annotate(f, config);
    if (*build) return BuildSft(f, config);
    if (*serve) return Serve(f, config);
    if (*respond) return RespondAllCmd(f, config);
    if (*judge) return Judge(f, config);
    if (*stats) return Stats(f, config);
    if (*plan) return Plan(f, config);
    if (*mock) return MockBackend(f, config);
  } catch (const Error& e) {
    PrintError(ErrorKindName(e.kind()), e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    PrintError("validation", e.what());
    return 1;
  } catch (const std::exception& e) {
    PrintError("internal", e.what());
    return 1;
  }
  return 1;
}
