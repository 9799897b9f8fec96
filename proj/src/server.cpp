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

#include "copforge/server.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <httplib.h>

#include "copforge/error.hpp"
#include "copforge/text.hpp"

namespace copforge {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Response records

json ResponseRecord::ToJson() const {
  return {{"utterance_id", utterance_id},
          {"dialogue_id", dialogue_id},
          {"target_turn_index", target_turn_index},
          {"source", SourceName(source)},
          {"response", response},
          {"analysis", analysis ? json{{"approach", ApproachCode(analysis->approach)},
                                       {"dimensions", analysis->DimensionsJson()}}
                                : json(nullptr)},
          {"analysis_missing", analysis_missing},
          {"length", length}};
}

ResponseRecord ResponseRecord::FromJson(const json& j) {
  ResponseRecord r;
  r.utterance_id = j.at("utterance_id").get<std::string>();
  r.dialogue_id = j.at("dialogue_id").get<std::string>();
  r.target_turn_index = j.at("target_turn_index").get<std::size_t>();
  const auto name = j.at("source").get<std::string>();
  auto source = ParseSource(name);
  if (!source) throw Error(ErrorKind::kValidation, "unknown source '" + name + "'");
  r.source = *source;
  r.response = j.at("response").get<std::string>();
  if (j.contains("analysis") && !j["analysis"].is_null()) {
    const auto code = j["analysis"].at("approach").get<std::string>();
    auto a = ParseApproachCode(code);
    if (!a) throw Error(ErrorKind::kValidation, "unknown approach '" + code + "'");
    r.analysis = CoPAnalysis::FromDimensionsJson(*a, j["analysis"].at("dimensions"),
                                                 AnalysisSource::kModelGenerated);
  }
  r.analysis_missing = j.value("analysis_missing", false);
  r.length = j.value("length", text::CountScalars(r.response));
  return r;
}

std::vector<ResponseRecord> ParseResponses(std::string_view content) {
  std::vector<ResponseRecord> out;
  std::size_t line_no = 0;
  for (auto line : text::SplitLines(content)) {
    ++line_no;
    if (text::Trim(line).empty()) continue;
    try {
      out.push_back(ResponseRecord::FromJson(json::parse(line)));
    } catch (const json::exception& e) {
      throw LineError(ErrorKind::kValidation, line_no, std::string("malformed record: ") + e.what());
    } catch (const Error& e) {
      throw LineError(ErrorKind::kValidation, line_no, e.what());
    }
  }
  return out;
}

std::string SerializeResponses(const std::vector<ResponseRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.ToJson().dump();
    out += '\n';
  }
  return out;
}

LengthMap LengthsOf(const std::vector<ResponseRecord>& records) {
  LengthMap out;
  for (const auto& r : records) out[{r.utterance_id, r.source}] = r.length;
  return out;
}

// ---------------------------------------------------------------------------
// EvalStore

EvalStore::EvalStore(const std::vector<Dialogue>& corpus,
                     const std::vector<ResponseRecord>& responses, PresentationPlan plan,
                     std::string ratings_path, std::string token_secret)
    : ratings_path_(std::move(ratings_path)), secret_(std::move(token_secret)) {
  if (secret_.empty()) {
    std::random_device rd;
    for (int i = 0; i < 4; ++i) secret_ += std::to_string(rd());
  }
  std::map<TableKey, const ResponseRecord*> by_key;
  for (const auto& r : responses) by_key[{r.utterance_id, r.source}] = &r;

  for (const auto& d : corpus) {
    std::vector<Step> steps;
    for (auto& ctx : ContextsOf(d)) {
      const auto id = UtteranceId(ctx);
      const auto* order = plan.OrderFor(id);
      if (!order) continue;
      Step step{id, std::move(ctx), {}};
      for (auto v : *order) {
        auto it = by_key.find({id, v});
        if (it == by_key.end()) {
          throw Error(ErrorKind::kValidation,
                      "no " + std::string(SourceName(v)) + " response for " + id);
        }
        step.candidates.emplace_back(v, it->second->response);
      }
      steps.push_back(std::move(step));
    }
    if (!steps.empty()) dialogues_.emplace_back(d.id, std::move(steps));
  }
  if (dialogues_.empty()) throw Error(ErrorKind::kValidation, "plan matches no corpus utterance");

  if (!ratings_path_.empty()) {
    std::ifstream in(ratings_path_);
    if (in) {
      std::stringstream ss;
      ss << in.rdbuf();
      ratings_ = ParseRatings(ss.str());
      for (const auto& r : ratings_) rated_.insert({r.evaluator_id, r.utterance_id});
    }
  }
}

std::string EvalStore::TokenFor(const std::string& evaluator, const std::string& utterance,
                                SourceVariant source) const {
  return Sha256Hex(secret_ + '\n' + evaluator + '\n' + utterance + '\n' +
                   std::string(SourceName(source)))
      .substr(0, 24);
}

const EvalStore::Step* EvalStore::NextFor(const std::string& evaluator,
                                          const std::string& dialogue) const {
  for (const auto& [id, steps] : dialogues_) {
    if (id != dialogue) continue;
    for (const auto& s : steps) {
      if (!rated_.contains({evaluator, s.utterance_id})) return &s;
    }
    return nullptr;
  }
  throw Error(ErrorKind::kValidation, "unknown evaluation dialogue " + dialogue);
}

json EvalStore::StepJson(const std::string& evaluator, const std::string& dialogue,
                         const Step& step) const {
  const auto& steps = std::find_if(dialogues_.begin(), dialogues_.end(),
                                   [&](const auto& d) { return d.first == dialogue; })
                          ->second;
  const auto position = static_cast<std::size_t>(&step - steps.data());
  json context = json::array();
  const auto& turns = step.context.turns;
  for (std::size_t i = 0; i + 1 < turns.size(); ++i) {
    context.push_back({{"role", RoleLabel(turns[i].role)}, {"text", turns[i].text}});
  }
  json candidates = json::array();
  for (const auto& [source, response] : step.candidates) {
    candidates.push_back(
        {{"source_token", TokenFor(evaluator, step.utterance_id, source)}, {"response", response}});
  }
  return {{"done", false},
          {"evaluator_id", evaluator},
          {"dialogue_id", dialogue},
          {"position", position},
          {"total", steps.size()},
          {"utterance_id", step.utterance_id},
          {"context", context},
          {"seeker_utterance", turns.back().text},
          {"candidates", candidates}};
}

json EvalStore::NextStep(const std::string& evaluator,
                         const std::optional<std::string>& dialogue_id) const {
  if (text::Trim(evaluator).empty()) throw Error(ErrorKind::kValidation, "evaluator id is required");
  std::lock_guard lock(mu_);
  if (dialogue_id) {
    if (const auto* s = NextFor(evaluator, *dialogue_id)) return StepJson(evaluator, *dialogue_id, *s);
    return {{"done", true}, {"evaluator_id", evaluator}, {"dialogue_id", *dialogue_id}};
  }
  for (const auto& [id, _] : dialogues_) {
    if (const auto* s = NextFor(evaluator, id)) return StepJson(evaluator, id, *s);
  }
  return {{"done", true}, {"evaluator_id", evaluator}};
}

json EvalStore::Submit(const json& body) {
  if (!body.is_object()) throw Error(ErrorKind::kValidation, "body must be an object");
  const auto evaluator = body.value("evaluator_id", "");
  if (text::Trim(evaluator).empty()) throw Error(ErrorKind::kValidation, "evaluator id is required");
  const auto& items = body.contains("ratings") ? body["ratings"] : json();
  if (!items.is_array() || items.empty()) throw Error(ErrorKind::kValidation, "ratings must be a non-empty list");

  std::lock_guard lock(mu_);
  const auto utterance = items[0].value("utterance_id", "");
  const Step* step = nullptr;
  std::string dialogue;
  for (const auto& [id, steps] : dialogues_) {
    for (const auto& s : steps) {
      if (s.utterance_id == utterance) {
        step = &s;
        dialogue = id;
      }
    }
  }
  if (!step) throw Error(ErrorKind::kValidation, "unknown utterance " + utterance);
  if (rated_.contains({evaluator, utterance})) {
    throw Error(ErrorKind::kExhausted, "utterance " + utterance + " already rated by " + evaluator);
  }
  if (NextFor(evaluator, dialogue) != step) {
    throw Error(ErrorKind::kExhausted, "utterance " + utterance + " is not the next step");
  }

  std::map<std::string, SourceVariant> by_token;
  for (const auto& [source, _] : step->candidates) {
    by_token.emplace(TokenFor(evaluator, utterance, source), source);
  }
  std::vector<RatingRecord> records;
  std::set<SourceVariant> seen;
  for (const auto& item : items) {
    if (item.value("utterance_id", "") != utterance) {
      throw Error(ErrorKind::kValidation, "a submission covers exactly one utterance");
    }
    auto it = by_token.find(item.value("source_token", ""));
    if (it == by_token.end()) throw Error(ErrorKind::kValidation, "unknown source token");
    if (!seen.insert(it->second).second) throw Error(ErrorKind::kValidation, "candidate rated twice");
    const auto& score = item.contains("score") ? item["score"] : json();
    if (!score.is_number_integer() || score.get<int>() < 1 || score.get<int>() > 5) {
      throw Error(ErrorKind::kValidation, "score must be an integer 1-5");
    }
    records.push_back({utterance, evaluator, it->second, score.get<int>()});
  }
  if (seen.size() != step->candidates.size()) {
    throw Error(ErrorKind::kValidation, "every candidate must be rated before submitting");
  }
  if (!ratings_path_.empty()) {
    std::ofstream out(ratings_path_, std::ios::app | std::ios::binary);
    out << SerializeRatings(records);
    out.flush();
    if (!out) throw Error(ErrorKind::kIo, "cannot append to " + ratings_path_);
  }
  ratings_.insert(ratings_.end(), records.begin(), records.end());
  rated_.insert({evaluator, utterance});

  json next;
  if (const auto* s = NextFor(evaluator, dialogue)) {
    next = StepJson(evaluator, dialogue, *s);
  } else {
    next = {{"done", true}, {"evaluator_id", evaluator}, {"dialogue_id", dialogue}};
  }
  return {{"accepted", records.size()}, {"next", next}};
}

json EvalStore::Dialogues() const {
  json out = json::array();
  for (const auto& [id, steps] : dialogues_) out.push_back({{"dialogue_id", id}, {"total", steps.size()}});
  return out;
}

std::vector<RatingRecord> EvalStore::ratings() const {
  std::lock_guard lock(mu_);
  return ratings_;
}

// ---------------------------------------------------------------------------
// HTTP plumbing

namespace {

int StatusFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation:
    case ErrorKind::kFormat:
    case ErrorKind::kConfig: return 400;
    case ErrorKind::kExhausted: return 409;
    case ErrorKind::kBackend:
    case ErrorKind::kTransport: return 502;
    default: return 500;
  }
}

void Reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void ReplyError(httplib::Response& res, int status, std::string_view kind, const std::string& msg) {
  Reply(res, status, {{"error", kind}, {"message", msg}});
}

template <typename Fn>
httplib::Server::Handler Guarded(Fn fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      ReplyError(res, StatusFor(e.kind()), ErrorKindName(e.kind()), e.what());
    } catch (const json::exception& e) {
      ReplyError(res, 400, "validation", std::string("malformed request: ") + e.what());
    } catch (const std::exception& e) {
      ReplyError(res, 500, "internal", e.what());
    }
  };
}

json ParseBody(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

SourceVariant RequireVariant(const json& j) {
  const auto name = j.at("variant").get<std::string>();
  auto v = ParseSource(name);
  if (!v) throw Error(ErrorKind::kValidation, "unknown variant '" + name + "'");
  return *v;
}

}  // namespace

HttpService::HttpService() : server_(std::make_unique<httplib::Server>()) {}

HttpService::~HttpService() { Stop(); }

int HttpService::Start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorKind::kIo, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpService::Run(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port)) {
    throw Error(ErrorKind::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  server_->listen_after_bind();
}

void HttpService::Stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

ApiServer::ApiServer(CounselorRuntime& runtime, ServerOptions options,
                     std::shared_ptr<EvalStore> eval)
    : runtime_(runtime), options_(std::move(options)), eval_(std::move(eval)) {
  auto& svr = server();
  const bool expose = options_.expose_analysis;

  svr.Get("/api/health", Guarded([](const httplib::Request&, httplib::Response& res) {
            Reply(res, 200, {{"status", "ok"}});
          }));

  svr.Post("/api/sessions", Guarded([this](const httplib::Request& req, httplib::Response& res) {
             const auto body = ParseBody(req);
             std::optional<std::string> dialogue;
             if (body.contains("dialogue_id") && !body["dialogue_id"].is_null()) {
               dialogue = body["dialogue_id"].get<std::string>();
             }
             auto session = runtime_.CreateSession(RequireVariant(body), dialogue);
             Reply(res, 201, {{"session_id", session->id}, {"variant", SourceName(session->variant)}});
           }));

  svr.Post(R"(/api/sessions/([^/]+)/messages)",
           Guarded([this, expose](const httplib::Request& req, httplib::Response& res) {
             const auto id = req.matches[1].str();
             if (!runtime_.FindSession(id)) {
               return ReplyError(res, 404, "not_found", "unknown session " + id);
             }
             const auto body = ParseBody(req);
             auto turn = runtime_.PostMessage(id, body.at("text").get<std::string>());
             Reply(res, 200, turn.View(expose));
           }));

  svr.Get(R"(/api/sessions/([^/]+))",
          Guarded([this, expose](const httplib::Request& req, httplib::Response& res) {
            const auto id = req.matches[1].str();
            auto session = runtime_.FindSession(id);
            if (!session) return ReplyError(res, 404, "not_found", "unknown session " + id);
            Reply(res, 200, session->Transcript(expose));
          }));

  svr.Post("/api/respond-all",
           Guarded([this, expose](const httplib::Request& req, httplib::Response& res) {
             const auto body = ParseBody(req);
             DialogueContext ctx;
             ctx.dialogue_id = body.value("dialogue_id", "adhoc");
             ctx.turns = TurnsFromJson(body.at("turns"), false);
             if (body.contains("target_turn_index")) {
               ctx.target_turn_index = body["target_turn_index"].get<std::size_t>();
             } else {
               ctx.target_turn_index = ctx.turns.size();
             }
             std::vector<SourceVariant> sources = options_.sources;
             if (body.contains("sources")) {
               sources.clear();
               for (const auto& s : body["sources"]) {
                 auto v = ParseSource(s.get<std::string>());
                 if (!v) throw Error(ErrorKind::kValidation, "unknown source '" + s.get<std::string>() + "'");
                 sources.push_back(*v);
               }
             }
             auto result = runtime_.RespondAll(ctx, sources);
             json results = json::object(), failures = json::object();
             for (const auto& [v, t] : result.turns) results[std::string(SourceName(v))] = t.View(expose);
             for (const auto& [v, m] : result.failures) failures[std::string(SourceName(v))] = m;
             Reply(res, 200, {{"utterance_id", UtteranceId(ctx)}, {"results", results}, {"failures", failures}});
           }));

  auto no_eval = [](httplib::Response& res) {
    ReplyError(res, 404, "not_found", "evaluation is not configured on this server");
  };

  svr.Get("/api/eval/dialogues",
          Guarded([this, no_eval](const httplib::Request&, httplib::Response& res) {
            if (!eval_) return no_eval(res);
            Reply(res, 200, eval_->Dialogues());
          }));

  svr.Get("/api/eval/next", Guarded([this, no_eval](const httplib::Request& req, httplib::Response& res) {
            if (!eval_) return no_eval(res);
            std::optional<std::string> dialogue;
            if (req.has_param("dialogue")) dialogue = req.get_param_value("dialogue");
            Reply(res, 200, eval_->NextStep(req.get_param_value("evaluator"), dialogue));
          }));

  svr.Post("/api/eval/ratings",
           Guarded([this, no_eval](const httplib::Request& req, httplib::Response& res) {
             if (!eval_) return no_eval(res);
             Reply(res, 200, eval_->Submit(ParseBody(req)));
           }));

  if (!options_.static_dir.empty() && !svr.set_mount_point("/", options_.static_dir)) {
    throw Error(ErrorKind::kConfig, "static directory not found: " + options_.static_dir);
  }
}

MockBackendServer::MockBackendServer(std::shared_ptr<ChatBackend> backend)
    : backend_(std::move(backend)) {
  server().Post("/v1/chat/completions",
                Guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto reply = backend_->Send(DecodeWireRequest(json::parse(req.body)));
                  if (reply.status != 200) {
                    res.status = reply.status;
                    res.set_content(reply.body.empty() ? "{\"error\":\"scripted failure\"}" : reply.body,
                                    "application/json");
                    return;
                  }
                  Reply(res, 200, EncodeWireResponse(reply));
                }));
}

}  // namespace copforge
