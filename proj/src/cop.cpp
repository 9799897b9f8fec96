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

#include "copforge/cop.hpp"

#include <algorithm>
#include <sstream>
#include <variant>

#include "copforge/error.hpp"
#include "copforge/parallel.hpp"
#include "copforge/text.hpp"

namespace copforge {

using nlohmann::json;

namespace {

const std::array<ApproachSchema, 3>& Schemas() {
  static const std::array<ApproachSchema, 3> kSchemas = {{
      {Approach::kCbt,
       "CBT",
       "Cognitive Behavioural Therapy",
       "[Cognitive Behavioural Therapy Analysis]",
       {"Event", "Cognition", "Behavior", "Belief"},
       {"[Cognitive Behavioral Therapy Analysis]", "[CBT Analysis]", "[认知行为疗法分析]",
        "【认知行为疗法分析】"},
       {{"事件"}, {"认知"}, {"Behaviour", "行为"}, {"信念"}}},
      {Approach::kPct,
       "PCT",
       "Person-Centered Therapy",
       "[Person-Centered Therapy Analysis]",
       {"Emotion", "Self-Awareness"},
       {"[Person Centered Therapy Analysis]", "[Person-Centred Therapy Analysis]",
        "[PCT Analysis]", "[以人为中心疗法分析]", "【以人为中心疗法分析】"},
       {{"情绪", "情感"}, {"Self Awareness", "自我觉察", "自我意识"}}},
      {Approach::kSfbt,
       "SFBT",
       "Solution-Focused Brief Therapy",
       "[Solution-Focused Brief Therapy Analysis]",
       {"Goal", "Resource", "Exception", "Action"},
       {"[Solution Focused Brief Therapy Analysis]", "[SFBT Analysis]", "[焦点解决短期治疗分析]",
        "【焦点解决短期治疗分析】"},
       {{"目标"}, {"资源"}, {"例外"}, {"行动"}}},
  }};
  return kSchemas;
}

constexpr std::string_view kFullWidthColon = "\xEF\xBC\x9A";

bool IsSingleLine(std::string_view s) { return s.find_first_of("\r\n") == std::string_view::npos; }

// Splits "name: value" on the first ASCII or full-width colon.
std::optional<std::pair<std::string_view, std::string_view>> SplitLabel(std::string_view line) {
  const auto ascii = line.find(':');
  const auto wide = line.find(kFullWidthColon);
  if (ascii == std::string_view::npos && wide == std::string_view::npos) return std::nullopt;
  if (wide == std::string_view::npos || (ascii != std::string_view::npos && ascii < wide)) {
    return std::pair{line.substr(0, ascii), line.substr(ascii + 1)};
  }
  return std::pair{line.substr(0, wide), line.substr(wide + kFullWidthColon.size())};
}

std::optional<std::size_t> MatchDimension(const ApproachSchema& schema, std::string_view name) {
  name = text::Trim(name);
  for (std::size_t i = 0; i < schema.dimensions.size(); ++i) {
    if (text::EqualsIgnoreCase(name, schema.dimensions[i])) return i;
    for (auto syn : schema.dimension_synonyms[i]) {
      if (text::EqualsIgnoreCase(name, syn)) return i;
    }
  }
  return std::nullopt;
}

std::string_view StripBullet(std::string_view line) {
  while (!line.empty() && (line.front() == '*' || line.front() == '-')) line.remove_prefix(1);
  return text::Trim(line);
}

bool LooksLikeHeader(std::string_view t) {
  return (t.starts_with('[') && t.ends_with(']')) ||
         (t.starts_with("\xE3\x80\x90") && t.ends_with("\xE3\x80\x91"));
}

}  // namespace

const ApproachSchema& SchemaOf(Approach a) { return Schemas()[static_cast<std::size_t>(a)]; }

std::string_view ApproachCode(Approach a) { return SchemaOf(a).code; }

std::optional<Approach> ParseApproachCode(std::string_view code) {
  for (const auto& s : Schemas()) {
    if (text::EqualsIgnoreCase(code, s.code)) return s.approach;
  }
  return std::nullopt;
}

const std::string* CoPAnalysis::Find(std::string_view dimension) const {
  for (const auto& [name, value] : dimensions) {
    if (name == dimension) return &value;
  }
  return nullptr;
}

void CoPAnalysis::Validate() const {
  const auto& schema = SchemaOf(approach);
  if (dimensions.size() != schema.dimensions.size()) {
    throw Error(ErrorKind::kValidation,
                std::string(schema.code) + " analysis must have exactly " +
                    std::to_string(schema.dimensions.size()) + " dimensions");
  }
  for (std::size_t i = 0; i < dimensions.size(); ++i) {
    const auto& [name, value] = dimensions[i];
    if (name != schema.dimensions[i]) {
      throw Error(ErrorKind::kValidation, "unexpected dimension " + name + " at position " +
                                              std::to_string(i) + " of " +
                                              std::string(schema.code) + " analysis");
    }
    if (text::Trim(value).empty()) {
      throw Error(ErrorKind::kValidation, "empty dimension text for " + name);
    }
    if (!IsSingleLine(value) || text::Trim(value).size() != value.size()) {
      throw Error(ErrorKind::kValidation,
                  "dimension text for " + name + " must be a single trimmed line");
    }
  }
}

json CoPAnalysis::DimensionsJson() const {
  json j = json::object();
  for (const auto& [name, value] : dimensions) j[name] = value;
  return j;
}

CoPAnalysis CoPAnalysis::FromDimensionsJson(Approach a, const json& j, AnalysisSource source) {
  const auto& schema = SchemaOf(a);
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "analysis must be a JSON object");
  std::vector<std::string> texts;
  for (auto dim : schema.dimensions) {
    auto it = j.find(std::string(dim));
    if (it == j.end() || !it->is_string()) {
      throw Error(ErrorKind::kValidation, "missing dimension " + std::string(dim));
    }
    texts.push_back(it->get<std::string>());
  }
  if (j.size() != schema.dimensions.size()) {
    throw Error(ErrorKind::kValidation,
                std::string(schema.code) + " analysis has unexpected dimensions");
  }
  return MakeAnalysis(a, texts, source);
}

CoPAnalysis MakeAnalysis(Approach a, const std::vector<std::string>& texts, AnalysisSource source) {
  const auto& schema = SchemaOf(a);
  if (texts.size() != schema.dimensions.size()) {
    throw Error(ErrorKind::kValidation, "wrong number of dimension texts for " +
                                            std::string(schema.code));
  }
  CoPAnalysis out;
  out.approach = a;
  out.source = source;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.dimensions.emplace_back(std::string(schema.dimensions[i]), texts[i]);
  }
  out.Validate();
  return out;
}

// ---------------------------------------------------------------------------
// Prompts

namespace {

constexpr std::string_view kPromptPreamble =
    "You are an experienced psychologist. Now, I will provide you with a history of a "
    "psychological counseling dialogue. Please analyze the seeker's situation from the "
    "perspective of ";
constexpr std::string_view kPromptFocus = ", focusing mainly on the seeker's last statement. ";
constexpr std::string_view kFollowFormatConcise =
    "Please strictly follow the format below and keep it as concise as possible.";
constexpr std::string_view kFollowFormat = "Please strictly follow the format below.";

}  // namespace

const std::string_view kCorrectiveSuffix =
    "Your previous answer did not follow the required format. Answer again using exactly the "
    "header line shown above, then one line per dimension that starts with '*', the dimension "
    "name and a colon. Do not add any other text.";

std::string RenderCopPrompt(Approach a, const DialogueContext& ctx) {
  const auto& schema = SchemaOf(a);
  std::string out;
  out += kPromptPreamble;
  out += schema.full_name;
  out += kPromptFocus;
  out += a == Approach::kPct ? kFollowFormat : kFollowFormatConcise;
  out += "\n\n";
  out += schema.header;
  out += '\n';
  if (a == Approach::kSfbt) out += "Seeker's State Assessment:\n";
  const std::string_view placeholder = a == Approach::kSfbt ? "<Text>" : "<text>";
  for (auto dim : schema.dimensions) {
    out += '*';
    out += dim;
    out += ": ";
    out += placeholder;
    out += '\n';
  }
  out += "\nDialogue history:\n";
  out += RenderTranscript(ctx);
  return out;
}

// ---------------------------------------------------------------------------
// Parsing and serialization

std::optional<Approach> DetectHeader(std::string_view line) {
  const auto t = text::Trim(line);
  if (t.empty()) return std::nullopt;
  for (const auto& s : Schemas()) {
    if (text::EqualsIgnoreCase(t, s.header)) return s.approach;
    for (auto syn : s.header_synonyms) {
      if (text::EqualsIgnoreCase(t, syn)) return s.approach;
    }
  }
  return std::nullopt;
}

CoPAnalysis ParseCop(Approach a, std::string_view input, CopParseOptions options) {
  const auto& schema = SchemaOf(a);
  std::vector<std::optional<std::string>> values(schema.dimensions.size());
  std::optional<std::size_t> current;
  bool header_seen = false;

  for (auto raw : text::SplitLines(input)) {
    const auto t = text::Trim(raw);
    if (t.empty()) {
      current.reset();
      continue;
    }
    if (auto found = DetectHeader(t)) {
      if (*found != a && options.strict_header) {
        throw Error(ErrorKind::kFormat, "analysis header names " +
                                            std::string(ApproachCode(*found)) + ", expected " +
                                            std::string(schema.code));
      }
      header_seen = true;
      current.reset();
      continue;
    }
    if (auto label = SplitLabel(StripBullet(t))) {
      if (auto idx = MatchDimension(schema, label->first)) {
        if (values[*idx]) {
          throw Error(ErrorKind::kFormat,
                      "duplicate dimension " + std::string(schema.dimensions[*idx]));
        }
        values[*idx] = std::string(text::Trim(label->second));
        current = idx;
        continue;
      }
    }
    if (options.strict_header && !header_seen && LooksLikeHeader(t)) {
      throw Error(ErrorKind::kFormat, "unrecognized header " + std::string(t));
    }
    if (current) {
      auto& v = *values[*current];
      if (!v.empty()) v += ' ';
      v += t;
    }
  }

  if (options.strict_header && !header_seen) {
    throw Error(ErrorKind::kFormat, "unrecognized header: expected " + std::string(schema.header));
  }
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i]) missing.emplace_back(schema.dimensions[i]);
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::kFormat, "missing dimension " + text::Join(missing, ", "));
  }
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i]->empty()) {
      throw Error(ErrorKind::kFormat,
                  "empty dimension text for " + std::string(schema.dimensions[i]));
    }
    texts.push_back(std::move(*values[i]));
  }
  return MakeAnalysis(a, texts);
}

std::string SerializeCop(const CoPAnalysis& a) {
  std::string out(SchemaOf(a.approach).header);
  for (const auto& [name, value] : a.dimensions) {
    out += "\n*";
    out += name;
    out += ": ";
    out += value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Annotated turns

json AnnotatedTurn::ToJson() const {
  json analyses_json = json::object();
  for (const auto& [approach, analysis] : analyses) {
    analyses_json[std::string(ApproachCode(approach))] = analysis.DimensionsJson();
  }
  return {{"dialogue_id", context.dialogue_id},
          {"target_turn_index", context.target_turn_index ? json(*context.target_turn_index)
                                                          : json(nullptr)},
          {"context_turns", TurnsToJson(context.turns)},
          {"response", response},
          {"analyses", analyses_json}};
}

AnnotatedTurn AnnotatedTurn::FromJson(const json& j) {
  AnnotatedTurn t;
  t.context.dialogue_id = j.at("dialogue_id").get<std::string>();
  if (!j.at("target_turn_index").is_null()) {
    t.context.target_turn_index = j["target_turn_index"].get<std::size_t>();
  }
  t.context.turns = TurnsFromJson(j.at("context_turns"), false);
  // Context turns are a prefix of the dialogue, so positions are indices.
  ValidateContext(t.context);
  t.response = j.at("response").get<std::string>();
  for (const auto& [code, dims] : j.at("analyses").items()) {
    auto a = ParseApproachCode(code);
    if (!a) throw Error(ErrorKind::kValidation, "unknown approach '" + code + "'");
    t.analyses.emplace(*a, CoPAnalysis::FromDimensionsJson(*a, dims));
  }
  return t;
}

AnnotationError::AnnotationError(Approach a, std::string utterance_id, std::string reason,
                                 std::string raw)
    : Error(ErrorKind::kFormat, std::string(ApproachCode(a)) + " analysis for " + utterance_id +
                                    " is malformed after corrective retry: " + reason),
      approach_(a),
      raw_(std::move(raw)) {}

CoPAnalysis AnnotateApproach(Approach a, const DialogueContext& ctx, Gateway& gateway,
                             const AnnotationOptions& options) {
  ValidateContext(ctx);
  const auto prompt = RenderCopPrompt(a, ctx);
  auto request = [&](std::string content) {
    return ChatRequest::SingleUser(options.model_id, std::move(content), options.temperature,
                                   options.max_output_units);
  };
  auto first = gateway.CachedComplete(request(prompt), options.cache_policy);
  try {
    auto analysis = ParseCop(a, first.content, options.parse);
    analysis.source = AnalysisSource::kAnnotated;
    return analysis;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kFormat && e.kind() != ErrorKind::kValidation) throw;
  }
  std::string corrected = prompt;
  corrected += "\n\n";
  corrected += kCorrectiveSuffix;
  auto second = gateway.CachedComplete(request(std::move(corrected)), options.cache_policy);
  try {
    auto analysis = ParseCop(a, second.content, options.parse);
    analysis.source = AnalysisSource::kAnnotated;
    return analysis;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kFormat && e.kind() != ErrorKind::kValidation) throw;
    throw AnnotationError(a, UtteranceId(ctx), e.what(), second.content);
  }
}

AnnotatedTurn AnnotateTurn(const DialogueContext& ctx, std::string response, Gateway& gateway,
                           const AnnotationOptions& options) {
  AnnotatedTurn turn;
  turn.context = ctx;
  turn.response = std::move(response);
  for (auto a : kAllApproaches) turn.analyses.emplace(a, AnnotateApproach(a, ctx, gateway, options));
  return turn;
}

double AnnotationReport::cache_hit_ratio() const {
  return logical_requests == 0 ? 0.0
                               : static_cast<double>(cache_hits) /
                                     static_cast<double>(logical_requests);
}

json AnnotationReport::ToJson() const {
  json fails = json::array();
  for (const auto& f : failures) {
    fails.push_back({{"utterance_id", f.utterance_id},
                     {"approach", f.approach},
                     {"reason", f.reason},
                     {"raw", f.raw}});
  }
  return {{"contexts", contexts},
          {"tasks", tasks},
          {"succeeded_turns", succeeded_turns},
          {"failed_turns", failed_turns},
          {"failures", fails},
          {"logical_requests", logical_requests},
          {"backend_calls", backend_calls},
          {"cache_hits", cache_hits},
          {"cache_hit_ratio", cache_hit_ratio()}};
}

AnnotationRun AnnotateCorpus(const std::vector<Dialogue>& corpus, Gateway& gateway,
                             std::size_t parallelism, const AnnotationOptions& options) {
  struct Target {
    DialogueContext ctx;
    std::string response;
  };
  std::vector<Target> targets;
  for (const auto& d : corpus) {
    for (auto& ctx : ContextsOf(d)) {
      auto response = d.turns[*ctx.target_turn_index].text;
      targets.push_back({std::move(ctx), std::move(response)});
    }
  }
  const std::size_t n_approaches = kAllApproaches.size();
  const std::size_t n_tasks = targets.size() * n_approaches;
  std::vector<std::variant<std::monostate, CoPAnalysis, AnnotationFailure>> slots(n_tasks);

  const auto before = gateway.stats();
  ParallelFor(n_tasks, parallelism, [&](std::size_t i) {
    const auto& target = targets[i / n_approaches];
    const auto approach = kAllApproaches[i % n_approaches];
    try {
      slots[i] = AnnotateApproach(approach, target.ctx, gateway, options);
    } catch (const AnnotationError& e) {
      slots[i] = AnnotationFailure{UtteranceId(target.ctx), std::string(ApproachCode(approach)),
                                   e.what(), e.raw()};
    } catch (const Error& e) {
      slots[i] = AnnotationFailure{UtteranceId(target.ctx), std::string(ApproachCode(approach)),
                                   e.what(), ""};
    }
  });
  const auto after = gateway.stats();

  AnnotationRun run;
  run.report.contexts = targets.size();
  run.report.tasks = n_tasks;
  run.report.logical_requests = after.logical_requests - before.logical_requests;
  run.report.backend_calls = after.backend_calls - before.backend_calls;
  run.report.cache_hits = after.cache_hits - before.cache_hits;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    AnnotatedTurn turn{targets[t].ctx, targets[t].response, {}};
    bool ok = true;
    for (std::size_t k = 0; k < n_approaches; ++k) {
      auto& slot = slots[t * n_approaches + k];
      if (auto* analysis = std::get_if<CoPAnalysis>(&slot)) {
        turn.analyses.emplace(analysis->approach, std::move(*analysis));
      } else if (auto* failure = std::get_if<AnnotationFailure>(&slot)) {
        run.report.failures.push_back(std::move(*failure));
        ok = false;
      }
    }
    if (ok) {
      ++run.report.succeeded_turns;
      run.turns.push_back(std::move(turn));
    } else {
      ++run.report.failed_turns;
    }
  }
  if (!targets.empty() && run.report.succeeded_turns == 0) {
    throw Error(ErrorKind::kBackend, "annotation failed for every turn (" +
                                         std::to_string(targets.size()) + " turns); first failure: " +
                                         run.report.failures.front().reason);
  }
  return run;
}

std::string SerializeAnnotated(const std::vector<AnnotatedTurn>& turns) {
  std::string out;
  for (const auto& t : turns) {
    out += t.ToJson().dump();
    out += '\n';
  }
  return out;
}

std::vector<AnnotatedTurn> ParseAnnotated(std::string_view content) {
  std::vector<AnnotatedTurn> out;
  std::size_t line_no = 0;
  for (auto line : text::SplitLines(content)) {
    ++line_no;
    if (text::Trim(line).empty()) continue;
    try {
      out.push_back(AnnotatedTurn::FromJson(json::parse(line)));
    } catch (const json::exception& e) {
      throw LineError(ErrorKind::kValidation, line_no, std::string("malformed record: ") + e.what());
    } catch (const Error& e) {
      throw LineError(ErrorKind::kValidation, line_no, e.what());
    }
  }
  return out;
}

}  // namespace copforge
