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

#include "copforge/runtime.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "copforge/error.hpp"
#include "copforge/parallel.hpp"
#include "copforge/text.hpp"

namespace copforge {

using nlohmann::json;

std::string RenderBaselinePrompt(const DialogueContext& ctx) {
  std::string out =
      "Please generate a response to the seeker's last sentence based on the context of the "
      "conversation.\n\nHere is the context:\n";
  out += RenderTranscript(ctx);
  out +=
      "\n\nPlease respond to the seeker's last sentence coherently and smoothly as a counselor, "
      "maintaining a gentle attitude, avoiding repetition of previous remarks, and keeping it "
      "concise. Please strictly adhere to the following format for the output:\n\n"
      "counselor: <response>";
  return out;
}

namespace {

constexpr std::string_view kCounselorLabels[] = {"counselor:", "counsellor:",
                                                 "咨询师:", "咨询师\xEF\xBC\x9A"};

// Returns the text after a leading counselor label, if the line has one.
std::optional<std::string_view> AfterCounselorLabel(std::string_view line) {
  const auto t = text::Trim(line);
  for (auto label : kCounselorLabels) {
    if (text::StartsWithIgnoreCase(t, label)) return text::Trim(t.substr(label.size()));
  }
  return std::nullopt;
}

std::string JoinLines(const std::vector<std::string_view>& lines, std::size_t from, std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to; ++i) {
    if (!out.empty()) out += '\n';
    out += lines[i];
  }
  return std::string(text::Trim(out));
}

// Drops analysis header lines so they never reach the displayed response.
std::string WithoutHeaders(std::string_view s) {
  std::string out;
  for (auto line : text::SplitLines(s)) {
    if (DetectHeader(line)) continue;
    if (!out.empty()) out += '\n';
    out += line;
  }
  return std::string(text::Trim(out));
}

std::string StripLeadingLabel(std::string_view s) {
  auto trimmed = text::Trim(s);
  auto lines = text::SplitLines(trimmed);
  if (!lines.empty()) {
    if (auto rest = AfterCounselorLabel(lines.front())) {
      std::string out(*rest);
      for (std::size_t i = 1; i < lines.size(); ++i) {
        out += '\n';
        out += lines[i];
      }
      return std::string(text::Trim(out));
    }
  }
  return std::string(trimmed);
}

}  // namespace

ParsedGeneration ParseGeneration(SourceVariant variant, std::string_view raw) {
  ParsedGeneration out;
  if (variant == SourceVariant::kPromptedBaseline) {
    out.response = WithoutHeaders(StripLeadingLabel(raw));
    return out;
  }
  if (!IsCopVariant(variant)) {
    out.response = WithoutHeaders(raw);
    return out;
  }

  const auto lines = text::SplitLines(raw);
  std::optional<std::size_t> header_line;
  std::optional<Approach> approach;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if ((approach = DetectHeader(lines[i]))) {
      header_line = i;
      break;
    }
  }
  auto fallback = [&] {
    out.analysis.reset();
    out.analysis_missing = true;
    out.response = WithoutHeaders(StripLeadingLabel(out.response.empty() ? raw : out.response));
    if (out.response.empty()) out.response = WithoutHeaders(raw);
    return out;
  };
  if (!header_line) return fallback();

  // The response starts at the first counselor-labelled line after the
  // header; without a label, at the first blank line after the analysis.
  std::optional<std::size_t> split;
  bool label = false;
  for (std::size_t i = *header_line + 1; i < lines.size(); ++i) {
    if (AfterCounselorLabel(lines[i])) {
      split = i;
      label = true;
      break;
    }
  }
  if (!split) {
    bool seen_content = false;
    for (std::size_t i = *header_line + 1; i < lines.size(); ++i) {
      if (text::Trim(lines[i]).empty()) {
        if (seen_content) {
          split = i + 1;
          break;
        }
      } else {
        seen_content = true;
      }
    }
  }
  const std::size_t end_of_analysis = split ? (label ? *split : *split - 1) : lines.size();
  std::string analysis_text = JoinLines(lines, *header_line, end_of_analysis);
  if (split) {
    std::string rest = JoinLines(lines, *split, lines.size());
    out.response = WithoutHeaders(label ? StripLeadingLabel(rest) : rest);
  }
  try {
    out.analysis = ParseCop(*approach, analysis_text);
    out.analysis->source = AnalysisSource::kModelGenerated;
  } catch (const Error&) {
    return fallback();
  }
  if (out.response.empty()) return fallback();
  return out;
}

std::size_t CounselorTurn::length() const { return text::CountScalars(response); }

json CounselorTurn::View(bool expose_analysis) const {
  json flags = json::array();
  if (analysis_missing) flags.push_back("analysis_missing");
  if (cache_hit) flags.push_back("cache_hit");
  json view = {{"variant", SourceName(variant)},
               {"response", response},
               {"length", length()},
               {"flags", flags}};
  if (expose_analysis) {
    view["analysis"] = analysis ? json{{"approach", ApproachCode(analysis->approach)},
                                       {"dimensions", analysis->DimensionsJson()}}
                                : json(nullptr);
  }
  return view;
}

void RuntimeConfig::RequireBound(SourceVariant v) const {
  if (v == SourceVariant::kGroundTruth) {
    if (!corpus) throw Error(ErrorKind::kConfig, "ground truth variant requires a bound corpus");
    return;
  }
  auto it = models.find(v);
  if (it == models.end() || it->second.empty()) {
    throw Error(ErrorKind::kConfig,
                "variant " + std::string(SourceName(v)) + " has no backend model id");
  }
}

DialogueContext ChatSession::Context() const {
  DialogueContext ctx;
  ctx.dialogue_id = id;
  ctx.turns = turns;
  ctx.target_turn_index = turns.size();
  return ctx;
}

json ChatSession::Transcript(bool expose_analysis) const {
  std::lock_guard lock(mu);
  json turns_json = json::array();
  std::size_t reply = 0;
  for (const auto& t : turns) {
    json entry = {{"role", RoleLabel(t.role)}, {"text", t.text}};
    if (t.role == Role::kCounselor && reply < replies.size()) {
      entry["turn"] = replies[reply++].View(expose_analysis);
    }
    turns_json.push_back(std::move(entry));
  }
  json out = {{"session_id", id}, {"variant", SourceName(variant)}, {"turns", turns_json}};
  if (dialogue_id) out["dialogue_id"] = *dialogue_id;
  return out;
}

CounselorRuntime::CounselorRuntime(RuntimeConfig config, Gateway& gateway)
    : config_(std::move(config)), gateway_(gateway) {
  if (config_.corpus) {
    for (const auto& d : *config_.corpus) by_id_.emplace(d.id, &d);
  }
}

const Dialogue* CounselorRuntime::FindDialogue(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : it->second;
}

CounselorTurn CounselorRuntime::Dispatch(SourceVariant variant, const DialogueContext& ctx) {
  ValidateContext(ctx);
  config_.RequireBound(variant);
  const auto start = std::chrono::steady_clock::now();
  CounselorTurn turn;
  turn.variant = variant;

  if (variant == SourceVariant::kGroundTruth) {
    const auto* d = FindDialogue(ctx.dialogue_id);
    if (!d) throw Error(ErrorKind::kExhausted, "ground truth has no dialogue " + ctx.dialogue_id);
    const auto idx = ctx.target_turn_index.value_or(d->turns.size());
    if (idx >= d->turns.size() || d->turns[idx].role != Role::kCounselor) {
      throw Error(ErrorKind::kExhausted, "ground truth exhausted for " + UtteranceId(ctx));
    }
    turn.raw = d->turns[idx].text;
    turn.response = turn.raw;
    turn.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    return turn;
  }

  std::string prompt;
  if (variant == SourceVariant::kPromptedBaseline) {
    prompt = RenderBaselinePrompt(ctx);
  } else {
    // Fine-tuned variants see the bare rendered context, trimmed so that the
    // prompt plus the longest allowed generation fits the context window.
    const auto reserve = std::min<std::size_t>(static_cast<std::size_t>(config_.max_output_units),
                                               config_.budget > 1 ? config_.budget - 1 : 0);
    prompt = RenderTurns(TrimToBudget(ctx.turns, "", config_.budget - reserve));
  }
  auto req = ChatRequest::SingleUser(config_.models.at(variant), std::move(prompt),
                                     config_.temperature, config_.max_output_units);
  auto result = gateway_.CachedComplete(req, config_.cache_policy);
  auto parsed = ParseGeneration(variant, result.content);
  if (text::Trim(parsed.response).empty()) {
    throw Error(ErrorKind::kBackend,
                std::string(SourceName(variant)) + " backend returned an empty response");
  }
  turn.raw = std::move(result.content);
  turn.analysis = std::move(parsed.analysis);
  turn.response = std::move(parsed.response);
  turn.analysis_missing = parsed.analysis_missing;
  turn.cache_hit = result.cache_hit;
  turn.usage = result.usage;
  turn.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  return turn;
}

CounselorTurn CounselorRuntime::Respond(SourceVariant variant, const DialogueContext& ctx) {
  return Dispatch(variant, ctx);
}

CounselorTurn CounselorRuntime::GenerateTurn(ChatSession& session) {
  if (session.turns.empty() || session.turns.back().role != Role::kSeeker) {
    throw Error(ErrorKind::kValidation, "session's last turn must be a seeker message");
  }
  CounselorTurn turn;
  if (session.variant == SourceVariant::kGroundTruth) {
    config_.RequireBound(session.variant);
    const auto* d = session.dialogue_id ? FindDialogue(*session.dialogue_id) : nullptr;
    if (!d) throw Error(ErrorKind::kConfig, "ground truth session is not bound to a dialogue");
    const auto contexts = ContextsOf(*d);
    const auto cursor = session.replies.size();
    if (cursor >= contexts.size()) {
      throw Error(ErrorKind::kExhausted, "ground truth exhausted for dialogue " + d->id);
    }
    turn = Dispatch(SourceVariant::kGroundTruth, contexts[cursor]);
  } else {
    turn = Dispatch(session.variant, session.Context());
  }
  session.turns.push_back({Role::kCounselor, turn.response, session.turns.size()});
  session.replies.push_back(turn);
  return turn;
}

RespondAllResult CounselorRuntime::RespondAll(const DialogueContext& ctx,
                                              std::span<const SourceVariant> sources) {
  std::vector<std::optional<CounselorTurn>> turns(sources.size());
  std::vector<std::string> errors(sources.size());
  ParallelFor(sources.size(), sources.size(), [&](std::size_t i) {
    try {
      turns[i] = Dispatch(sources[i], ctx);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  RespondAllResult out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (turns[i]) {
      out.turns.emplace(sources[i], std::move(*turns[i]));
    } else {
      out.failures.emplace(sources[i], errors[i]);
    }
  }
  return out;
}

std::shared_ptr<ChatSession> CounselorRuntime::CreateSession(SourceVariant variant,
                                                             std::optional<std::string> dialogue_id) {
  config_.RequireBound(variant);
  if (variant == SourceVariant::kGroundTruth) {
    if (!dialogue_id || !FindDialogue(*dialogue_id)) {
      throw Error(ErrorKind::kValidation, "ground truth session needs a known dialogue_id");
    }
  }
  auto session = std::make_shared<ChatSession>();
  session->variant = variant;
  session->dialogue_id = std::move(dialogue_id);
  session->created = std::chrono::system_clock::now();
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(sessions_mu_);
  std::ostringstream id;
  id << "s" << ++session_counter_ << "-" << std::hex << (rng() & 0xFFFFFFFFFFFFULL);
  session->id = id.str();
  sessions_.emplace(session->id, session);
  return session;
}

std::shared_ptr<ChatSession> CounselorRuntime::FindSession(const std::string& id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

CounselorTurn CounselorRuntime::PostMessage(const std::string& session_id, std::string text) {
  auto session = FindSession(session_id);
  if (!session) throw Error(ErrorKind::kValidation, "unknown session " + session_id);
  if (text::Trim(text).empty()) throw Error(ErrorKind::kValidation, "message text is empty");
  std::lock_guard lock(session->mu);
  session->turns.push_back({Role::kSeeker, std::move(text), session->turns.size()});
  try {
    return GenerateTurn(*session);
  } catch (...) {
    session->turns.pop_back();
    throw;
  }
}

}  // namespace copforge
