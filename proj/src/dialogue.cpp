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

#include "copforge/dialogue.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "copforge/error.hpp"
#include "copforge/text.hpp"

namespace copforge {

using nlohmann::json;

std::string_view RoleLabel(Role role) {
  return role == Role::kSeeker ? "seeker" : "counselor";
}

std::optional<Role> ParseRole(std::string_view label) {
  if (label == "seeker") return Role::kSeeker;
  if (label == "counselor") return Role::kCounselor;
  return std::nullopt;
}

std::string UtteranceId(const DialogueContext& ctx) {
  std::string id = ctx.dialogue_id;
  id += '#';
  id += ctx.target_turn_index ? std::to_string(*ctx.target_turn_index) : "?";
  return id;
}

void ValidateDialogue(const Dialogue& d) {
  if (d.id.empty()) throw Error(ErrorKind::kValidation, "dialogue id is empty");
  if (d.turns.size() < 2) {
    throw Error(ErrorKind::kValidation, "dialogue " + d.id + " has fewer than 2 turns");
  }
  bool seeker = false, counselor = false;
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const auto& t = d.turns[i];
    if (t.index != i) {
      throw Error(ErrorKind::kValidation, "dialogue " + d.id + " has a gap in turn indices");
    }
    if (text::Trim(t.text).empty()) {
      throw Error(ErrorKind::kValidation,
                  "dialogue " + d.id + " turn " + std::to_string(i) + " has empty text");
    }
    (t.role == Role::kSeeker ? seeker : counselor) = true;
  }
  if (!seeker || !counselor) {
    throw Error(ErrorKind::kValidation,
                "dialogue " + d.id + " needs at least one seeker and one counselor turn");
  }
}

void ValidateContext(const DialogueContext& ctx) {
  if (ctx.turns.empty() || ctx.turns.back().role != Role::kSeeker) {
    throw Error(ErrorKind::kValidation, "context must end at a seeker turn");
  }
  for (std::size_t i = 1; i < ctx.turns.size(); ++i) {
    if (ctx.turns[i].index != ctx.turns[i - 1].index + 1) {
      throw Error(ErrorKind::kValidation, "context turns are not contiguous");
    }
  }
}

json TurnsToJson(const std::vector<Utterance>& turns) {
  json arr = json::array();
  for (const auto& t : turns) {
    arr.push_back({{"role", RoleLabel(t.role)}, {"text", t.text}});
  }
  return arr;
}

namespace {

// Turn parsing that reports reasons without line context; the caller wraps.
std::vector<Utterance> ParseTurns(const json& j, bool strict) {
  if (!j.is_array()) throw std::invalid_argument("\"turns\" must be an array");
  std::vector<Utterance> turns;
  turns.reserve(j.size());
  for (const auto& t : j) {
    if (!t.is_object()) throw std::invalid_argument("turn must be an object");
    if (strict) {
      for (const auto& [key, _] : t.items()) {
        if (key != "role" && key != "text") {
          throw std::invalid_argument("unknown field \"" + key + "\" in turn");
        }
      }
    }
    if (!t.contains("role") || !t["role"].is_string()) {
      throw std::invalid_argument("turn missing string \"role\"");
    }
    if (!t.contains("text") || !t["text"].is_string()) {
      throw std::invalid_argument("turn missing string \"text\"");
    }
    const auto label = t["role"].get<std::string>();
    auto role = ParseRole(label);
    if (!role) throw std::invalid_argument("unknown role label '" + label + "'");
    Utterance u{*role, t["text"].get<std::string>(), turns.size()};
    if (text::Trim(u.text).empty()) throw std::invalid_argument("empty utterance text");
    turns.push_back(std::move(u));
  }
  return turns;
}

Dialogue ParseRecord(const json& j, bool strict) {
  if (!j.is_object()) throw std::invalid_argument("record must be a JSON object");
  if (strict) {
    for (const auto& [key, _] : j.items()) {
      if (key != "id" && key != "turns" && key != "metadata") {
        throw std::invalid_argument("unknown field \"" + key + "\"");
      }
    }
  }
  if (!j.contains("id") || !j["id"].is_string()) {
    throw std::invalid_argument("missing string \"id\"");
  }
  if (!j.contains("turns")) throw std::invalid_argument("missing \"turns\"");
  Dialogue d;
  d.id = j["id"].get<std::string>();
  d.turns = ParseTurns(j["turns"], strict);
  if (j.contains("metadata") && !j["metadata"].is_null()) {
    if (!j["metadata"].is_object()) throw std::invalid_argument("\"metadata\" must be an object");
    for (const auto& [key, value] : j["metadata"].items()) {
      d.metadata[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  }
  return d;
}

}  // namespace

std::vector<Utterance> TurnsFromJson(const json& j, bool strict) {
  try {
    return ParseTurns(j, strict);
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorKind::kValidation, e.what());
  }
}

std::vector<Dialogue> ParseCorpus(std::string_view content, ParseOptions options) {
  std::vector<Dialogue> corpus;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  for (auto line : text::SplitLines(content)) {
    ++line_no;
    if (text::Trim(line).empty()) continue;
    Dialogue d;
    try {
      d = ParseRecord(json::parse(line), options.strict);
      ValidateDialogue(d);
    } catch (const json::exception& e) {
      throw LineError(ErrorKind::kValidation, line_no, std::string("malformed record: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw LineError(ErrorKind::kValidation, line_no, e.what());
    } catch (const Error& e) {
      throw LineError(ErrorKind::kValidation, line_no, e.what());
    }
    if (!ids.insert(d.id).second) {
      throw LineError(ErrorKind::kValidation, line_no, "duplicate dialogue id '" + d.id + "'");
    }
    corpus.push_back(std::move(d));
  }
  return corpus;
}

std::vector<Dialogue> LoadCorpus(const std::string& path, ParseOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open corpus file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseCorpus(ss.str(), options);
}

std::string SerializeCorpus(const std::vector<Dialogue>& corpus) {
  std::string out;
  for (const auto& d : corpus) {
    json j = {{"id", d.id}, {"turns", TurnsToJson(d.turns)}};
    if (!d.metadata.empty()) j["metadata"] = d.metadata;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<DialogueContext> ContextsOf(const Dialogue& d) {
  std::vector<DialogueContext> out;
  for (std::size_t i = 1; i < d.turns.size(); ++i) {
    if (d.turns[i].role != Role::kCounselor || d.turns[i - 1].role != Role::kSeeker) continue;
    DialogueContext ctx;
    ctx.dialogue_id = d.id;
    ctx.turns.assign(d.turns.begin(), d.turns.begin() + static_cast<std::ptrdiff_t>(i));
    ctx.target_turn_index = i;
    out.push_back(std::move(ctx));
  }
  return out;
}

std::size_t CountContexts(const std::vector<Dialogue>& corpus) {
  std::size_t n = 0;
  for (const auto& d : corpus) n += ContextsOf(d).size();
  return n;
}

std::string RenderTurns(const std::vector<Utterance>& turns) {
  std::string out;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (i) out += '\n';
    out += RoleLabel(turns[i].role);
    out += ": ";
    out += turns[i].text;
  }
  return out;
}

std::string RenderTranscript(const DialogueContext& ctx) { return RenderTurns(ctx.turns); }

}  // namespace copforge
