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

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace copforge {

enum class Role { kSeeker, kCounselor };

// Lowercase literal used in files and rendered transcripts.
std::string_view RoleLabel(Role role);
std::optional<Role> ParseRole(std::string_view label);

struct Utterance {
  Role role = Role::kSeeker;
  std::string text;
  std::size_t index = 0;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Dialogue {
  std::string id;
  std::vector<Utterance> turns;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

// The context c for one counselor response: a prefix of the source dialogue
// ending at a seeker turn. Trimming may drop the oldest turns.
struct DialogueContext {
  std::string dialogue_id;
  std::vector<Utterance> turns;
  std::optional<std::size_t> target_turn_index;

  friend bool operator==(const DialogueContext&, const DialogueContext&) = default;
};

// Stable identifier of the counselor turn a context targets: "<dialogue>#<n>".
std::string UtteranceId(const DialogueContext& ctx);

struct ParseOptions {
  // Reject unknown fields in records and turns.
  bool strict = false;
};

// Throws Error/LineError on invalid Dialogue values.
void ValidateDialogue(const Dialogue& d);
void ValidateContext(const DialogueContext& ctx);

// Parses line-delimited JSON dialogue records. Blank lines are skipped. Fails
// on the first offending line.
std::vector<Dialogue> ParseCorpus(std::string_view content, ParseOptions options = {});
std::vector<Dialogue> LoadCorpus(const std::string& path, ParseOptions options = {});

// Canonical line-delimited form accepted by ParseCorpus.
std::string SerializeCorpus(const std::vector<Dialogue>& corpus);

nlohmann::json TurnsToJson(const std::vector<Utterance>& turns);
std::vector<Utterance> TurnsFromJson(const nlohmann::json& j, bool strict);

// One context per counselor turn whose immediate predecessor is a seeker
// turn. The context is every turn before that counselor turn.
std::vector<DialogueContext> ContextsOf(const Dialogue& d);
std::size_t CountContexts(const std::vector<Dialogue>& corpus);

// "seeker: text" / "counselor: text", one line per turn.
std::string RenderTurns(const std::vector<Utterance>& turns);
std::string RenderTranscript(const DialogueContext& ctx);

}  // namespace copforge
