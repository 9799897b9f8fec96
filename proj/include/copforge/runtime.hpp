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

#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "copforge/cop.hpp"
#include "copforge/dialogue.hpp"
#include "copforge/gateway.hpp"
#include "copforge/sft.hpp"
#include "copforge/source.hpp"

namespace copforge {

std::string RenderBaselinePrompt(const DialogueContext& ctx);

struct ParsedGeneration {
  std::optional<CoPAnalysis> analysis;
  std::string response;
  // Set for CoP variants whose output had no parseable analysis.
  bool analysis_missing = false;
};

// Splits a backend generation into (analysis, displayed response). Never
// throws: malformed CoP output degrades to a plain response with
// analysis_missing set.
ParsedGeneration ParseGeneration(SourceVariant variant, std::string_view text);

struct CounselorTurn {
  SourceVariant variant = SourceVariant::kNaive;
  std::optional<CoPAnalysis> analysis;
  std::string response;
  std::string raw;
  bool analysis_missing = false;
  bool cache_hit = false;
  std::chrono::milliseconds latency{0};
  Usage usage;

  // Displayed length in Unicode scalar values (analysis excluded).
  std::size_t length() const;
  // Public view; analysis included only when `expose_analysis`.
  nlohmann::json View(bool expose_analysis) const;
};

struct RuntimeConfig {
  // Backend model id per fine-tuned or prompted variant.
  std::map<SourceVariant, std::string> models = {
      {SourceVariant::kMixed, "psymix-mixed"},       {SourceVariant::kCbtOnly, "psymix-cbt"},
      {SourceVariant::kPctOnly, "psymix-pct"},       {SourceVariant::kSfbtOnly, "psymix-sfbt"},
      {SourceVariant::kNaive, "psymix-naive"},       {SourceVariant::kPromptedBaseline, "gpt-3.5-turbo"},
  };
  // Playback corpus for ground truth.
  std::shared_ptr<const std::vector<Dialogue>> corpus;
  std::size_t budget = kDefaultTokenBudget;
  double temperature = kGenerationTemperature;
  int max_output_units = kDefaultMaxOutputUnits;
  CachePolicy cache_policy = CachePolicy::kReadWrite;

  // Throws Error(kConfig) if `v` lacks its binding.
  void RequireBound(SourceVariant v) const;
};

struct ChatSession {
  std::string id;
  SourceVariant variant = SourceVariant::kNaive;
  // Ground-truth sessions replay this dialogue.
  std::optional<std::string> dialogue_id;
  std::vector<Utterance> turns;
  std::vector<CounselorTurn> replies;
  std::chrono::system_clock::time_point created;
  mutable std::mutex mu;

  // Seeker messages and counselor replies as a context ending at the latest
  // seeker message.
  DialogueContext Context() const;
  nlohmann::json Transcript(bool expose_analysis) const;
};

struct RespondAllResult {
  std::map<SourceVariant, CounselorTurn> turns;
  std::map<SourceVariant, std::string> failures;
};

class CounselorRuntime {
 public:
  CounselorRuntime(RuntimeConfig config, Gateway& gateway);

  // Generates one reply for `ctx` from `variant`. Ground truth looks up the
  // corpus by (dialogue_id, target_turn_index).
  CounselorTurn Respond(SourceVariant variant, const DialogueContext& ctx);

  // Appends the next counselor reply to a session whose last turn is a
  // seeker message.
  CounselorTurn GenerateTurn(ChatSession& session);

  RespondAllResult RespondAll(const DialogueContext& ctx, std::span<const SourceVariant> sources);

  // Session store.
  std::shared_ptr<ChatSession> CreateSession(SourceVariant variant,
                                             std::optional<std::string> dialogue_id = {});
  std::shared_ptr<ChatSession> FindSession(const std::string& id) const;
  // Appends the seeker text and generates a reply; the session is left
  // unchanged when generation fails.
  CounselorTurn PostMessage(const std::string& session_id, std::string text);

  const RuntimeConfig& config() const { return config_; }

 private:
  const Dialogue* FindDialogue(const std::string& id) const;
  CounselorTurn Dispatch(SourceVariant variant, const DialogueContext& ctx);

  RuntimeConfig config_;
  Gateway& gateway_;
  std::map<std::string, const Dialogue*> by_id_;
  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<ChatSession>> sessions_;
  std::uint64_t session_counter_ = 0;
};

}  // namespace copforge
