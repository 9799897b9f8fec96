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
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "copforge/cop.hpp"
#include "copforge/dialogue.hpp"

namespace copforge {

inline constexpr std::size_t kDefaultTokenBudget = 4096;

// Separates the serialized analysis from the response in training targets:
// one blank line, then "counselor: <response>".
inline constexpr std::string_view kResponseSeparator = "\n\ncounselor: ";

using TokenCounter = std::function<std::size_t(std::string_view)>;

// Default counter: Unicode scalar values.
TokenCounter ScalarCounter();

struct SftExample {
  std::string dialogue_id;
  std::size_t target_turn_index = 0;
  std::optional<Approach> approach;
  std::string prompt;
  std::string target;
  std::size_t token_count = 0;

  nlohmann::json ToJson() const;
  static SftExample FromJson(const nlohmann::json& j, const TokenCounter& counter);

  friend bool operator==(const SftExample&, const SftExample&) = default;
  friend auto operator<=>(const SftExample&, const SftExample&) = default;
};

// serialize_cop(p) + separator + r.
std::string PackTarget(const CoPAnalysis& analysis, std::string_view response);

// Drops whole oldest turns until counter(rendered prompt) + counter(target)
// fits the budget. The final seeker turn is always kept. Throws
// Error(kValidation, "irreducible context exceeds budget ...") otherwise.
std::vector<Utterance> TrimToBudget(const std::vector<Utterance>& prompt_turns,
                                    std::string_view target, std::size_t budget,
                                    const TokenCounter& counter = ScalarCounter());

struct SftOptions {
  std::size_t budget = kDefaultTokenBudget;
  TokenCounter counter = ScalarCounter();
};

struct SftBuild {
  std::vector<SftExample> examples;
  std::size_t skipped_turns = 0;
  std::vector<std::string> warnings;
};

// Three examples per complete turn, one per approach.
SftBuild BuildMixed(const std::vector<AnnotatedTurn>& annotated, const SftOptions& options = {});
SftBuild BuildSingle(const std::vector<AnnotatedTurn>& annotated, Approach approach,
                     const SftOptions& options = {});
// One (context -> response) example per eligible context, no analysis.
SftBuild BuildNaive(const std::vector<Dialogue>& corpus, const SftOptions& options = {});

struct TrainManifest {
  int epochs = 10;
  std::string optimizer = "AdamW";
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  double learning_rate = 2e-5;
  int batch_size = 8;
  std::size_t max_context = kDefaultTokenBudget;
  std::string base_model = "Baichuan2-7B-Chat";
  std::string checkpoint = "epoch 5";

  nlohmann::json ToJson() const;
  static TrainManifest FromJson(const nlohmann::json& j);
};

std::string SerializeDataset(const std::vector<SftExample>& examples);
std::vector<SftExample> ParseDataset(std::string_view content,
                                     const TokenCounter& counter = ScalarCounter());

// "<dir>/<stem>.manifest.json" next to the dataset path.
std::string ManifestPathFor(const std::string& dataset_path);

// Writes the dataset and its manifest; returns the manifest path.
std::string EmitDataset(const std::vector<SftExample>& examples, const std::string& path,
                        const TrainManifest& manifest = {});

struct DatasetSplit {
  std::vector<SftExample> train;
  std::vector<SftExample> held_out;
};

// Holds out whole dialogues (never splits one dialogue across sides).
DatasetSplit SplitHoldout(const std::vector<SftExample>& examples, double fraction,
                          std::uint64_t seed);

}  // namespace copforge
