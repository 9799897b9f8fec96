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

#include "copforge/sft.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "copforge/error.hpp"
#include "copforge/io.hpp"
#include "copforge/random.hpp"
#include "copforge/text.hpp"

namespace copforge {

using nlohmann::json;

TokenCounter ScalarCounter() {
  return [](std::string_view s) { return text::CountScalars(s); };
}

json SftExample::ToJson() const {
  return {{"dialogue_id", dialogue_id},
          {"target_turn_index", target_turn_index},
          {"approach", approach ? json(std::string(ApproachCode(*approach))) : json(nullptr)},
          {"prompt", prompt},
          {"target", target}};
}

SftExample SftExample::FromJson(const json& j, const TokenCounter& counter) {
  SftExample e;
  e.dialogue_id = j.at("dialogue_id").get<std::string>();
  e.target_turn_index = j.at("target_turn_index").get<std::size_t>();
  if (!j.at("approach").is_null()) {
    const auto code = j["approach"].get<std::string>();
    e.approach = ParseApproachCode(code);
    if (!e.approach) throw Error(ErrorKind::kValidation, "unknown approach '" + code + "'");
  }
  e.prompt = j.at("prompt").get<std::string>();
  e.target = j.at("target").get<std::string>();
  e.token_count = counter(e.prompt) + counter(e.target);
  return e;
}

std::string PackTarget(const CoPAnalysis& analysis, std::string_view response) {
  std::string out = SerializeCop(analysis);
  out += kResponseSeparator;
  out += response;
  return out;
}

std::vector<Utterance> TrimToBudget(const std::vector<Utterance>& prompt_turns,
                                    std::string_view target, std::size_t budget,
                                    const TokenCounter& counter) {
  if (prompt_turns.empty() || prompt_turns.back().role != Role::kSeeker) {
    throw Error(ErrorKind::kValidation, "prompt turns must end at a seeker turn");
  }
  const std::size_t target_len = counter(target);
  // Grow the kept suffix one whole turn at a time while it still fits.
  std::size_t keep = 0;
  std::string rendered;
  for (auto it = prompt_turns.rbegin(); it != prompt_turns.rend(); ++it) {
    std::string candidate = RenderTurns({*it});
    if (keep > 0) candidate += '\n' + rendered;
    if (counter(candidate) + target_len > budget) break;
    rendered = std::move(candidate);
    ++keep;
  }
  if (keep == 0) {
    throw Error(ErrorKind::kValidation,
                "irreducible context exceeds budget: last seeker turn plus target need " +
                    std::to_string(counter(RenderTurns({prompt_turns.back()})) + target_len) +
                    " units, budget is " + std::to_string(budget));
  }
  return {prompt_turns.end() - static_cast<std::ptrdiff_t>(keep), prompt_turns.end()};
}

namespace {

std::optional<SftExample> MakeExample(const DialogueContext& ctx, std::optional<Approach> approach,
                                      std::string target, const SftOptions& options,
                                      SftBuild& build) {
  try {
    auto turns = TrimToBudget(ctx.turns, target, options.budget, options.counter);
    SftExample e;
    e.dialogue_id = ctx.dialogue_id;
    e.target_turn_index = ctx.target_turn_index.value_or(0);
    e.approach = approach;
    e.prompt = RenderTurns(turns);
    e.target = std::move(target);
    e.token_count = options.counter(e.prompt) + options.counter(e.target);
    return e;
  } catch (const Error& err) {
    build.warnings.push_back(UtteranceId(ctx) + ": " + err.what());
    return std::nullopt;
  }
}

void BuildFromTurns(const std::vector<AnnotatedTurn>& annotated,
                    const std::vector<Approach>& approaches, const SftOptions& options,
                    SftBuild& build) {
  for (const auto& turn : annotated) {
    std::vector<std::string> missing;
    for (auto a : approaches) {
      if (!turn.analyses.contains(a)) missing.emplace_back(ApproachCode(a));
    }
    if (!missing.empty()) {
      ++build.skipped_turns;
      build.warnings.push_back(UtteranceId(turn.context) + ": incomplete turn, missing " +
                               text::Join(missing, ", "));
      continue;
    }
    std::vector<SftExample> rows;
    for (auto a : approaches) {
      auto e = MakeExample(turn.context, a, PackTarget(turn.analyses.at(a), turn.response), options,
                           build);
      if (!e) break;
      rows.push_back(std::move(*e));
    }
    if (rows.size() != approaches.size()) {
      ++build.skipped_turns;
      continue;
    }
    for (auto& r : rows) build.examples.push_back(std::move(r));
  }
}

}  // namespace

SftBuild BuildMixed(const std::vector<AnnotatedTurn>& annotated, const SftOptions& options) {
  SftBuild build;
  BuildFromTurns(annotated, {kAllApproaches.begin(), kAllApproaches.end()}, options, build);
  return build;
}

SftBuild BuildSingle(const std::vector<AnnotatedTurn>& annotated, Approach approach,
                     const SftOptions& options) {
  SftBuild build;
  BuildFromTurns(annotated, {approach}, options, build);
  return build;
}

SftBuild BuildNaive(const std::vector<Dialogue>& corpus, const SftOptions& options) {
  SftBuild build;
  for (const auto& d : corpus) {
    for (const auto& ctx : ContextsOf(d)) {
      auto e = MakeExample(ctx, std::nullopt, d.turns[*ctx.target_turn_index].text, options, build);
      if (e) {
        build.examples.push_back(std::move(*e));
      } else {
        ++build.skipped_turns;
      }
    }
  }
  return build;
}

json TrainManifest::ToJson() const {
  return {{"epochs", epochs},
          {"optimizer",
           {{"name", optimizer},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon}}},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"max_context", max_context},
          {"base_model", base_model},
          {"checkpoint", checkpoint}};
}

TrainManifest TrainManifest::FromJson(const json& j) {
  TrainManifest m;
  m.epochs = j.value("epochs", m.epochs);
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    m.optimizer = o.value("name", m.optimizer);
    m.weight_decay = o.value("weight_decay", m.weight_decay);
    m.beta1 = o.value("beta1", m.beta1);
    m.beta2 = o.value("beta2", m.beta2);
    m.epsilon = o.value("epsilon", m.epsilon);
  }
  m.learning_rate = j.value("learning_rate", m.learning_rate);
  m.batch_size = j.value("batch_size", m.batch_size);
  m.max_context = j.value("max_context", m.max_context);
  m.base_model = j.value("base_model", m.base_model);
  m.checkpoint = j.value("checkpoint", m.checkpoint);
  return m;
}

std::string SerializeDataset(const std::vector<SftExample>& examples) {
  std::string out;
  for (const auto& e : examples) {
    out += e.ToJson().dump();
    out += '\n';
  }
  return out;
}

std::vector<SftExample> ParseDataset(std::string_view content, const TokenCounter& counter) {
  std::vector<SftExample> out;
  std::size_t line_no = 0;
  for (auto line : text::SplitLines(content)) {
    ++line_no;
    if (text::Trim(line).empty()) continue;
    try {
      out.push_back(SftExample::FromJson(json::parse(line), counter));
    } catch (const json::exception& e) {
      throw LineError(ErrorKind::kValidation, line_no, std::string("malformed record: ") + e.what());
    } catch (const Error& e) {
      throw LineError(ErrorKind::kValidation, line_no, e.what());
    }
  }
  return out;
}

std::string ManifestPathFor(const std::string& dataset_path) {
  std::filesystem::path p(dataset_path);
  return (p.parent_path() / (p.stem().string() + ".manifest.json")).string();
}

std::string EmitDataset(const std::vector<SftExample>& examples, const std::string& path,
                        const TrainManifest& manifest) {
  WriteFile(path, SerializeDataset(examples));
  const auto manifest_path = ManifestPathFor(path);
  WriteFile(manifest_path, manifest.ToJson().dump(2) + "\n");
  return manifest_path;
}

DatasetSplit SplitHoldout(const std::vector<SftExample>& examples, double fraction,
                          std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::kValidation, "held-out fraction must be in [0, 1)");
  }
  std::vector<std::string> ids;
  for (const auto& e : examples) {
    if (std::find(ids.begin(), ids.end(), e.dialogue_id) == ids.end()) ids.push_back(e.dialogue_id);
  }
  std::sort(ids.begin(), ids.end());
  SplitMix64 rng(seed);
  Shuffle(ids, rng);
  const auto n_held = static_cast<std::size_t>(fraction * static_cast<double>(ids.size()));
  const std::set<std::string> held(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_held));
  DatasetSplit split;
  for (const auto& e : examples) {
    (held.contains(e.dialogue_id) ? split.held_out : split.train).push_back(e);
  }
  return split;
}

}  // namespace copforge
