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

#include "copforge/source.hpp"

#include "copforge/text.hpp"

namespace copforge {

std::string_view SourceName(SourceVariant v) {
  switch (v) {
    case SourceVariant::kMixed: return "mixed";
    case SourceVariant::kCbtOnly: return "cbt";
    case SourceVariant::kPctOnly: return "pct";
    case SourceVariant::kSfbtOnly: return "sfbt";
    case SourceVariant::kNaive: return "naive";
    case SourceVariant::kPromptedBaseline: return "baseline";
    case SourceVariant::kGroundTruth: return "ground_truth";
  }
  return "unknown";
}

std::string_view SourceLabel(SourceVariant v) {
  switch (v) {
    case SourceVariant::kMixed: return "PsyMix";
    case SourceVariant::kCbtOnly: return "CBT CoP";
    case SourceVariant::kPctOnly: return "PCT CoP";
    case SourceVariant::kSfbtOnly: return "SFBT CoP";
    case SourceVariant::kNaive: return "naive";
    case SourceVariant::kPromptedBaseline: return "ChatGPT";
    case SourceVariant::kGroundTruth: return "ground truth";
  }
  return "unknown";
}

std::optional<SourceVariant> ParseSource(std::string_view name) {
  for (auto v : kAllSources) {
    if (text::EqualsIgnoreCase(name, SourceName(v)) || text::EqualsIgnoreCase(name, SourceLabel(v))) {
      return v;
    }
  }
  if (text::EqualsIgnoreCase(name, "psymix")) return SourceVariant::kMixed;
  if (text::EqualsIgnoreCase(name, "chatgpt")) return SourceVariant::kPromptedBaseline;
  if (text::EqualsIgnoreCase(name, "ground-truth")) return SourceVariant::kGroundTruth;
  return std::nullopt;
}

bool IsCopVariant(SourceVariant v) {
  return v == SourceVariant::kMixed || TrainedApproach(v).has_value();
}

std::optional<Approach> TrainedApproach(SourceVariant v) {
  switch (v) {
    case SourceVariant::kCbtOnly: return Approach::kCbt;
    case SourceVariant::kPctOnly: return Approach::kPct;
    case SourceVariant::kSfbtOnly: return Approach::kSfbt;
    default: return std::nullopt;
  }
}

}  // namespace copforge
