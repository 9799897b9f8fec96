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

#include <array>
#include <optional>
#include <string_view>

#include "copforge/cop.hpp"

namespace copforge {

// The seven counselor response sources compared in evaluation.
enum class SourceVariant {
  kMixed,
  kCbtOnly,
  kPctOnly,
  kSfbtOnly,
  kNaive,
  kPromptedBaseline,
  kGroundTruth,
};

inline constexpr std::array<SourceVariant, 7> kAllSources = {
    SourceVariant::kMixed,   SourceVariant::kCbtOnly,          SourceVariant::kPctOnly,
    SourceVariant::kSfbtOnly, SourceVariant::kNaive, SourceVariant::kPromptedBaseline,
    SourceVariant::kGroundTruth};

// Machine name used in files and the HTTP API ("mixed", "cbt", ...).
std::string_view SourceName(SourceVariant v);
// Human-facing table label ("PsyMix", "CBT CoP", ...).
std::string_view SourceLabel(SourceVariant v);
std::optional<SourceVariant> ParseSource(std::string_view name);

// Variants whose backend emits an analysis before the response.
bool IsCopVariant(SourceVariant v);
// The approach a single-CoP variant was trained on.
std::optional<Approach> TrainedApproach(SourceVariant v);

}  // namespace copforge
