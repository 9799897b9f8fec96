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
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "copforge/dialogue.hpp"
#include "copforge/error.hpp"
#include "copforge/gateway.hpp"

namespace copforge {

// The psychotherapy approaches whose analyses make up a Chain of
// Psychotherapies. Adding an approach means extending this enum and the
// schema table in cop.cpp.
enum class Approach { kCbt, kPct, kSfbt };

inline constexpr std::array<Approach, 3> kAllApproaches = {Approach::kCbt, Approach::kPct,
                                                           Approach::kSfbt};

struct ApproachSchema {
  Approach approach;
  std::string_view code;       // "CBT"
  std::string_view full_name;  // "Cognitive Behavioural Therapy"
  std::string_view header;     // "[Cognitive Behavioural Therapy Analysis]"
  std::vector<std::string_view> dimensions;
  // Accepted at parse time in addition to `header`.
  std::vector<std::string_view> header_synonyms;
  // Per-dimension synonyms, same order as `dimensions`.
  std::vector<std::vector<std::string_view>> dimension_synonyms;
};

const ApproachSchema& SchemaOf(Approach a);
std::string_view ApproachCode(Approach a);
std::optional<Approach> ParseApproachCode(std::string_view code);

enum class AnalysisSource { kAnnotated, kModelGenerated };

// One approach's structured analysis. Dimension texts are single-line,
// trimmed and non-empty; the key set equals the approach's dimension list.
struct CoPAnalysis {
  Approach approach = Approach::kCbt;
  std::vector<std::pair<std::string, std::string>> dimensions;  // schema order
  AnalysisSource source = AnalysisSource::kAnnotated;

  const std::string* Find(std::string_view dimension) const;
  void Validate() const;

  nlohmann::json DimensionsJson() const;
  static CoPAnalysis FromDimensionsJson(Approach a, const nlohmann::json& j,
                                        AnalysisSource source = AnalysisSource::kAnnotated);

  friend bool operator==(const CoPAnalysis&, const CoPAnalysis&) = default;
};

// Builds an analysis from texts given in schema order.
CoPAnalysis MakeAnalysis(Approach a, const std::vector<std::string>& texts,
                         AnalysisSource source = AnalysisSource::kAnnotated);

std::string RenderCopPrompt(Approach a, const DialogueContext& ctx);

// Appended to the prompt for the single corrective re-prompt.
extern const std::string_view kCorrectiveSuffix;

struct CopParseOptions {
  bool strict_header = false;
};

// Parses the starred-dimension format. Throws Error(kFormat).
CoPAnalysis ParseCop(Approach a, std::string_view text, CopParseOptions options = {});

// Returns the approach whose header (or synonym) appears on `line`.
std::optional<Approach> DetectHeader(std::string_view line);

// Header line followed by one "*Dimension: text" line per dimension.
std::string SerializeCop(const CoPAnalysis& a);

struct AnnotatedTurn {
  DialogueContext context;
  std::string response;
  std::map<Approach, CoPAnalysis> analyses;

  bool complete() const { return analyses.size() == kAllApproaches.size(); }
  nlohmann::json ToJson() const;
  static AnnotatedTurn FromJson(const nlohmann::json& j);
};

struct AnnotationOptions {
  std::string model_id = "gpt-3.5-turbo";
  double temperature = kAnnotationTemperature;
  int max_output_units = kDefaultMaxOutputUnits;
  CopParseOptions parse;
  CachePolicy cache_policy = CachePolicy::kReadWrite;
};

// Raised when an approach's output stays malformed after the corrective
// re-prompt. `raw()` holds the last backend text.
class AnnotationError : public Error {
 public:
  AnnotationError(Approach a, std::string utterance_id, std::string reason, std::string raw);
  Approach approach() const { return approach_; }
  const std::string& raw() const { return raw_; }

 private:
  Approach approach_;
  std::string raw_;
};

CoPAnalysis AnnotateApproach(Approach a, const DialogueContext& ctx, Gateway& gateway,
                             const AnnotationOptions& options = {});

AnnotatedTurn AnnotateTurn(const DialogueContext& ctx, std::string response, Gateway& gateway,
                           const AnnotationOptions& options = {});

struct AnnotationFailure {
  std::string utterance_id;
  std::string approach;
  std::string reason;
  std::string raw;
};

struct AnnotationReport {
  std::size_t contexts = 0;
  std::size_t tasks = 0;
  std::size_t succeeded_turns = 0;
  std::size_t failed_turns = 0;
  std::vector<AnnotationFailure> failures;
  std::int64_t logical_requests = 0;
  std::int64_t backend_calls = 0;
  std::int64_t cache_hits = 0;

  double cache_hit_ratio() const;
  nlohmann::json ToJson() const;
};

struct AnnotationRun {
  std::vector<AnnotatedTurn> turns;
  AnnotationReport report;
};

// Fans (context x approach) tasks out over `parallelism` workers. Output
// order is dialogue order then turn order. Throws only when every turn fails.
AnnotationRun AnnotateCorpus(const std::vector<Dialogue>& corpus, Gateway& gateway,
                             std::size_t parallelism, const AnnotationOptions& options = {});

std::string SerializeAnnotated(const std::vector<AnnotatedTurn>& turns);
std::vector<AnnotatedTurn> ParseAnnotated(std::string_view content);

}  // namespace copforge
