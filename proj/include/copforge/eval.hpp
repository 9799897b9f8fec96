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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "copforge/dialogue.hpp"
#include "copforge/gateway.hpp"
#include "copforge/source.hpp"

namespace copforge {

// ---------------------------------------------------------------------------
// Judge-model empathy scoring

struct EmpathyScores {
  int emotional_reaction = 1;
  int interpretation = 1;
  int exploration = 1;
  std::string reasons;

  friend bool operator==(const EmpathyScores&, const EmpathyScores&) = default;
};

using TableKey = std::pair<std::string, SourceVariant>;  // (utterance id, source)

// At most one row per (utterance, source).
class EmpathyTable {
 public:
  // Throws Error(kValidation) on a duplicate key or a score outside 1..3.
  void Insert(std::string utterance_id, SourceVariant source, EmpathyScores scores);
  const EmpathyScores* Find(const std::string& utterance_id, SourceVariant source) const;

  const std::map<TableKey, EmpathyScores>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

 private:
  std::map<TableKey, EmpathyScores> rows_;
};

std::string RenderJudgePrompt(const DialogueContext& ctx, std::string_view response);

// Parses "Emotional Feedback: n; Understanding: n; Exploration: n; Scoring
// Reasons: ..." in any order. Throws Error(kFormat).
EmpathyScores ParseJudgeScores(std::string_view text);

struct JudgeItem {
  DialogueContext context;
  SourceVariant source = SourceVariant::kGroundTruth;
  std::string response;
};

struct JudgeOptions {
  std::string model_id = "gpt-4";
  double temperature = kJudgeTemperature;
  int max_output_units = kDefaultMaxOutputUnits;
  std::size_t parallelism = 4;
  // Fraction of failed items above which the run is an error.
  double max_failure_rate = 0.1;
  CachePolicy cache_policy = CachePolicy::kReadWrite;
};

struct JudgeRun {
  EmpathyTable table;
  std::vector<std::pair<TableKey, std::string>> failures;
  std::int64_t backend_calls = 0;
  std::int64_t cache_hits = 0;
};

JudgeRun JudgeCorpus(const std::vector<JudgeItem>& items, Gateway& gateway,
                     const JudgeOptions& options = {});

// ---------------------------------------------------------------------------
// Table statistics

struct DimensionSummary {
  double er = 0, ip = 0, ex = 0, average = 0;
  std::size_t n = 0;         // rows (means) or shared utterances (MSE)
  std::size_t excluded = 0;  // MSE only: source rows without a ground-truth partner
};

DimensionSummary DimensionMeans(const EmpathyTable& table, SourceVariant source);
DimensionSummary MseVsGroundTruth(const EmpathyTable& table, SourceVariant source);

struct RatingRecord {
  std::string utterance_id;
  std::string evaluator_id;
  SourceVariant source = SourceVariant::kGroundTruth;
  int score = 1;

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

// (utterance id, source) -> displayed response length.
using LengthMap = std::map<TableKey, std::size_t>;

struct RatingSummary {
  double avg_score = 0;
  std::optional<double> avg_length;
  double satisfaction_rate = 0;
  std::size_t n = 0;
};

RatingSummary SummarizeRatings(std::span<const RatingRecord> ratings, const LengthMap& lengths,
                               SourceVariant source);

// Fraction of unordered source pairs on which the two evaluators of an
// utterance order the responses the same way (<, =, >).
double PairwiseAgreement(std::span<const RatingRecord> ratings);

struct TTestResult {
  double t = 0;
  double df = 0;
  double p_value = 1;
  int stars = 0;  // 3: p<0.01, 2: p<0.05, 1: p<0.1

  std::string Formatted() const;  // "t = 4.66***"
};

int StarsFor(double p_value);

// Welch's unequal-variance two-sample t-test with a two-sided p-value.
TTestResult WelchTTest(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Blind presentation

struct PresentationPlan {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::vector<SourceVariant>>> orders;

  const std::vector<SourceVariant>* OrderFor(const std::string& utterance_id) const;
  nlohmann::json ToJson() const;
  static PresentationPlan FromJson(const nlohmann::json& j);
};

// Each utterance gets an independent uniform permutation derived from
// (seed, utterance id), so an utterance's order does not depend on which
// other utterances are in the plan.
PresentationPlan BuildPresentationPlan(const std::vector<std::string>& utterance_ids,
                                       std::span<const SourceVariant> sources, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files and reports

std::vector<RatingRecord> ParseRatings(std::string_view content);
std::string SerializeRatings(std::span<const RatingRecord> ratings);

EmpathyTable ParseEmpathyTable(std::string_view content);
std::string SerializeEmpathyTable(const EmpathyTable& table);

struct StatsInputs {
  std::vector<RatingRecord> ratings;
  std::optional<EmpathyTable> empathy;
  LengthMap lengths;
  std::vector<SourceVariant> sources{kAllSources.begin(), kAllSources.end()};
};

// Tables of per-source human ratings, t-tests, empathy means and MSE.
nlohmann::json BuildReport(const StatsInputs& inputs);
std::string RenderReportText(const nlohmann::json& report);

}  // namespace copforge
