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

#include "copforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "copforge/error.hpp"
#include "copforge/parallel.hpp"
#include "copforge/random.hpp"
#include "copforge/text.hpp"

namespace copforge {

using nlohmann::json;

namespace {

void CheckScore(int score, int lo, int hi) {
  if (score < lo || score > hi) {
    throw Error(ErrorKind::kFormat, "score out of range: " + std::to_string(score) + " not in " +
                                        std::to_string(lo) + "-" + std::to_string(hi));
  }
}

std::string SourceKeyName(SourceVariant v) { return std::string(SourceName(v)); }

SourceVariant RequireSource(const std::string& name) {
  auto v = ParseSource(name);
  if (!v) throw Error(ErrorKind::kValidation, "unknown source '" + name + "'");
  return *v;
}

}  // namespace

void EmpathyTable::Insert(std::string utterance_id, SourceVariant source, EmpathyScores scores) {
  CheckScore(scores.emotional_reaction, 1, 3);
  CheckScore(scores.interpretation, 1, 3);
  CheckScore(scores.exploration, 1, 3);
  TableKey key{std::move(utterance_id), source};
  if (rows_.contains(key)) {
    throw Error(ErrorKind::kValidation, "duplicate empathy row for (" + key.first + ", " +
                                            SourceKeyName(source) + ")");
  }
  rows_.emplace(std::move(key), std::move(scores));
}

const EmpathyScores* EmpathyTable::Find(const std::string& utterance_id,
                                        SourceVariant source) const {
  auto it = rows_.find(TableKey{utterance_id, source});
  return it == rows_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// Judge prompt and parsing

std::string RenderJudgePrompt(const DialogueContext& ctx, std::string_view response) {
  std::string out =
      "You are an expert in psychology. I will provide you with a history of a psychological "
      "counseling dialogue and need you to evaluate the empathetic ability of the counselor "
      "portrayed in generating responses.\n\n"
      "Here are the scoring criteria. The evaluation of empathetic ability will be scored around "
      "three dimensions: emotional feedback, understanding, and exploration. Each dimension is "
      "set to a score of 1-3, where 1 represents the worst and 3 represents the best. Different "
      "responses can have the same scores, but there should be differentiation as much as "
      "possible.\n\n"
      "Emotional Feedback mainly reflects the warmth, sympathy, and concern expressed in the "
      "counselor's replies.\n"
      "- 1 point: No emotional feedback provided.\n"
      "- 2 points: Expresses support but does not explicitly indicate emotions (e.g., everything "
      "will get better).\n"
      "- 3 points: Shows empathy towards the seeker, specifically indicating emotions (e.g., I "
      "feel sorry for you).\n\n"
      "Understanding refers to the counselor inferring the seeker's feelings and experiences and "
      "expressing understanding.\n"
      "- 1 point: No expression of understanding.\n"
      "- 2 points: Expresses understanding but without specific content (e.g., I understand how "
      "you feel).\n"
      "- 3 points: Accurately and specifically indicates inferred content (e.g., you must have "
      "been very sad at that time) or shares similar experiences (e.g., I sometimes feel very "
      "anxious too).\n\n"
      "Exploration refers to the counselor expressing interest in the seeker's experiences and "
      "feelings and gently probing.\n"
      "- 1 point: No interest expressed in the seeker's reply.\n"
      "- 2 points: Expresses interest but in a general manner (e.g., what happened?).\n"
      "- 3 points: Expresses a specific desire to explore some aspect of the seeker's experience "
      "(e.g., do you feel lonely now?).\n\n"
      "Taking into account emotional feedback, understanding, and exploration, please score the "
      "response and explain the reasons. The output format is:\n\n"
      "Scoring Reasons: [Reasons];\n"
      "Emotional Feedback: [Score];\n"
      "Understanding: [Score];\n"
      "Exploration: [Score];\n\n"
      "Dialogue history:\n";
  out += RenderTranscript(ctx);
  out += "\n\nCounselor response to evaluate:\ncounselor: ";
  out += response;
  return out;
}

namespace {

enum class JudgeLabel { kEmotional, kUnderstanding, kExploration, kReasons };

std::optional<JudgeLabel> MatchJudgeLabel(std::string_view name) {
  static const std::vector<std::pair<std::string_view, JudgeLabel>> kLabels = {
      {"emotional feedback", JudgeLabel::kEmotional},
      {"emotional reaction", JudgeLabel::kEmotional},
      {"emotional reactions", JudgeLabel::kEmotional},
      {"understanding", JudgeLabel::kUnderstanding},
      {"interpretation", JudgeLabel::kUnderstanding},
      {"interpretations", JudgeLabel::kUnderstanding},
      {"exploration", JudgeLabel::kExploration},
      {"explorations", JudgeLabel::kExploration},
      {"scoring reasons", JudgeLabel::kReasons},
      {"scoring reason", JudgeLabel::kReasons},
      {"reasons", JudgeLabel::kReasons},
      {"reason", JudgeLabel::kReasons},
  };
  // Tolerate markdown emphasis and brackets around labels.
  std::string cleaned;
  for (char c : text::Trim(name)) {
    if (c == '*' || c == '[' || c == ']' || c == '#') continue;
    cleaned += c;
  }
  const auto trimmed = text::Trim(cleaned);
  for (const auto& [label, kind] : kLabels) {
    if (text::EqualsIgnoreCase(trimmed, label)) return kind;
  }
  return std::nullopt;
}

int ParseScoreValue(std::string_view raw, std::string_view label) {
  std::string digits;
  for (char c : text::Trim(raw)) {
    if (c == '[' || c == ']' || c == '*' || c == ' ') continue;
    digits += c;
  }
  // Accept "2", "2/3" and "2 points".
  std::size_t len = 0;
  while (len < digits.size() && (std::isdigit(static_cast<unsigned char>(digits[len])) ||
                                 (len == 0 && digits[0] == '-'))) {
    ++len;
  }
  if (len == 0 || (len == 1 && digits[0] == '-')) {
    throw Error(ErrorKind::kFormat, "non-numeric score for " + std::string(label));
  }
  const int value = std::stoi(digits.substr(0, len));
  CheckScore(value, 1, 3);
  return value;
}

}  // namespace

EmpathyScores ParseJudgeScores(std::string_view input) {
  std::optional<int> scores[3];
  std::optional<std::string> reasons;
  bool in_reasons = false;

  std::vector<std::string_view> segments;
  for (auto line : text::SplitLines(input)) {
    std::size_t start = 0;
    while (start <= line.size()) {
      auto end = line.find(';', start);
      if (end == std::string_view::npos) end = line.size();
      segments.push_back(line.substr(start, end - start));
      if (end == line.size()) break;
      start = end + 1;
    }
  }

  for (auto seg : segments) {
    const auto t = text::Trim(seg);
    if (t.empty()) continue;
    std::optional<JudgeLabel> kind;
    std::string_view value;
    if (auto colon = t.find(':'); colon != std::string_view::npos) {
      kind = MatchJudgeLabel(t.substr(0, colon));
      value = t.substr(colon + 1);
    }
    if (!kind) {
      // Reasons may themselves contain semicolons.
      if (in_reasons) {
        *reasons += "; ";
        *reasons += t;
      }
      continue;
    }
    if (*kind == JudgeLabel::kReasons) {
      std::string v(text::Trim(value));
      if (v.size() >= 2 && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
      reasons = v;
      in_reasons = true;
      continue;
    }
    in_reasons = false;
    const auto idx = static_cast<std::size_t>(*kind);
    static constexpr std::string_view kNames[] = {"Emotional Feedback", "Understanding",
                                                  "Exploration"};
    const int score = ParseScoreValue(value, kNames[idx]);
    if (scores[idx] && *scores[idx] != score) {
      throw Error(ErrorKind::kFormat, "conflicting values for " + std::string(kNames[idx]));
    }
    scores[idx] = score;
  }

  static constexpr std::string_view kNames[] = {"Emotional Feedback", "Understanding",
                                                "Exploration"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!scores[i]) throw Error(ErrorKind::kFormat, "missing label " + std::string(kNames[i]));
  }
  return EmpathyScores{*scores[0], *scores[1], *scores[2], reasons.value_or("")};
}

JudgeRun JudgeCorpus(const std::vector<JudgeItem>& items, Gateway& gateway,
                     const JudgeOptions& options) {
  std::set<TableKey> keys;
  for (const auto& item : items) {
    if (!keys.insert({UtteranceId(item.context), item.source}).second) {
      throw Error(ErrorKind::kValidation, "duplicate judge item for " + UtteranceId(item.context));
    }
  }
  std::vector<std::optional<EmpathyScores>> scores(items.size());
  std::vector<std::string> errors(items.size());
  const auto before = gateway.stats();
  ParallelFor(items.size(), options.parallelism, [&](std::size_t i) {
    const auto& item = items[i];
    try {
      auto req = ChatRequest::SingleUser(options.model_id,
                                         RenderJudgePrompt(item.context, item.response),
                                         options.temperature, options.max_output_units);
      scores[i] = ParseJudgeScores(gateway.CachedComplete(req, options.cache_policy).content);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  const auto after = gateway.stats();

  JudgeRun run;
  run.backend_calls = after.backend_calls - before.backend_calls;
  run.cache_hits = after.cache_hits - before.cache_hits;
  for (std::size_t i = 0; i < items.size(); ++i) {
    TableKey key{UtteranceId(items[i].context), items[i].source};
    if (scores[i]) {
      run.table.Insert(key.first, key.second, std::move(*scores[i]));
    } else {
      run.failures.emplace_back(std::move(key), errors[i]);
    }
  }
  if (!items.empty()) {
    const double rate = static_cast<double>(run.failures.size()) / static_cast<double>(items.size());
    if (rate > options.max_failure_rate) {
      throw Error(ErrorKind::kBackend, "judge failure rate " + std::to_string(rate) +
                                           " exceeds ceiling; first failure: " +
                                           run.failures.front().second);
    }
  }
  return run;
}

// ---------------------------------------------------------------------------
// Statistics

DimensionSummary DimensionMeans(const EmpathyTable& table, SourceVariant source) {
  std::int64_t er = 0, ip = 0, ex = 0;
  std::size_t n = 0;
  for (const auto& [key, s] : table.rows()) {
    if (key.second != source) continue;
    er += s.emotional_reaction;
    ip += s.interpretation;
    ex += s.exploration;
    ++n;
  }
  if (n == 0) {
    throw Error(ErrorKind::kStatistics, "no empathy rows for source " + SourceKeyName(source));
  }
  DimensionSummary out;
  const auto dn = static_cast<double>(n);
  out.er = static_cast<double>(er) / dn;
  out.ip = static_cast<double>(ip) / dn;
  out.ex = static_cast<double>(ex) / dn;
  out.average = (out.er + out.ip + out.ex) / 3.0;
  out.n = n;
  return out;
}

DimensionSummary MseVsGroundTruth(const EmpathyTable& table, SourceVariant source) {
  std::int64_t er = 0, ip = 0, ex = 0;
  std::size_t n = 0, excluded = 0;
  for (const auto& [key, s] : table.rows()) {
    if (key.second != source) continue;
    const auto* gt = table.Find(key.first, SourceVariant::kGroundTruth);
    if (!gt) {
      ++excluded;
      continue;
    }
    auto sq = [](int a, int b) { return std::int64_t{(a - b) * (a - b)}; };
    er += sq(s.emotional_reaction, gt->emotional_reaction);
    ip += sq(s.interpretation, gt->interpretation);
    ex += sq(s.exploration, gt->exploration);
    ++n;
  }
  if (n == 0) {
    throw Error(ErrorKind::kStatistics,
                "no utterances shared between " + SourceKeyName(source) + " and ground truth");
  }
  DimensionSummary out;
  const auto dn = static_cast<double>(n);
  out.er = static_cast<double>(er) / dn;
  out.ip = static_cast<double>(ip) / dn;
  out.ex = static_cast<double>(ex) / dn;
  out.average = (out.er + out.ip + out.ex) / 3.0;
  out.n = n;
  out.excluded = excluded;
  return out;
}

RatingSummary SummarizeRatings(std::span<const RatingRecord> ratings, const LengthMap& lengths,
                               SourceVariant source) {
  std::int64_t sum = 0;
  std::size_t n = 0, satisfied = 0;
  for (const auto& r : ratings) {
    if (r.source != source) continue;
    sum += r.score;
    satisfied += r.score >= 4 ? 1 : 0;
    ++n;
  }
  if (n == 0) throw Error(ErrorKind::kStatistics, "no ratings for source " + SourceKeyName(source));
  RatingSummary out;
  out.n = n;
  out.avg_score = static_cast<double>(sum) / static_cast<double>(n);
  out.satisfaction_rate = static_cast<double>(satisfied) / static_cast<double>(n);
  std::size_t len_sum = 0, len_n = 0;
  for (const auto& [key, len] : lengths) {
    if (key.second != source) continue;
    len_sum += len;
    ++len_n;
  }
  if (len_n > 0) out.avg_length = static_cast<double>(len_sum) / static_cast<double>(len_n);
  return out;
}

double PairwiseAgreement(std::span<const RatingRecord> ratings) {
  // utterance -> evaluator -> source -> score
  std::map<std::string, std::map<std::string, std::map<SourceVariant, int>>> grouped;
  for (const auto& r : ratings) {
    auto& by_source = grouped[r.utterance_id][r.evaluator_id];
    if (!by_source.emplace(r.source, r.score).second) {
      throw Error(ErrorKind::kStatistics, "duplicate rating by " + r.evaluator_id + " for (" +
                                              r.utterance_id + ", " + SourceKeyName(r.source) + ")");
    }
  }
  std::size_t matched = 0, total = 0;
  for (const auto& [utterance, evaluators] : grouped) {
    if (evaluators.size() != 2) {
      throw Error(ErrorKind::kStatistics, "utterance " + utterance + " has " +
                                              std::to_string(evaluators.size()) +
                                              " evaluators, expected 2");
    }
    const auto& a = evaluators.begin()->second;
    const auto& b = std::next(evaluators.begin())->second;
    if (a.size() != b.size() ||
        !std::equal(a.begin(), a.end(), b.begin(),
                    [](const auto& x, const auto& y) { return x.first == y.first; })) {
      throw Error(ErrorKind::kStatistics,
                  "evaluators of utterance " + utterance + " rated different source sets");
    }
    std::vector<int> sa, sb;
    for (const auto& [_, s] : a) sa.push_back(s);
    for (const auto& [_, s] : b) sb.push_back(s);
    auto relation = [](int x, int y) { return (x > y) - (x < y); };
    for (std::size_t i = 0; i < sa.size(); ++i) {
      for (std::size_t j = i + 1; j < sa.size(); ++j) {
        ++total;
        if (relation(sa[i], sa[j]) == relation(sb[i], sb[j])) ++matched;
      }
    }
  }
  if (total == 0) throw Error(ErrorKind::kStatistics, "no response pairs to compare");
  return static_cast<double>(matched) / static_cast<double>(total);
}

int StarsFor(double p) {
  if (p < 0.01) return 3;
  if (p < 0.05) return 2;
  if (p < 0.1) return 1;
  return 0;
}

std::string TTestResult::Formatted() const {
  std::ostringstream os;
  os << "t = " << std::fixed << std::setprecision(2) << t << std::string(stars, '*');
  return os.str();
}

TTestResult WelchTTest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorKind::kStatistics, "t-test needs at least 2 observations per sample");
  }
  auto moments = [](std::span<const double> x) {
    double mean = 0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double qa = va / na;
  const double qb = vb / nb;
  const double se2 = qa + qb;
  TTestResult out;
  if (se2 == 0.0) {
    if (ma != mb) throw Error(ErrorKind::kStatistics, "infinite statistic: zero variance, unequal means");
    out.t = 0.0;
    out.df = na + nb - 2.0;
    out.p_value = 1.0;
    out.stars = 0;
    return out;
  }
  out.t = (ma - mb) / std::sqrt(se2);
  out.df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  const boost::math::students_t dist(out.df);
  out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(out.t)));
  out.stars = StarsFor(out.p_value);
  return out;
}

// ---------------------------------------------------------------------------
// Presentation plan

const std::vector<SourceVariant>* PresentationPlan::OrderFor(const std::string& id) const {
  for (const auto& [utterance, order] : orders) {
    if (utterance == id) return &order;
  }
  return nullptr;
}

json PresentationPlan::ToJson() const {
  json items = json::array();
  for (const auto& [utterance, order] : orders) {
    json o = json::array();
    for (auto v : order) o.push_back(SourceName(v));
    items.push_back({{"utterance_id", utterance}, {"order", o}});
  }
  return {{"seed", seed}, {"utterances", items}};
}

PresentationPlan PresentationPlan::FromJson(const json& j) {
  PresentationPlan plan;
  plan.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& item : j.at("utterances")) {
    std::vector<SourceVariant> order;
    for (const auto& s : item.at("order")) order.push_back(RequireSource(s.get<std::string>()));
    plan.orders.emplace_back(item.at("utterance_id").get<std::string>(), std::move(order));
  }
  return plan;
}

PresentationPlan BuildPresentationPlan(const std::vector<std::string>& utterance_ids,
                                       std::span<const SourceVariant> sources, std::uint64_t seed) {
  if (sources.size() < 2) throw Error(ErrorKind::kValidation, "a plan needs at least 2 sources");
  PresentationPlan plan;
  plan.seed = seed;
  for (const auto& id : utterance_ids) {
    SplitMix64 rng(SplitMix64(seed).Next() ^ Fnv1a64(id));
    std::vector<SourceVariant> order(sources.begin(), sources.end());
    Shuffle(order, rng);
    plan.orders.emplace_back(id, std::move(order));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Files

namespace {

template <typename Fn>
void ForEachJsonLine(std::string_view content, Fn&& fn) {
  std::size_t line_no = 0;
  for (auto line : text::SplitLines(content)) {
    ++line_no;
    if (text::Trim(line).empty()) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw LineError(ErrorKind::kValidation, line_no, std::string("malformed record: ") + e.what());
    } catch (const LineError&) {
      throw;
    } catch (const Error& e) {
      throw LineError(ErrorKind::kValidation, line_no, e.what());
    }
  }
}

}  // namespace

std::vector<RatingRecord> ParseRatings(std::string_view content) {
  std::vector<RatingRecord> out;
  ForEachJsonLine(content, [&](const json& j) {
    RatingRecord r;
    r.utterance_id = j.at("utterance_id").get<std::string>();
    r.evaluator_id = j.at("evaluator_id").get<std::string>();
    r.source = RequireSource(j.at("source").get<std::string>());
    r.score = j.at("score").get<int>();
    CheckScore(r.score, 1, 5);
    out.push_back(std::move(r));
  });
  return out;
}

std::string SerializeRatings(std::span<const RatingRecord> ratings) {
  std::string out;
  for (const auto& r : ratings) {
    out += json{{"utterance_id", r.utterance_id},
                {"evaluator_id", r.evaluator_id},
                {"source", SourceName(r.source)},
                {"score", r.score}}
               .dump();
    out += '\n';
  }
  return out;
}

EmpathyTable ParseEmpathyTable(std::string_view content) {
  EmpathyTable table;
  ForEachJsonLine(content, [&](const json& j) {
    EmpathyScores s{j.at("er").get<int>(), j.at("ip").get<int>(), j.at("ex").get<int>(),
                    j.value("reasons", "")};
    table.Insert(j.at("utterance_id").get<std::string>(),
                 RequireSource(j.at("source").get<std::string>()), std::move(s));
  });
  return table;
}

std::string SerializeEmpathyTable(const EmpathyTable& table) {
  std::string out;
  for (const auto& [key, s] : table.rows()) {
    out += json{{"utterance_id", key.first},
                {"source", SourceName(key.second)},
                {"er", s.emotional_reaction},
                {"ip", s.interpretation},
                {"ex", s.exploration},
                {"reasons", s.reasons}}
               .dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

json BuildReport(const StatsInputs& inputs) {
  json report = json::object();
  const auto& sources = inputs.sources;

  if (!inputs.ratings.empty()) {
    json rows = json::array();
    std::map<SourceVariant, std::vector<double>> pooled;
    for (const auto& r : inputs.ratings) pooled[r.source].push_back(r.score);
    for (auto v : sources) {
      if (!pooled.contains(v)) continue;
      const auto s = SummarizeRatings(inputs.ratings, inputs.lengths, v);
      rows.push_back({{"source", SourceName(v)},
                      {"label", SourceLabel(v)},
                      {"avg_score", s.avg_score},
                      {"avg_length", s.avg_length ? json(*s.avg_length) : json(nullptr)},
                      {"satisfaction_rate", s.satisfaction_rate},
                      {"n", s.n}});
    }
    json tests = json::array();
    for (std::size_t i = 0; i < sources.size(); ++i) {
      for (std::size_t j = i + 1; j < sources.size(); ++j) {
        if (!pooled.contains(sources[i]) || !pooled.contains(sources[j])) continue;
        json entry = {{"a", SourceName(sources[i])}, {"b", SourceName(sources[j])}};
        try {
          const auto t = WelchTTest(pooled[sources[i]], pooled[sources[j]]);
          entry.update({{"t", t.t},
                        {"df", t.df},
                        {"p_value", t.p_value},
                        {"stars", t.stars},
                        {"formatted", t.Formatted()}});
        } catch (const Error& e) {
          entry["error"] = e.what();
        }
        tests.push_back(std::move(entry));
      }
    }
    json human = {{"rows", rows}, {"t_tests", tests}};
    try {
      human["pairwise_agreement"] = PairwiseAgreement(inputs.ratings);
    } catch (const Error& e) {
      human["pairwise_agreement"] = nullptr;
      human["pairwise_agreement_error"] = e.what();
    }
    report["human"] = std::move(human);
  }

  if (inputs.empathy) {
    const auto& table = *inputs.empathy;
    std::set<SourceVariant> present;
    for (const auto& [key, _] : table.rows()) present.insert(key.second);
    json means = json::array();
    json mse = json::array();
    for (auto v : sources) {
      if (!present.contains(v)) continue;
      const auto m = DimensionMeans(table, v);
      means.push_back({{"source", SourceName(v)},
                       {"label", SourceLabel(v)},
                       {"er", m.er},
                       {"ip", m.ip},
                       {"ex", m.ex},
                       {"average", m.average},
                       {"n", m.n}});
      if (v == SourceVariant::kGroundTruth || !present.contains(SourceVariant::kGroundTruth)) continue;
      try {
        const auto e = MseVsGroundTruth(table, v);
        mse.push_back({{"source", SourceName(v)},
                       {"label", SourceLabel(v)},
                       {"er", e.er},
                       {"ip", e.ip},
                       {"ex", e.ex},
                       {"average", e.average},
                       {"n", e.n},
                       {"excluded", e.excluded}});
      } catch (const Error&) {
        // No shared utterances with ground truth; the row is omitted.
      }
    }
    report["empathy"] = {{"means", means}, {"mse", mse}};
  }
  return report;
}

namespace {

std::string Fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void RenderTable(std::ostringstream& os, const std::string& title,
                 const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = text::CountScalars(header[c]);
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], text::CountScalars(r[c]));
  }
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto pad = width[c] - text::CountScalars(cells[c]);
      if (c == 0) {
        os << cells[c] << std::string(pad, ' ');
      } else {
        os << "  " << std::string(pad, ' ') << cells[c];
      }
    }
    os << '\n';
  };
  os << title << '\n';
  line(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
  os << '\n';
}

}  // namespace

std::string RenderReportText(const json& report) {
  std::ostringstream os;
  if (report.contains("human")) {
    const auto& h = report["human"];
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : h["rows"]) {
      rows.push_back({r["label"].get<std::string>(), Fixed(r["avg_score"].get<double>(), 2),
                      r["avg_length"].is_null() ? "-" : Fixed(r["avg_length"].get<double>(), 2),
                      Fixed(100.0 * r["satisfaction_rate"].get<double>(), 1) + "%"});
    }
    RenderTable(os, "Human evaluation", {"Method", "Avg. score", "Avg. length", "Satisfaction rate"},
                rows);
    if (!h["pairwise_agreement"].is_null()) {
      os << "Pairwise agreement: " << Fixed(h["pairwise_agreement"].get<double>(), 3) << "\n\n";
    }
    std::vector<std::vector<std::string>> tests;
    for (const auto& t : h["t_tests"]) {
      const auto a = SourceLabel(*ParseSource(t["a"].get<std::string>()));
      const auto b = SourceLabel(*ParseSource(t["b"].get<std::string>()));
      tests.push_back({std::string(a) + " vs. " + std::string(b),
                       t.contains("formatted") ? t["formatted"].get<std::string>()
                                               : t["error"].get<std::string>()});
    }
    RenderTable(os, "Significance tests (Welch)", {"Comparing results", "t-test"}, tests);
  }
  if (report.contains("empathy")) {
    const auto& e = report["empathy"];
    auto dims = [](const json& rows, int digits) {
      std::vector<std::vector<std::string>> out;
      for (const auto& r : rows) {
        out.push_back({r["label"].get<std::string>(), Fixed(r["er"].get<double>(), digits),
                       Fixed(r["ip"].get<double>(), digits), Fixed(r["ex"].get<double>(), digits),
                       Fixed(r["average"].get<double>(), digits)});
      }
      return out;
    };
    RenderTable(os, "Empathy MSE vs ground truth", {"", "ER", "IP", "EX", "Average"},
                dims(e["mse"], 4));
    RenderTable(os, "Empathy means", {"", "ER", "IP", "EX", "Average"}, dims(e["means"], 4));
  }
  return os.str();
}

}  // namespace copforge
