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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "copforge/cop.hpp"
#include "copforge/dialogue.hpp"
#include "copforge/error.hpp"
#include "copforge/eval.hpp"
#include "copforge/runtime.hpp"
#include "copforge/sft.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace copforge;

namespace {

// Values cross the boundary as JSON text; the Python package decodes them.

Approach RequireApproach(const std::string& code) {
  auto a = ParseApproachCode(code);
  if (!a) throw Error(ErrorKind::kValidation, "unknown approach '" + code + "'");
  return *a;
}

SourceVariant RequireSource(const std::string& name) {
  auto v = ParseSource(name);
  if (!v) throw Error(ErrorKind::kValidation, "unknown source '" + name + "'");
  return *v;
}

DialogueContext ContextFrom(const std::string& context_json) {
  const auto j = json::parse(context_json);
  DialogueContext ctx;
  ctx.dialogue_id = j.value("dialogue_id", "adhoc");
  ctx.turns = TurnsFromJson(j.at("turns"), false);
  ctx.target_turn_index = j.contains("target_turn_index")
                              ? j["target_turn_index"].get<std::size_t>()
                              : ctx.turns.size();
  return ctx;
}

json AnalysisJson(const CoPAnalysis& a) {
  return {{"approach", ApproachCode(a.approach)}, {"dimensions", a.DimensionsJson()}};
}

std::string BuildDataset(const std::string& mode, const std::string& content, std::size_t budget) {
  SftOptions options;
  options.budget = budget;
  SftBuild build;
  if (mode == "naive") {
    build = BuildNaive(ParseCorpus(content), options);
  } else if (mode == "mixed") {
    build = BuildMixed(ParseAnnotated(content), options);
  } else {
    build = BuildSingle(ParseAnnotated(content), RequireApproach(mode), options);
  }
  return SerializeDataset(build.examples);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of copforge";

  static py::exception<Error> error_type(m, "CopforgeError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error_type.ptr(), (std::string(ErrorKindName(e.kind())) + ": " + e.what()).c_str());
    } catch (const json::exception& e) {
      PyErr_SetString(error_type.ptr(), (std::string("validation: ") + e.what()).c_str());
    }
  });

  m.def("parse_corpus", [](const std::string& content, bool strict) {
    return SerializeCorpus(ParseCorpus(content, ParseOptions{strict}));
  }, py::arg("content"), py::arg("strict") = false);

  m.def("count_contexts", [](const std::string& content) {
    return CountContexts(ParseCorpus(content));
  });

  m.def("render_cop_prompt", [](const std::string& approach, const std::string& context_json) {
    return RenderCopPrompt(RequireApproach(approach), ContextFrom(context_json));
  });

  m.def("parse_cop", [](const std::string& approach, const std::string& text, bool strict_header) {
    return AnalysisJson(ParseCop(RequireApproach(approach), text, {strict_header})).dump();
  }, py::arg("approach"), py::arg("text"), py::arg("strict_header") = false);

  m.def("serialize_cop", [](const std::string& approach, const std::string& dimensions_json) {
    return SerializeCop(CoPAnalysis::FromDimensionsJson(RequireApproach(approach),
                                                        json::parse(dimensions_json)));
  });

  m.def("trim_to_budget", [](const std::string& turns_json, const std::string& target, std::size_t budget) {
    return TurnsToJson(TrimToBudget(TurnsFromJson(json::parse(turns_json), false), target, budget)).dump();
  });

  m.def("build_dataset", &BuildDataset, py::arg("mode"), py::arg("content"),
        py::arg("budget") = kDefaultTokenBudget);

  m.def("parse_generation", [](const std::string& variant, const std::string& text) {
    const auto g = ParseGeneration(RequireSource(variant), text);
    return json{{"analysis", g.analysis ? AnalysisJson(*g.analysis) : json(nullptr)},
                {"response", g.response},
                {"analysis_missing", g.analysis_missing}}
        .dump();
  });

  m.def("render_baseline_prompt", [](const std::string& context_json) {
    return RenderBaselinePrompt(ContextFrom(context_json));
  });

  m.def("render_judge_prompt", [](const std::string& context_json, const std::string& response) {
    return RenderJudgePrompt(ContextFrom(context_json), response);
  });

  m.def("parse_judge_scores", [](const std::string& text) {
    const auto s = ParseJudgeScores(text);
    return json{{"emotional_reaction", s.emotional_reaction},
                {"interpretation", s.interpretation},
                {"exploration", s.exploration},
                {"reasons", s.reasons}}
        .dump();
  });

  m.def("welch_t_test", [](const std::vector<double>& a, const std::vector<double>& b) {
    const auto t = WelchTTest(a, b);
    return json{{"t", t.t}, {"df", t.df}, {"p_value", t.p_value}, {"stars", t.stars}}.dump();
  });

  m.def("pairwise_agreement", [](const std::string& ratings_jsonl) {
    return PairwiseAgreement(ParseRatings(ratings_jsonl));
  });

  m.def("build_report", [](const std::string& ratings_jsonl, const std::string& empathy_jsonl) {
    StatsInputs inputs;
    inputs.ratings = ParseRatings(ratings_jsonl);
    if (!empathy_jsonl.empty()) inputs.empathy = ParseEmpathyTable(empathy_jsonl);
    return BuildReport(inputs).dump();
  }, py::arg("ratings_jsonl"), py::arg("empathy_jsonl") = "");

  m.def("presentation_plan", [](const std::vector<std::string>& ids, const std::vector<std::string>& sources,
                                std::uint64_t seed) {
    std::vector<SourceVariant> vs;
    for (const auto& s : sources) vs.push_back(RequireSource(s));
    return BuildPresentationPlan(ids, vs, seed).ToJson().dump();
  });
}
