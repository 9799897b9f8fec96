# Copyright 2026 The CopForge Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Python bindings for the copforge pipeline."""

import json

from . import _core
from ._core import CopforgeError

__all__ = [
    "CopforgeError",
    "parse_corpus",
    "count_contexts",
    "render_cop_prompt",
    "parse_cop",
    "serialize_cop",
    "trim_to_budget",
    "build_dataset",
    "parse_generation",
    "render_baseline_prompt",
    "render_judge_prompt",
    "parse_judge_scores",
    "welch_t_test",
    "pairwise_agreement",
    "build_report",
    "presentation_plan",
]


def _jsonl(records):
    if isinstance(records, str):
        return records
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


def _context(turns, dialogue_id="adhoc", target_turn_index=None):
    ctx = {"dialogue_id": dialogue_id, "turns": list(turns)}
    if target_turn_index is not None:
        ctx["target_turn_index"] = target_turn_index
    return json.dumps(ctx, ensure_ascii=False)


def parse_corpus(records, strict=False):
    """Validates a corpus and returns it as a list of dialogue dicts."""
    out = _core.parse_corpus(_jsonl(records), strict)
    return [json.loads(line) for line in out.splitlines() if line]


def count_contexts(records):
    return _core.count_contexts(_jsonl(records))


def render_cop_prompt(approach, turns, dialogue_id="adhoc"):
    return _core.render_cop_prompt(approach, _context(turns, dialogue_id))


def parse_cop(approach, text, strict_header=False):
    return json.loads(_core.parse_cop(approach, text, strict_header))


def serialize_cop(approach, dimensions):
    return _core.serialize_cop(approach, json.dumps(dimensions, ensure_ascii=False))


def trim_to_budget(turns, target, budget):
    return json.loads(_core.trim_to_budget(json.dumps(list(turns), ensure_ascii=False), target, budget))


def build_dataset(mode, records, budget=4096):
    """Builds SFT examples from annotated turns (or a corpus for mode="naive")."""
    out = _core.build_dataset(mode, _jsonl(records), budget)
    return [json.loads(line) for line in out.splitlines() if line]


def parse_generation(variant, text):
    return json.loads(_core.parse_generation(variant, text))


def render_baseline_prompt(turns, dialogue_id="adhoc"):
    return _core.render_baseline_prompt(_context(turns, dialogue_id))


def render_judge_prompt(turns, response, dialogue_id="adhoc"):
    return _core.render_judge_prompt(_context(turns, dialogue_id), response)


def parse_judge_scores(text):
    return json.loads(_core.parse_judge_scores(text))


def welch_t_test(a, b):
    return json.loads(_core.welch_t_test(list(map(float, a)), list(map(float, b))))


def pairwise_agreement(ratings):
    return _core.pairwise_agreement(_jsonl(ratings))


def build_report(ratings, empathy=None):
    return json.loads(_core.build_report(_jsonl(ratings), _jsonl(empathy) if empathy else ""))


def presentation_plan(utterance_ids, sources, seed):
    return json.loads(_core.presentation_plan(list(utterance_ids), list(sources), seed))
