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

import json
import os
import socket
import subprocess
import time
import urllib.error
import urllib.request
from pathlib import Path

import pytest

BIN = os.environ.get("COPFORGE_BIN", "copforge")
FIXTURES = Path(os.environ.get("COPFORGE_FIXTURE_DIR", Path(__file__).resolve().parent.parent / "fixtures"))

CORPUS = [
    {"id": "d1", "turns": [
        {"role": "seeker", "text": "我最近总是睡不着"},
        {"role": "counselor", "text": "听起来你很辛苦，能说说发生了什么吗？"},
        {"role": "seeker", "text": "工作压力太大了"},
        {"role": "counselor", "text": "工作上具体有哪些让你担心的事情？"},
        {"role": "seeker", "text": "我怕做不好被批评"},
        {"role": "counselor", "text": "害怕被批评的感觉一定很难受。"}]},
    {"id": "d2", "turns": [
        {"role": "counselor", "text": "你好，今天想聊些什么？"},
        {"role": "seeker", "text": "我和家人吵架了"},
        {"role": "counselor", "text": "吵架之后你现在感觉怎么样？"},
        {"role": "seeker", "text": "很孤独"},
        {"role": "counselor", "text": "孤独的时候你通常会做什么？"}]},
    {"id": "d3", "turns": [
        {"role": "seeker", "text": "I failed my exam"},
        {"role": "seeker", "text": "and I don't know what to do"},
        {"role": "counselor", "text": "That sounds really disappointing."},
        {"role": "seeker", "text": "I feel tired of everything"},
        {"role": "counselor", "text": "What would help you rest a little?"}]},
]
CONTEXTS = 7

CBT = "[Cognitive Behavioural Therapy Analysis]\n*Event: {0}\n*Cognition: {0}\n*Behavior: {0}\n*Belief: {0}"
PCT = "[Person-Centered Therapy Analysis]\n*Emotion: {0}\n*Self-Awareness: {0}"
SFBT = "[Solution-Focused Brief Therapy Analysis]\n*Goal: {0}\n*Resource: {0}\n*Exception: {0}\n*Action: {0}"
JUDGE = "Scoring Reasons: {0};\nEmotional Feedback: {1};\nUnderstanding: {2};\nExploration: {3};"


def packed(template, i):
    return template.format("analysis %d" % i) + "\n\ncounselor: reply %d" % i


SCRIPT = {"rules": [
    {"contains": "[Cognitive Behavioural Therapy Analysis]", "replies": [CBT.format("cbt %d" % i) for i in range(3)]},
    {"contains": "[Person-Centered Therapy Analysis]", "replies": [PCT.format("pct %d" % i) for i in range(3)]},
    {"contains": "[Solution-Focused Brief Therapy Analysis]", "replies": [SFBT.format("sfbt %d" % i) for i in range(3)]},
    {"contains": "Each dimension is set to a score of 1-3",
     "replies": [JUDGE.format("r%d" % i, 1 + i % 3, 1 + (i + 1) % 3, 1 + (i + 2) % 3) for i in range(4)]},
    {"model": "gpt-3.5-turbo", "replies": ["counselor: baseline %d" % i for i in range(3)]},
    {"model": "psymix-mixed", "replies": [packed(t, i) for i, t in enumerate([CBT, PCT, SFBT])]},
    {"model": "psymix-cbt", "replies": [packed(CBT, i) for i in range(3)]},
    {"model": "psymix-pct", "replies": [packed(PCT, i) for i in range(3)]},
    {"model": "psymix-sfbt", "replies": [packed(SFBT, i) for i in range(3)]},
    {"model": "psymix-naive", "replies": ["plain %d" % i for i in range(3)]},
]}


def run(*args, check=True, env=None):
    proc = subprocess.run([BIN, *map(str, args)], capture_output=True, text=True, env=env)
    if check and proc.returncode != 0:
        raise AssertionError("exit %d\nstdout: %s\nstderr: %s" % (proc.returncode, proc.stdout, proc.stderr))
    return proc


def jsonl(path):
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def write_jsonl(path, rows):
    Path(path).write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


@pytest.fixture
def workspace(tmp_path):
    write_jsonl(tmp_path / "corpus.jsonl", CORPUS)
    (tmp_path / "script.json").write_text(json.dumps(SCRIPT), encoding="utf-8")
    return tmp_path


def backend(ws):
    return "mock:" + str(ws / "script.json")


def test_ingest_reports_corpus_statistics(workspace):
    out = json.loads(run("ingest", "--corpus", workspace / "corpus.jsonl").stdout)
    assert out["dialogues"] == 3
    assert out["contexts"] == CONTEXTS
    assert out["turns"] == 16


def test_ingest_reports_the_offending_line(workspace):
    bad = workspace / "bad.jsonl"
    bad.write_text(json.dumps(CORPUS[0]) + "\n" + '{"id": "x", "turns": [{"role": "doctor", "text": "hi"}]}\n')
    proc = run("ingest", "--corpus", bad, check=False)
    assert proc.returncode == 1
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["error"] == "validation"
    assert "line 2" in err["message"]


def test_unknown_subcommand_is_a_usage_error():
    proc = run("frobnicate", check=False)
    assert proc.returncode == 2
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["error"] == "usage"


def test_missing_backend_is_a_config_error(workspace):
    env = {k: v for k, v in os.environ.items() if not k.startswith("COPFORGE_")}
    proc = run("annotate", "--corpus", workspace / "corpus.jsonl", "--out", workspace / "a.jsonl",
               check=False, env=env)
    assert proc.returncode == 1
    assert json.loads(proc.stderr.strip().splitlines()[-1])["error"] == "config"


def test_build_sft_mixed_expands_three_ways(tmp_path):
    rows = []
    for i in range(116):
        rows.append({
            "dialogue_id": "a%d" % (i // 10), "target_turn_index": 2 * (i % 10) + 1,
            "context_turns": [{"role": "seeker", "text": "s%d" % i}] if i % 10 == 0 else None,
            "response": "r%d" % i,
            "analyses": {
                "CBT": {"Event": "e", "Cognition": "c", "Behavior": "b", "Belief": "x%d" % i},
                "PCT": {"Emotion": "m", "Self-Awareness": "w%d" % i},
                "SFBT": {"Goal": "g", "Resource": "r", "Exception": "x", "Action": "a%d" % i}}})
    # Contexts are prefixes of alternating dialogues.
    for i, row in enumerate(rows):
        k = i % 10
        turns = []
        for j in range(k):
            turns += [{"role": "seeker", "text": "s%d" % j}, {"role": "counselor", "text": "c%d" % j}]
        turns.append({"role": "seeker", "text": "s%d" % k})
        row["context_turns"] = turns
    write_jsonl(tmp_path / "annotated.jsonl", rows)
    out = tmp_path / "sft" / "mixed.jsonl"
    summary = json.loads(run("build-sft", "--mode", "mixed", "--annotated", tmp_path / "annotated.jsonl",
                             "--out", out).stdout)
    assert summary["examples"] == 348
    examples = jsonl(out)
    assert len(examples) == 348
    assert sorted({e["approach"] for e in examples}) == ["CBT", "PCT", "SFBT"]
    manifest = json.loads((tmp_path / "sft" / "mixed.manifest.json").read_text())
    assert manifest["learning_rate"] == pytest.approx(2e-5)
    assert manifest["batch_size"] == 8
    assert manifest["max_context"] == 4096

    single = tmp_path / "sft" / "pct.jsonl"
    assert json.loads(run("build-sft", "--mode", "pct", "--annotated", tmp_path / "annotated.jsonl",
                          "--out", single).stdout)["examples"] == 116


def _expand_published_counts():
    counts_spec = json.loads((FIXTURES / "published_counts.json").read_text())
    n = counts_spec["utterances"]
    gt = [[0, 0, 0] for _ in range(n)]
    src = {}
    for dim, block in enumerate(counts_spec["dimensions"]):
        i = 0
        for g in range(3):
            start = i
            for _ in range(block["ground_truth"][g]):
                gt[i][dim] = g + 1
                i += 1
            for name, counts in block["sources"].items():
                rows = src.setdefault(name, [[0, 0, 0] for _ in range(n)])
                j = start
                for s in range(3):
                    for _ in range(counts[s][g]):
                        rows[j][dim] = s + 1
                        j += 1
    out = []
    for i in range(n):
        uid = "u%05d" % i
        out.append({"utterance_id": uid, "source": "ground_truth", "er": gt[i][0], "ip": gt[i][1], "ex": gt[i][2]})
        for name, rows in src.items():
            out.append({"utterance_id": uid, "source": name, "er": rows[i][0], "ip": rows[i][1], "ex": rows[i][2]})
    return out


def test_stats_reproduces_published_averages(tmp_path):
    rows = _expand_published_counts()
    assert len(rows) == 140000
    write_jsonl(tmp_path / "empathy.jsonl", rows)
    proc = run("stats", "--empathy", tmp_path / "empathy.jsonl", "--out", tmp_path / "report.json")
    report = json.loads((tmp_path / "report.json").read_text())
    means = {r["source"]: r["average"] for r in report["empathy"]["means"]}
    mse = {r["source"]: r["average"] for r in report["empathy"]["mse"]}
    assert means["baseline"] == pytest.approx(2.0077, abs=5e-4)
    assert mse["mixed"] == pytest.approx(0.858, abs=5e-4)
    assert mse["naive"] == pytest.approx(1.061, abs=5e-4)
    assert mse["cbt"] == pytest.approx(0.935, abs=5e-4)
    assert mse["pct"] == pytest.approx(0.941, abs=5e-4)
    assert "PsyMix" in proc.stdout
    assert "2.0077" in proc.stdout


def _pipeline(ws, out, parallelism):
    out.mkdir(parents=True, exist_ok=True)
    common = ["--backend-url", backend(ws), "--cache-dir", ws / "cache", "--parallelism", parallelism]
    corpus = ws / "corpus.jsonl"
    reports = {}
    reports["annotate"] = json.loads(run("annotate", "--corpus", corpus, "--out", out / "annotated.jsonl", *common).stdout)
    run("build-sft", "--mode", "mixed", "--annotated", out / "annotated.jsonl", "--out", out / "sft.jsonl")
    run("build-sft", "--mode", "naive", "--corpus", corpus, "--out", out / "naive.jsonl")
    reports["respond"] = json.loads(run("respond-all", "--corpus", corpus, "--out", out / "responses.jsonl", *common).stdout)
    reports["judge"] = json.loads(run("judge", "--corpus", corpus, "--responses", out / "responses.jsonl",
                                      "--out", out / "empathy.jsonl", *common).stdout)
    run("plan", "--responses", out / "responses.jsonl", "--seed", 7, "--out", out / "plan.json")
    return reports


def test_end_to_end_pipeline_is_cached_and_deterministic(workspace):
    cold = _pipeline(workspace, workspace / "cold", 1)
    assert cold["annotate"]["tasks"] == 3 * CONTEXTS
    assert cold["annotate"]["backend_calls"] == 3 * CONTEXTS
    assert cold["respond"]["records"] == 7 * CONTEXTS
    assert cold["respond"]["failures"] == []
    assert cold["judge"]["rows"] == 7 * CONTEXTS

    warm = _pipeline(workspace, workspace / "warm", 8)
    assert warm["annotate"]["backend_calls"] == 0
    assert warm["respond"]["backend_calls"] == 0
    assert warm["judge"]["backend_calls"] == 0
    for name in ["annotated.jsonl", "sft.jsonl", "sft.manifest.json", "naive.jsonl", "responses.jsonl",
                 "empathy.jsonl", "plan.json"]:
        assert (workspace / "cold" / name).read_bytes() == (workspace / "warm" / name).read_bytes(), name

    responses = jsonl(workspace / "cold" / "responses.jsonl")
    for r in responses:
        assert "Analysis]" not in r["response"]
    plan = json.loads((workspace / "cold" / "plan.json").read_text())
    assert len(plan["utterances"]) == CONTEXTS

    ratings = []
    for r in responses:
        for ev in ("A", "B"):
            ratings.append({"utterance_id": r["utterance_id"], "evaluator_id": ev, "source": r["source"],
                            "score": 1 + (len(r["response"]) + len(ev)) % 5})
    write_jsonl(workspace / "ratings.jsonl", ratings)
    run("stats", "--ratings", workspace / "ratings.jsonl", "--empathy", workspace / "cold" / "empathy.jsonl",
        "--responses", workspace / "cold" / "responses.jsonl", "--out", workspace / "report.json")
    report = json.loads((workspace / "report.json").read_text())
    assert len(report["human"]["rows"]) == 7
    assert len(report["human"]["t_tests"]) == 21
    assert report["human"]["pairwise_agreement"] is not None
    assert len(report["empathy"]["mse"]) == 6


def test_read_only_cache_miss_fails(workspace):
    proc = run("annotate", "--corpus", workspace / "corpus.jsonl", "--out", workspace / "a.jsonl",
               "--backend-url", backend(workspace), "--cache-dir", workspace / "empty",
               "--cache-policy", "read-only", check=False)
    assert proc.returncode == 1


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _request(url, body=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=10) as res:
            return res.status, json.loads(res.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def _start(args):
    port = _free_port()
    proc = subprocess.Popen([BIN, *map(str, args), "--port", str(port)], stderr=subprocess.PIPE)
    base = "http://127.0.0.1:%d" % port
    for _ in range(100):
        try:
            urllib.request.urlopen(base + "/api/health", timeout=1)
            break
        except urllib.error.HTTPError:
            break
        except (urllib.error.URLError, ConnectionError):
            time.sleep(0.05)
    return proc, base


def test_serve_chat_and_blind_evaluation(workspace):
    _pipeline(workspace, workspace / "run", 2)
    ratings_path = workspace / "human.jsonl"
    proc, base = _start(["serve", "--corpus", workspace / "corpus.jsonl", "--backend-url", backend(workspace),
                         "--cache-dir", workspace / "cache", "--responses", workspace / "run" / "responses.jsonl",
                         "--plan", workspace / "run" / "plan.json", "--ratings", ratings_path,
                         "--token-secret", "s3cret"])
    try:
        status, created = _request(base + "/api/sessions", {"variant": "mixed"})
        assert status == 201
        status, turn = _request(base + "/api/sessions/%s/messages" % created["session_id"], {"text": "我很焦虑"})
        assert status == 200
        assert "analysis" not in turn
        assert _request(base + "/api/sessions/missing/messages", {"text": "x"})[0] == 404

        status, step = _request(base + "/api/eval/next?evaluator=E1")
        assert status == 200
        count = 0
        names = ["mixed", "cbt", "pct", "sfbt", "naive", "baseline", "ground_truth"]
        while not step["done"]:
            payload = json.dumps(step, ensure_ascii=False)
            assert not any('"%s"' % n in payload for n in names)
            body = {"evaluator_id": "E1", "ratings": [
                {"utterance_id": step["utterance_id"], "source_token": c["source_token"], "score": 3}
                for c in step["candidates"]]}
            status, res = _request(base + "/api/eval/ratings", body)
            assert status == 200
            assert res["accepted"] == 7
            count += 1
            step = _request(base + "/api/eval/next?evaluator=E1")[1]
        assert count == CONTEXTS
    finally:
        proc.terminate()
        proc.wait(timeout=10)
    saved = jsonl(ratings_path)
    assert len(saved) == 7 * CONTEXTS
    assert {r["source"] for r in saved} == set(names)


def test_mock_backend_serves_chat_completions(workspace):
    proc, base = _start(["mock-backend", "--script", workspace / "script.json"])
    try:
        out = workspace / "annotated.jsonl"
        report = json.loads(run("annotate", "--corpus", workspace / "corpus.jsonl", "--out", out,
                                "--backend-url", base + "/v1/chat/completions").stdout)
        assert report["succeeded_turns"] == CONTEXTS
    finally:
        proc.terminate()
        proc.wait(timeout=10)
