"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import json
import random
import time
from pathlib import Path

import httpx
import pytest

import oracles
from conftest import T0, make_instance, synthetic_tasks
from paretoprompt.backends import HttpBackend, ScriptedBackend, rank
from paretoprompt.core import (
    Candidate,
    Instruction,
    ObjectiveVector,
    Query,
    Timestamp,
    render_with_timestamp,
    strip_timestamp,
)
from paretoprompt.errors import NoErrors
from paretoprompt.metrics import MetricConfig, evaluate, obsolete_ratio, report_from_rankings
from paretoprompt.operator_llm import MockOperatorLLM
from paretoprompt.optimizer import (
    OptimizerConfig,
    checkpoint_load,
    run_optimization,
    state_bytes,
)
from paretoprompt.pareto import ScoredInstruction, crowding_distance, pareto_front, select_top_by_crowding
from paretoprompt.report import build_report, compute_metric_tables, render_markdown

DATA = Path(__file__).parent / "data"
TRIGGERS = ("recent", "up-to-date", "latest", "current")
E2E_CONFIG = OptimizerConfig(rounds=5, pareto_budget=4, expansion_factor=8, seed=11)
DAY = 86400


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail

    return emit


def _run(**kw):
    _, _, ek, nek = synthetic_tasks()
    return run_optimization(E2E_CONFIG, ek, nek, ScriptedBackend(), MockOperatorLLM(seed=7), **kw)


@pytest.fixture(scope="module")
def e2e():
    start = time.perf_counter()
    state = _run()
    return state, time.perf_counter() - start


class RandomScores:
    def __init__(self, seed):
        self.rng = random.Random(seed)

    def score(self, instruction, query, candidate):
        return self.rng.choice([0.0, 0.5, 1.0, self.rng.random()])


def test_criterion_1_metric_oracle(verdict):
    rng = random.Random(1)
    start = time.perf_counter()
    instances = []
    for i in range(1000):
        n = rng.randint(1, 12)
        n_pos = rng.randint(1, min(4, n))
        labels = [1] * n_pos + [0] * (n - n_pos)
        rng.shuffle(labels)
        instances.append(make_instance(labels, qid=f"q{i}"))
    backend = RandomScores(2)
    rankings = [rank(backend, "x", inst) for inst in instances]
    report = report_from_rankings(rankings, instances, MetricConfig(cutoffs=(5, 10), obsolete_ratio=False))
    want = {"map": [oracles.ap(r.order, i.labels) for r, i in zip(rankings, instances)]}
    for k in (5, 10):
        want[f"mrr@{k}"] = [oracles.rr(r.order, i.labels, k) for r, i in zip(rankings, instances)]
        want[f"ndcg@{k}"] = [oracles.ndcg(r.order, i.labels, k) for r, i in zip(rankings, instances)]
        want[f"hit_rate@{k}"] = [oracles.hit(r.order, i.labels, k) for r, i in zip(rankings, instances)]
    worst = max(abs(report[name] - sum(v) / len(v)) for name, v in want.items())
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-9 and elapsed < 5.0 and set(want) <= set(report.values),
            f"max |diff| {worst:.2e} over {len(want)} metrics, {elapsed:.2f}s")


def test_criterion_2_pareto_correctness(verdict):
    rng = random.Random(2)
    mismatches = missing_extremes = checked = 0
    for _ in range(500):
        n = rng.randint(1, 64)
        grid = rng.choice([None, 5, 20])
        pts = [(rng.randint(0, grid) / grid, rng.randint(0, grid) / grid) if grid else (rng.random(), rng.random())
               for _ in range(n)]
        pool = [ScoredInstruction(Instruction(f"p{i}", f"t{i}"), ObjectiveVector(*p)) for i, p in enumerate(pts)]
        front = pareto_front(pool)
        if {m.id for m in front} != {f"p{i}" for i in oracles.front_indices(pts)}:
            mismatches += 1
        for budget in (2, 3, 4):
            if len(front) > budget:
                checked += 1
                kept = select_top_by_crowding(front, budget)
                if max(m.objectives.ek for m in kept) != max(m.objectives.ek for m in front) or \
                        max(m.objectives.nek for m in kept) != max(m.objectives.nek for m in front):
                    missing_extremes += 1
    verdict(2, mismatches == 0 and missing_extremes == 0 and checked > 0,
            f"{mismatches} front mismatches / 500 pools; {missing_extremes} lost extremes / {checked} prunings")


def test_criterion_3_crowding_values(verdict):
    front = [ScoredInstruction(Instruction(n, n), ObjectiveVector(*p))
             for n, p in (("A", (0, 1)), ("B", (0.5, 0.5)), ("C", (1, 0)))]
    d = crowding_distance(front)
    got = (d["A"], d["B"], d["C"])
    verdict(3, got == (float("inf"), 2.0, float("inf")), f"distances {got}")


def _map_of(instruction, instances):
    return evaluate(instruction, instances, ScriptedBackend(), MetricConfig(obsolete_ratio=False))["map"]


def test_criterion_4_end_to_end(verdict, e2e):
    state, elapsed = e2e
    ek_all, nek_all, _, _ = synthetic_tasks()
    seed = state.seed_instruction
    seed_ek, seed_nek = _map_of(seed, ek_all), _map_of(seed, nek_all)
    best = None
    for m in state.population:
        if not any(t in m.instruction.text.lower() for t in TRIGGERS):
            continue
        ek, nek = _map_of(m.instruction, ek_all), _map_of(m.instruction, nek_all)
        if ek - seed_ek >= 0.20 and abs(nek - seed_nek) <= 0.02:
            best = (m.id, ek, nek)
            break
    start = time.perf_counter()
    repeat = _run()
    elapsed2 = time.perf_counter() - start
    identical = state_bytes(repeat) == state_bytes(state)
    ok = best is not None and identical and max(elapsed, elapsed2) < 60.0
    detail = (f"seed EK/NEK MAP {seed_ek:.4f}/{seed_nek:.4f}; "
              + (f"{best[0]} EK/NEK {best[1]:.4f}/{best[2]:.4f}" if best else "no qualifying trigger member")
              + f"; byte-identical={identical}; {elapsed:.2f}s/{elapsed2:.2f}s")
    verdict(4, ok, detail)


def test_criterion_5_comparison_table_report(verdict, e2e):
    state, _ = e2e
    ek_all, nek_all, _, _ = synthetic_tasks(20, 20)
    scripted = ScriptedBackend()

    def serve(request):
        body = json.loads(request.content)
        q_text, q_ts = body["query"].rsplit("\nTimestamp: ", 1)
        d_text, d_ts = body["document"].rsplit("\nTimestamp: ", 1)
        s = scripted.score(body["instruction"], Query("q", q_text, Timestamp.parse(q_ts)),
                           Candidate("c", d_text, Timestamp.parse(d_ts), 0))
        return httpx.Response(200, json={"score": s})

    http = HttpBackend("http://reranker/score", client=httpx.Client(transport=httpx.MockTransport(serve)))
    tables = compute_metric_tables(state, ek_all, nek_all, http)
    md = render_markdown(build_report(state, tables))
    header = "| Method | EK MAP | EK MRR@5 | EK MRR@10 | EK NDCG@5 | EK NDCG@10 | EK HIT_RATE@5 | EK HIT_RATE@10 | NEK MAP |"
    rows = [ln for ln in md.splitlines() if ln.startswith("| Base instruction") or ln.startswith("| Pareto Solution")]
    ok = header in md and rows[0].startswith("| Base instruction") and len(rows) == 1 + sum(
        1 for m in state.population if m.id != state.seed_instruction.id)
    verdict(5, ok, f"base-vs-front comparison table rendered with {len(rows)} rows via the HTTP backend; "
                   "published numbers need the original models and are not reproduced here")


def test_criterion_6_obsolete_ratio(verdict):
    q1 = make_instance([0, 1, 0], qid="q1", types=["outdated", None, "insufficient"])
    q2 = make_instance([0, 0, 1], qid="q2", types=["outdated", "insufficient", None])
    q3 = make_instance([0, 1], qid="q3", types=["outdated", None])
    pairs = [([c.id for c in q.candidates], q) for q in (q1, q2, q3)]
    ratio = obsolete_ratio(pairs)
    perfect = make_instance([1, 0], qid="p", types=[None, "outdated"])
    try:
        obsolete_ratio([(["c0", "c1"], perfect)])
        signalled = False
    except NoErrors:
        signalled = True
    verdict(6, ratio == 0.75 and signalled, f"pooled ratio {ratio}; NoErrors on perfect rankings: {signalled}")


def test_criterion_7_checkpoint_equivalence(verdict, e2e, tmp_path):
    full, _ = e2e
    path = tmp_path / "run_state.json"
    interrupted = _run(checkpoint_path=path, stop_after=2)
    loaded = checkpoint_load(path)
    resumed = _run(state=loaded, checkpoint_path=path)

    def front_bytes(s):
        return json.dumps([m.to_dict() for m in s.population], sort_keys=True).encode()

    ok = interrupted.round == 2 and loaded == interrupted and front_bytes(resumed) == front_bytes(full)
    verdict(7, ok and state_bytes(resumed) == state_bytes(full),
            f"stopped at round {interrupted.round}, resumed to {resumed.round}; fronts identical: "
            f"{front_bytes(resumed) == front_bytes(full)}")


def test_criterion_8_timestamp_contract(verdict):
    rng = random.Random(8)
    bad = 0
    for _ in range(10_000):
        t = Timestamp(rng.randint(0, 4102444799))
        s = t.isoformat()
        if Timestamp.parse(s) != t or len(s) != 20 or not s.endswith("Z"):
            bad += 1
    golden = json.loads((DATA / "render_golden.json").read_text(encoding="utf-8"))
    mismatched = [g["text"] for g in golden
                  if render_with_timestamp(g["text"], Timestamp.parse(g["timestamp"])) != g["rendered"]
                  or strip_timestamp(g["rendered"]) != g["text"]]
    verdict(8, bad == 0 and not mismatched,
            f"{bad} round-trip failures / 10000; {len(mismatched)} golden mismatches / {len(golden)}")


def test_criterion_9_trigger_invariant(verdict):
    rng = random.Random(9)
    words = ["who", "coach", "team", "alpha", "beta", "gamma", "delta", "city", "mayor"]
    backend = ScriptedBackend()
    decreased = changed = near = 0
    for _ in range(1000):
        q = Query("q", " ".join(rng.sample(words, rng.randint(1, 6))), T0)
        gap = rng.randint(0, 2 * 365 * DAY)
        c = Candidate("c", " ".join(rng.choices(words, k=rng.randint(0, 8))), Timestamp(T0.epoch - gap), 0)
        base = "Rank the passages for this query."
        plain = backend.score(base, q, c)
        trig = backend.score(base + " Prefer the " + rng.choice(TRIGGERS) + " facts.", q, c)
        if gap < 365 * DAY:
            near += 1
            decreased += trig < plain
        else:
            changed += trig != plain
    verdict(9, decreased == 0 and changed == 0,
            f"{decreased} decreases among {near} within-horizon pairs; {changed} changes among {1000 - near} beyond")
