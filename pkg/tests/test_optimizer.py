from __future__ import annotations

import dataclasses
import itertools

import pytest

from conftest import FixedScoreBackend, make_instance, synthetic_tasks
from paretoprompt.backends import ScriptedBackend
from paretoprompt.core import Instruction, Objective, ObjectiveVector
from paretoprompt.errors import ConfigError, CorruptCheckpoint, OperatorCallFailed
from paretoprompt.operator_llm import CROSSOVER, GRADIENT_APPLICATION, GRADIENT_ESTIMATION, MockOperatorLLM
from paretoprompt.optimizer import (
    OptimizerConfig,
    RunState,
    TaskSplit,
    checkpoint_load,
    checkpoint_save,
    evaluate_population,
    init_state,
    run_optimization,
    run_round,
    state_bytes,
)
from paretoprompt.pareto import ScoredInstruction, dominates

SMALL = OptimizerConfig(rounds=3, seed=5, train_batch_ek=16, train_batch_nek=16)


@pytest.fixture(scope="module")
def tasks():
    _, _, ek, nek = synthetic_tasks(40, 40)
    return ek, nek


def test_config_validation():
    for bad in (dict(rounds=0), dict(pareto_budget=0), dict(expansion_factor=0), dict(utility="nope"),
                dict(train_batch_ek=0)):
        with pytest.raises(ConfigError):
            OptimizerConfig(**bad)
    c = OptimizerConfig()
    assert (c.mutation_slots, c.crossover_slots) == (4, 4)
    assert OptimizerConfig(expansion_factor=5).mutation_slots == 3
    assert OptimizerConfig.from_dict(c.to_dict()) == c


def test_task_split_must_be_disjoint():
    a = make_instance([1, 0], qid="a")
    with pytest.raises(ConfigError):
        TaskSplit([a], [a])
    with pytest.raises(ConfigError):
        TaskSplit([], [a])


def test_evaluate_population_examples():
    ek = [make_instance([0, 1], qid=f"e{i}") for i in range(3)]
    nek = [make_instance([1, 0], qid=f"n{i}", objective=Objective.NEK) for i in range(3)]
    perfect = Instruction.create("perfect")
    wrong = Instruction.create("wrong")
    twin = Instruction.create("twin of perfect")
    table = {
        "perfect": {"c0": 0.4, "c1": 0.6} | {("n0", "c0"): 0.9, ("n1", "c0"): 0.9, ("n2", "c0"): 0.9},
        "twin of perfect": {"c0": 0.4, "c1": 0.6} | {("n0", "c0"): 0.9, ("n1", "c0"): 0.9, ("n2", "c0"): 0.9},
        "wrong": {"c0": 0.6, "c1": 0.4},
    }
    # "wrong" ranks c0 first everywhere: EK pos at 2 (AP 0.5), NEK pos at 1
    scored = evaluate_population([perfect, wrong, twin], ek, nek, FixedScoreBackend(table))
    vecs = {s.id: (s.objectives.ek, s.objectives.nek) for s in scored}
    assert vecs[perfect.id] == (1.0, 1.0)
    assert vecs[wrong.id] == (0.5, 1.0)
    assert vecs[twin.id] == vecs[perfect.id]
    with pytest.raises(ValueError):
        evaluate_population([perfect], [], nek, FixedScoreBackend(table))


def test_evaluate_population_scripted_hand_computed():
    # query "a b"; c0 overlaps fully, c1 half
    ek = [make_instance([0, 1], qid="e", query_text="a b", texts=["a b", "a"])]
    nek = [make_instance([1, 0], qid="n", query_text="a b", texts=["a b", "a"], objective=Objective.NEK)]
    (s,) = evaluate_population([Instruction.create("rank")], ek, nek, ScriptedBackend())
    assert (s.objectives.ek, s.objectives.nek) == (0.5, 1.0)


def test_single_parent_round_skips_crossover(tasks):
    ek, nek = tasks
    backend = ScriptedBackend()
    state = init_state(SMALL, ek, nek, backend)
    nxt = run_round(state, SMALL, ek, nek, backend, MockOperatorLLM(seed=1))
    rec = nxt.history[-1]
    assert rec.num_crossovers == 0
    assert 1 <= rec.num_mutants <= 4
    assert len(rec.candidates) <= 5


def test_error_free_parents_yield_no_mutants():
    ek = TaskSplit([make_instance([1, 0], qid="t")], [make_instance([1, 0], qid="v")])
    nek = TaskSplit([make_instance([1, 0], qid="tn", objective=Objective.NEK)],
                    [make_instance([1, 0], qid="vn", objective=Objective.NEK)])
    backend = FixedScoreBackend({"*": {"c0": 0.9, "c1": 0.1}})
    op = MockOperatorLLM()
    state = run_optimization(OptimizerConfig(rounds=1), ek, nek, backend, op)
    assert state.history[-1].num_mutants == 0 and op.calls == []
    assert len(state.population) == 1


def test_round_invariants_and_determinism(tasks):
    ek, nek = tasks
    runs = [run_optimization(SMALL, ek, nek, ScriptedBackend(), MockOperatorLLM(seed=2)) for _ in range(2)]
    assert state_bytes(runs[0]) == state_bytes(runs[1])
    state = runs[0]
    assert state.round == 3 and len(state.history) == 4
    prev_size = 1
    for rec in state.history[1:]:
        assert len(rec.candidates) - prev_size <= SMALL.expansion_factor * prev_size
        kept = [c for c in rec.candidates if c.id in rec.selected_ids]
        assert len(kept) <= SMALL.pareto_budget
        for k in kept:
            assert not any(dominates(c.objectives, k.objectives) for c in rec.candidates)
        prev_size = len(kept)
    assert [m.id for m in state.population] == state.history[-1].selected_ids


def test_full_budget_with_two_parents(tasks):
    ek, nek = tasks
    cfg = OptimizerConfig(rounds=4, seed=5, train_batch_ek=16, train_batch_nek=16)
    state = run_optimization(cfg, ek, nek, ScriptedBackend(), MockOperatorLLM(seed=2))
    multi = [r for r in state.history[1:] if len(r.parent_ids) >= 2]
    assert multi
    for rec in multi:
        assert rec.num_crossovers > 0


def test_run_round_does_not_mutate_input(tasks):
    ek, nek = tasks
    state = init_state(SMALL, ek, nek, ScriptedBackend())
    before = state_bytes(state)
    run_round(state, SMALL, ek, nek, ScriptedBackend(), MockOperatorLLM())
    assert state_bytes(state) == before


def test_run_round_refuses_finished_state(tasks):
    ek, nek = tasks
    cfg = OptimizerConfig(rounds=1)
    state = run_optimization(cfg, ek, nek, ScriptedBackend(), MockOperatorLLM())
    with pytest.raises(ConfigError):
        run_round(state, cfg, ek, nek, ScriptedBackend(), MockOperatorLLM())


def test_round_retried_after_operator_failure(tasks):
    ek, nek = tasks
    real = MockOperatorLLM(seed=2)
    failures = []

    class Flaky:
        def complete(self, template_id, prompt):
            if not failures:
                failures.append(1)
                raise OperatorCallFailed("transient")
            return real.complete(template_id, prompt)

    cfg = dataclasses.replace(SMALL, rounds=1)
    got = run_optimization(cfg, ek, nek, ScriptedBackend(), Flaky())
    want = run_optimization(cfg, ek, nek, ScriptedBackend(), MockOperatorLLM(seed=2))
    assert state_bytes(got) == state_bytes(want)


def test_fixed_validation_mode(tasks):
    ek, nek = tasks
    cfg = OptimizerConfig(rounds=2, val_batch_ek=5, val_batch_nek=5, resample_validation=False, seed=1)
    state = run_optimization(cfg, ek, nek, ScriptedBackend(), MockOperatorLLM())
    seed_scores = [next(c.objectives for c in r.candidates if c.id == state.seed_instruction.id)
                   for r in state.history if any(c.id == state.seed_instruction.id for c in r.candidates)]
    assert len(set(seed_scores)) == 1


def test_checkpoint_round_trip(tmp_path, tasks):
    ek, nek = tasks
    state = run_optimization(SMALL, ek, nek, ScriptedBackend(), MockOperatorLLM(), stop_after=1)
    path = tmp_path / "state.json"
    checkpoint_save(state, path)
    loaded = checkpoint_load(path)
    assert loaded == state
    assert isinstance(loaded, RunState)
    assert loaded.rng().getstate() == state.rng().getstate()


@pytest.mark.parametrize("damage", ["truncate", "flip", "schema"])
def test_corrupt_checkpoint(tmp_path, tasks, damage):
    ek, nek = tasks
    state = init_state(SMALL, ek, nek, ScriptedBackend())
    path = tmp_path / "state.json"
    checkpoint_save(state, path)
    raw = path.read_bytes()
    if damage == "truncate":
        path.write_bytes(raw[: len(raw) // 2])
    elif damage == "flip":
        path.write_bytes(raw.replace(b'"round":0', b'"round":1', 1))
    else:
        path.write_bytes(raw.replace(b"paretoprompt/run-state", b"something-else"))
    with pytest.raises(CorruptCheckpoint):
        checkpoint_load(path)


def test_resume_matches_uninterrupted(tmp_path, tasks):
    ek, nek = tasks
    full = run_optimization(SMALL, ek, nek, ScriptedBackend(), MockOperatorLLM(seed=4))
    path = tmp_path / "ckpt.json"
    run_optimization(SMALL, ek, nek, ScriptedBackend(), MockOperatorLLM(seed=4), checkpoint_path=path, stop_after=1)
    resumed = run_optimization(SMALL, ek, nek, ScriptedBackend(), MockOperatorLLM(seed=4), state=checkpoint_load(path))
    assert state_bytes(resumed) == state_bytes(full)


def test_cooperative_mocks_fill_the_budget():
    counter = itertools.count()

    def unique(n):
        return lambda tid, prompt: "".join(f"<START>{tid} child {next(counter)}<END>" for _ in range(n))

    op = MockOperatorLLM(canned={GRADIENT_ESTIMATION: unique(2), GRADIENT_APPLICATION: unique(2),
                                 CROSSOVER: unique(8)})
    ek = TaskSplit([make_instance([0, 1], qid=f"t{i}") for i in range(3)], [make_instance([0, 1], qid="v")])
    nek = TaskSplit([make_instance([0, 1], qid=f"tn{i}", objective=Objective.NEK) for i in range(3)],
                    [make_instance([0, 1], qid="vn", objective=Objective.NEK)])
    backend = FixedScoreBackend({}, 0.5)  # ties keep the negative first, so every query is an error
    cfg = OptimizerConfig(rounds=1)
    state = init_state(cfg, ek, nek, backend)
    parents = [Instruction.create(f"parent {i}") for i in range(3)]
    state = dataclasses.replace(
        state, population=[ScoredInstruction(p, ObjectiveVector(0.5, 0.5)) for p in parents]
    )
    rec = run_round(state, cfg, ek, nek, backend, op).history[-1]
    assert rec.num_mutants + rec.num_crossovers == cfg.expansion_factor * len(parents)
    assert rec.num_mutants == 4 * len(parents)
