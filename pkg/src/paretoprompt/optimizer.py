"""Evolutionary search over instructions: expansion, evaluation, Pareto selection.

Each round samples a training minibatch per objective, grows the population
with gradient-driven mutants and crossover children, scores every candidate
on the validation data and keeps the (crowding-pruned) non-dominated set.
The full run state, RNG and score cache included, is checkpointable so an
interrupted run resumes to the identical result.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from .backends import Backend, CachedBackend, rank
from .core import Instance, Instruction, ObjectiveVector
from .errors import BackendError, ConfigError, CorruptCheckpoint, NoParsableOutput, OperatorError
from .evolution import (
    apply_gradient,
    build_contrastive_sets,
    crossover,
    error_from_ranking,
    estimate_gradients,
    select_crossover_pairs,
)
from .metrics import utility_function
from .operator_llm import OperatorLLM
from .pareto import ScoredInstruction, pareto_front, select_top_by_crowding

log = logging.getLogger(__name__)

DEFAULT_INSTRUCTION = "Given a web search query, retrieve relevant passages that answer the query"
CHECKPOINT_SCHEMA = "paretoprompt/run-state"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OptimizerConfig:
    rounds: int = 10
    pareto_budget: int = 4
    expansion_factor: int = 8
    train_batch_ek: int = 32
    train_batch_nek: int = 32
    # None means the whole validation split
    val_batch_ek: int | None = None
    val_batch_nek: int | None = None
    resample_validation: bool = True
    seed: int = 0
    utility: str = "map"
    num_gradients: int = 2
    round_attempts: int = 2
    workers: int = 1

    def __post_init__(self):
        for name in ("val_batch_ek", "val_batch_nek"):
            if getattr(self, name) == "full":
                object.__setattr__(self, name, None)
        if self.rounds < 1:
            raise ConfigError("rounds must be at least 1")
        if self.pareto_budget < 1:
            raise ConfigError("pareto_budget must be at least 1")
        if self.expansion_factor < 2:
            raise ConfigError("expansion_factor must be at least 2")
        sizes = [self.train_batch_ek, self.train_batch_nek, self.val_batch_ek, self.val_batch_nek]
        if any(s is not None and s < 1 for s in sizes):
            raise ConfigError("batch sizes must be at least 1")
        if self.num_gradients < 1 or self.round_attempts < 1 or self.workers < 1:
            raise ConfigError("num_gradients, round_attempts and workers must be positive")
        try:
            utility_function(self.utility)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def mutation_slots(self) -> int:
        """Mutants allowed per parent."""
        return math.ceil(self.expansion_factor / 2)

    @property
    def crossover_slots(self) -> int:
        """Crossover children allowed per population member."""
        return self.expansion_factor // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> OptimizerConfig:
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TaskSplit:
    """Disjoint train and validation instances for one objective."""

    train: list[Instance]
    validation: list[Instance]

    def __post_init__(self):
        if not self.train or not self.validation:
            raise ConfigError("both train and validation splits must be non-empty")
        overlap = {i.query.id for i in self.train} & {i.query.id for i in self.validation}
        if overlap:
            raise ConfigError(f"train and validation share query ids: {sorted(overlap)[:5]}")


@dataclass
class RoundRecord:
    round: int
    parent_ids: list[str]
    candidates: list[ScoredInstruction]
    front_ids: list[str]
    selected_ids: list[str]
    num_mutants: int = 0
    num_crossovers: int = 0

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "parent_ids": self.parent_ids,
            "candidates": [c.to_dict() for c in self.candidates],
            "front_ids": self.front_ids,
            "selected_ids": self.selected_ids,
            "num_mutants": self.num_mutants,
            "num_crossovers": self.num_crossovers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RoundRecord:
        return cls(
            d["round"],
            list(d["parent_ids"]),
            [ScoredInstruction.from_dict(c) for c in d["candidates"]],
            list(d["front_ids"]),
            list(d["selected_ids"]),
            d.get("num_mutants", 0),
            d.get("num_crossovers", 0),
        )


@dataclass
class RunState:
    round: int
    population: list[ScoredInstruction]
    rng_state: list
    config: dict
    seed_instruction: Instruction
    score_cache: dict = field(default_factory=dict)
    history: list[RoundRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def rng(self) -> random.Random:
        version, internal, gauss = self.rng_state
        r = random.Random()
        r.setstate((version, tuple(internal), gauss))
        return r

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "population": [m.to_dict() for m in self.population],
            "rng_state": self.rng_state,
            "config": self.config,
            "seed_instruction": self.seed_instruction.to_dict(),
            "score_cache": [[*k, v] for k, v in sorted(self.score_cache.items())],
            "history": [h.to_dict() for h in self.history],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunState:
        return cls(
            round=d["round"],
            population=[ScoredInstruction.from_dict(m) for m in d["population"]],
            rng_state=d["rng_state"],
            config=d["config"],
            seed_instruction=Instruction.from_dict(d["seed_instruction"]),
            score_cache=CachedBackend.load_entries(d["score_cache"]),
            history=[RoundRecord.from_dict(h) for h in d["history"]],
            metadata=dict(d.get("metadata", {})),
        )

    def instructions(self) -> dict[str, Instruction]:
        """Every instruction seen so far, by id."""
        out = {self.seed_instruction.id: self.seed_instruction}
        for rec in self.history:
            for c in rec.candidates:
                out.setdefault(c.id, c.instruction)
        return out


def _rng_to_json(rng: random.Random) -> list:
    version, internal, gauss = rng.getstate()
    return [version, list(internal), gauss]


def _sample(rng: random.Random, items: Sequence[Instance], k: int | None) -> list[Instance]:
    if k is None or k >= len(items):
        return list(items)
    return rng.sample(list(items), k)


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _mean_utility(utility, instruction: Instruction, batch: Sequence[Instance], backend: Backend) -> float:
    if not batch:
        raise ValueError("cannot average utility over an empty batch")
    return math.fsum(utility(rank(backend, instruction, inst), inst.labels) for inst in batch) / len(batch)


def evaluate_population(
    pool: Sequence[Instruction],
    val_ek: Sequence[Instance],
    val_nek: Sequence[Instance],
    backend: Backend,
    utility: str = "map",
    workers: int = 1,
) -> list[ScoredInstruction]:
    """Mean utility of every instruction on the same EK and NEK validation batches."""
    if not val_ek or not val_nek:
        raise ValueError("validation batches must be non-empty")
    fn = utility_function(utility)

    def score(instr: Instruction) -> ScoredInstruction:
        ek = _mean_utility(fn, instr, val_ek, backend)
        nek = _mean_utility(fn, instr, val_nek, backend)
        return ScoredInstruction(instr, ObjectiveVector(ek, nek))

    return _map(score, list(pool), workers)


def _validation_batches(rng: random.Random, config: OptimizerConfig, ek: TaskSplit, nek: TaskSplit):
    if config.resample_validation:
        src = rng
    else:
        # fixed-batch mode: the same draw every round, independent of the main stream
        src = random.Random(config.seed ^ 0x5EED_BA7C)
    return _sample(src, ek.validation, config.val_batch_ek), _sample(src, nek.validation, config.val_batch_nek)


def init_state(
    config: OptimizerConfig,
    ek: TaskSplit,
    nek: TaskSplit,
    backend: Backend,
    initial_instruction: str = DEFAULT_INSTRUCTION,
) -> RunState:
    """Round-0 state: the seed instruction, scored on a validation draw."""
    if not initial_instruction or not initial_instruction.strip():
        raise ConfigError("initial instruction must be non-empty")
    seed = Instruction.create(initial_instruction)
    rng = random.Random(config.seed)
    cb = CachedBackend(backend)
    val_ek, val_nek = _validation_batches(rng, config, ek, nek)
    scored = evaluate_population([seed], val_ek, val_nek, cb, config.utility)
    record = RoundRecord(0, [], scored, [seed.id], [seed.id])
    return RunState(0, scored, _rng_to_json(rng), config.to_dict(), seed, dict(cb.cache), [record])


def _expand(
    parents: Sequence[Instruction],
    config: OptimizerConfig,
    train_ek: Sequence[Instance],
    train_nek: Sequence[Instance],
    backend: CachedBackend,
    op_llm: OperatorLLM,
    rng: random.Random,
) -> tuple[list[Instruction], list[Instruction]]:
    utility = utility_function(config.utility)
    batch = list(train_ek) + list(train_nek)
    parents = sorted(parents, key=lambda p: p.id)

    mutants: list[Instruction] = []
    train_scores: list[ScoredInstruction] = []
    slots = config.mutation_slots
    steps = math.ceil(slots / config.num_gradients)
    for p in parents:
        rankings = [rank(backend, p, inst) for inst in batch]
        errors = [e for e in (error_from_ranking(r, i) for r, i in zip(rankings, batch)) if e is not None]
        n_ek = len(train_ek)
        ek_u = math.fsum(utility(r, i.labels) for r, i in zip(rankings[:n_ek], batch[:n_ek])) / n_ek
        nek_u = math.fsum(utility(r, i.labels) for r, i in zip(rankings[n_ek:], batch[n_ek:])) / len(train_nek)
        train_scores.append(ScoredInstruction(p, ObjectiveVector(ek_u, nek_u)))
        if not errors:
            continue
        try:
            gradients = estimate_gradients(op_llm, p, errors, config.num_gradients)
        except NoParsableOutput as exc:
            log.warning("no gradients for %s: %s", p.id, exc)
            continue
        kids: list[Instruction] = []
        for g in gradients:
            if len(kids) >= slots:
                break
            try:
                out = apply_gradient(op_llm, p, errors, g, steps)
            except NoParsableOutput as exc:
                log.warning("gradient application failed for %s: %s", p.id, exc)
                continue
            texts = {k.text for k in kids}
            kids.extend(k for k in out if k.text not in texts)
        mutants.extend(kids[:slots])

    children: list[Instruction] = []
    if len(parents) >= 2:
        total = config.crossover_slots * len(parents)
        max_pairs = len(parents) * (len(parents) - 1) // 2
        pairs = select_crossover_pairs(train_scores, min(total, max_pairs), rng)
        base, extra = divmod(total, len(pairs))
        for n, (a, b) in enumerate(pairs):
            want = base + (1 if n < extra else 0)
            sets = build_contrastive_sets((a, b), train_ek, train_nek, backend)
            try:
                children.extend(crossover(op_llm, a, b, sets, want))
            except NoParsableOutput as exc:
                log.warning("crossover failed for (%s, %s): %s", a.id, b.id, exc)
    return mutants, children


def run_round(
    state: RunState,
    config: OptimizerConfig,
    ek: TaskSplit,
    nek: TaskSplit,
    backend: Backend,
    op_llm: OperatorLLM,
) -> RunState:
    """Advance one round. ``state`` is never mutated, so a failed round can be retried."""
    if state.round >= config.rounds:
        raise ConfigError(f"run already completed {state.round} of {config.rounds} rounds")
    rng = state.rng()
    cb = CachedBackend(backend, dict(state.score_cache))
    parents = [m.instruction for m in state.population]

    train_ek = _sample(rng, ek.train, config.train_batch_ek)
    train_nek = _sample(rng, nek.train, config.train_batch_nek)
    mutants, children = _expand(parents, config, train_ek, train_nek, cb, op_llm, rng)

    seen = {p.text for p in parents}
    new: list[Instruction] = []
    n_mut = n_cross = 0
    for inst in mutants + children:
        if inst.text in seen:
            continue
        seen.add(inst.text)
        new.append(inst)
        if inst.lineage.kind == "mutation":
            n_mut += 1
        else:
            n_cross += 1
    new = new[: config.expansion_factor * len(parents)]

    val_ek, val_nek = _validation_batches(rng, config, ek, nek)
    scored = evaluate_population(parents + new, val_ek, val_nek, cb, config.utility, config.workers)
    front = pareto_front(scored)
    selected = select_top_by_crowding(front, config.pareto_budget)

    record = RoundRecord(
        state.round + 1,
        [p.id for p in parents],
        scored,
        [m.id for m in front],
        [m.id for m in selected],
        n_mut,
        n_cross,
    )
    log.info(
        "round %d: %d mutants, %d crossovers, front %d, kept %d",
        record.round, n_mut, n_cross, len(front), len(selected),
    )
    return replace(
        state,
        round=state.round + 1,
        population=selected,
        rng_state=_rng_to_json(rng),
        score_cache=cb.cache,
        history=[*state.history, record],
    )


def run_optimization(
    config: OptimizerConfig,
    ek: TaskSplit,
    nek: TaskSplit,
    backend: Backend,
    op_llm: OperatorLLM,
    initial_instruction: str = DEFAULT_INSTRUCTION,
    state: RunState | None = None,
    checkpoint_path: str | os.PathLike | None = None,
    stop_after: int | None = None,
) -> RunState:
    """Run (or resume) the search until ``config.rounds`` rounds are done.

    ``stop_after`` halts early once that many rounds are complete, which is
    how an interrupted run is simulated. A failing round is retried from the
    unchanged state up to ``config.round_attempts`` times.
    """
    if state is None:
        state = init_state(config, ek, nek, backend, initial_instruction)
        if checkpoint_path is not None:
            checkpoint_save(state, checkpoint_path)
    while state.round < config.rounds and (stop_after is None or state.round < stop_after):
        for attempt in range(1, config.round_attempts + 1):
            try:
                state = run_round(state, config, ek, nek, backend, op_llm)
                break
            except (BackendError, OperatorError) as exc:
                if attempt == config.round_attempts:
                    raise
                log.warning("round %d failed (%s); retrying", state.round + 1, exc)
        if checkpoint_path is not None:
            checkpoint_save(state, checkpoint_path)
    return state


# -- checkpoints -------------------------------------------------------------


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def state_bytes(state: RunState) -> bytes:
    """Canonical serialization; equal states give equal bytes."""
    payload = state.to_dict()
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "version": CHECKPOINT_VERSION,
        "digest": hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest(),
        "state": payload,
    }
    return _canonical(doc).encode("utf-8")


def checkpoint_save(state: RunState, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(state_bytes(state))
    os.replace(tmp, path)


def checkpoint_load(path: str | os.PathLike) -> RunState:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: not a valid checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("schema") != CHECKPOINT_SCHEMA:
        raise CorruptCheckpoint(f"{path}: unknown checkpoint schema")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    payload = doc.get("state")
    if hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest() != doc.get("digest"):
        raise CorruptCheckpoint(f"{path}: content digest mismatch")
    try:
        return RunState.from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed state ({exc})") from None
