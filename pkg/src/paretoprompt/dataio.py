"""JSONL datasets, train/validation splits, NEK timestamp synthesis and synthetic fixtures.

Record schema, one JSON object per line::

    {"query_id": str, "query_text": str, "query_timestamp": "YYYY-MM-DDThh:mm:ssZ",
     "objective": "EK" | "NEK",
     "candidates": [{"id": str, "text": str, "timestamp": str, "label": 0 | 1,
                     "negative_type": "outdated" | "insufficient"   # optional
                    }, ...]}
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import replace
from typing import Iterable, Sequence

from .core import Candidate, Instance, NegativeType, Objective, Query, Timestamp, validate_instance
from .errors import ParseError, ValidationError
from .optimizer import TaskSplit

DEFAULT_NEK_RANGE = (Timestamp.parse("2018-01-01T00:00:00Z"), Timestamp.parse("2025-01-01T00:00:00Z"))


def instance_from_record(rec: dict, strict: bool = False) -> Instance:
    qid = rec.get("query_id") if isinstance(rec, dict) else None
    try:
        query = Query(str(rec["query_id"]), rec["query_text"], Timestamp.parse(rec["query_timestamp"]))
        objective = Objective(rec.get("objective", "EK"))
        candidates = []
        for c in rec["candidates"]:
            label = c["label"]
            if isinstance(label, bool) or label not in (0, 1):
                raise ValidationError(f"candidate {c.get('id')!r} has non-binary label {label!r}", qid)
            ntype = c.get("negative_type")
            if ntype is None:
                if strict and label == 0:
                    raise ValidationError(f"negative {c['id']!r} lacks negative_type (strict mode)", qid)
                ntype = NegativeType.UNSPECIFIED
            candidates.append(
                Candidate(str(c["id"]), c["text"], Timestamp.parse(c["timestamp"]), label, NegativeType(ntype))
            )
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed record: {exc}", qid) from None
    return validate_instance(Instance(query, tuple(candidates), objective))


def instance_to_record(inst: Instance) -> dict:
    return {
        "query_id": inst.query.id,
        "query_text": inst.query.text,
        "query_timestamp": inst.query.timestamp.isoformat(),
        "objective": inst.source_objective.value,
        "candidates": [
            {
                "id": c.id,
                "text": c.text,
                "timestamp": c.timestamp.isoformat(),
                "label": c.label,
                **({"negative_type": c.negative_type.value} if c.negative_type is not NegativeType.UNSPECIFIED else {}),
            }
            for c in inst.candidates
        ],
    }


def load_instances(path: str | os.PathLike, strict: bool = False) -> list[Instance]:
    """Parse and validate a JSONL dataset.

    Raises:
        ParseError: a line is not valid JSON (carries the 1-based line number).
        ValidationError: a record breaks an instance invariant (carries the query id).
        OSError: the file cannot be read.
    """
    instances: list[Instance] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), lineno) from None
            inst = instance_from_record(rec, strict=strict)
            if inst.query.id in seen:
                raise ValidationError("duplicate query id in file", inst.query.id)
            seen.add(inst.query.id)
            instances.append(inst)
    return instances


def dump_instances(instances: Iterable[Instance], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_record(inst), ensure_ascii=False) + "\n")


def split_instances(instances: Sequence[Instance], val_fraction: float = 0.5, seed: int = 0) -> TaskSplit:
    """Shuffle with ``seed`` and cut into disjoint train and validation parts."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie strictly between 0 and 1")
    if len(instances) < 2:
        raise ValueError("need at least two instances to split")
    items = list(instances)
    random.Random(seed).shuffle(items)
    n_val = min(len(items) - 1, max(1, round(len(items) * val_fraction)))
    return TaskSplit(train=items[n_val:], validation=items[:n_val])


def synthesize_nek_timestamps(
    instances: Sequence[Instance],
    seed: int,
    time_range: tuple[Timestamp, Timestamp] = DEFAULT_NEK_RANGE,
) -> list[Instance]:
    """Give every query and candidate an independent uniform timestamp in ``time_range``."""
    lo, hi = time_range
    if hi.epoch < lo.epoch:
        raise ValueError("empty timestamp range")
    rng = random.Random(seed)

    def draw() -> Timestamp:
        return Timestamp(rng.randint(lo.epoch, hi.epoch))

    out = []
    for inst in instances:
        query = replace(inst.query, timestamp=draw())
        cands = tuple(replace(c, timestamp=draw()) for c in inst.candidates)
        out.append(replace(inst, query=query, candidates=cands))
    return out


# -- synthetic fixtures --------------------------------------------------------
#
# Token budgets are chosen against the scripted backend (0.7 * overlap plus
# 0.3 * recency when triggered):
#   EK: query has 7 tokens; positive overlaps 5/7, the outdated negative 6/7,
#       insufficient negatives <= 4/7 and share the positive's date. Untriggered,
#       the outdated passage wins by 0.1; triggered, the positive (<= 31 days
#       old) gains >= 0.27 while the outdated one (>= 400 days old) gains nothing.
#   NEK: query has 9 tokens. Easy instances: positive 9/9 vs negatives <= 4/9,
#       a margin the 0.3 temporal bonus cannot close. Hard instances: a 9/9
#       distractor beats a 4/9 positive, which beats 0/9 fillers, in every case.

_SYLLABLES = ("bar", "cel", "dor", "fen", "gal", "hon", "kir", "lum", "mor", "nav",
              "ost", "pel", "quin", "ros", "sal", "tor", "vel", "wen", "yar", "zul")
_ROLES = ("coach", "chairman", "mayor", "captain", "director", "president", "editor", "curator")
_TEAM_KINDS = ("rovers", "united", "athletic", "wanderers", "city", "harbour", "academy", "society")
_FILLER = ("river", "autumn", "harvest", "granite", "meadow", "lantern", "copper", "orchard",
           "festival", "bridge", "museum", "railway", "market", "canal", "garden", "tower")


def _name(rng: random.Random, parts: int = 2) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(parts)).capitalize()


def _unique_names(rng: random.Random, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        name = _name(rng, 3)
        if name.lower() not in taken:
            taken.add(name.lower())
            out.append(name)
    return out


def generate_synthetic_ek(n_queries: int, seed: int, n_insufficient: int = 3) -> list[Instance]:
    """Evolving-knowledge fixture where only a recency-aware instruction ranks the positive first."""
    if n_queries < 1:
        raise ValueError("n_queries must be at least 1")
    if n_insufficient < 3:
        raise ValueError("need at least three insufficient negatives")
    rng = random.Random(seed)
    day = 86400
    base_lo = Timestamp.parse("2021-01-01T00:00:00Z").epoch
    base_hi = Timestamp.parse("2025-06-01T00:00:00Z").epoch
    out = []
    for n in range(n_queries):
        taken: set[str] = set()
        org, new_holder, old_holder = _unique_names(rng, 3, taken)
        kind = rng.choice(_TEAM_KINDS)
        role = rng.choice(_ROLES)
        tq = Timestamp(rng.randint(base_lo, base_hi))
        tp = Timestamp(tq.epoch - rng.randint(0, 30) * day - rng.randint(0, day - 1))
        to = Timestamp(tp.epoch - rng.randint(400, 2000) * day)
        query = Query(f"ek-{n:05d}", f"who is the {role} of {org} {kind}", tq)
        pos = Candidate("pos", f"{new_holder} was appointed the {role} of {org} {kind}", tp, 1)
        # overlap 6/7: is the {role} of {org} {kind}
        outdated = Candidate(
            "old", f"{old_holder} is the {role} of {org} {kind}", to, 0, NegativeType.OUTDATED
        )
        fillers = []
        for j in range(n_insufficient):
            words = rng.sample(_FILLER, 3)
            variant = j % 3
            if variant == 0:  # org, kind, the: 3/7
                text = f"{org} {kind} opened a new {words[0]} near the {words[1]}"
            elif variant == 1:  # role, of, org, the: 4/7
                text = f"A {role} of {org} spoke at the {words[0]} {words[1]} event"
            else:  # of, the, kind: 3/7
                text = f"Supporters of the {kind} gathered at the {words[0]} {words[2]}"
            fillers.append(Candidate(f"ins{j}", text, tp, 0, NegativeType.INSUFFICIENT))
        cands = [pos, outdated, *fillers]
        rng.shuffle(cands)
        out.append(validate_instance(Instance(query, tuple(cands), Objective.EK)))
    return out


def generate_synthetic_nek(n_queries: int, seed: int, hard_fraction: float = 0.2, pool_size: int = 6) -> list[Instance]:
    """Timeless fixture whose ranking does not depend on recency.

    Timestamps are placeholders; pass the result through
    :func:`synthesize_nek_timestamps`.
    """
    if n_queries < 1:
        raise ValueError("n_queries must be at least 1")
    if pool_size < 3:
        raise ValueError("pool_size must be at least 3")
    rng = random.Random(seed)
    epoch = Timestamp.parse("2020-01-01T00:00:00Z")
    out = []
    for n in range(n_queries):
        taken: set[str] = set()
        subject, other = _unique_names(rng, 2, taken)
        w = rng.sample(_FILLER, 8)
        # 9 distinct tokens
        qtext = f"which {w[0]} did {subject} build beside the old {w[1]}"
        qtokens = qtext.split()
        query = Query(f"nek-{n:05d}", qtext, epoch)
        hard = rng.random() < hard_fraction
        cands = []
        if hard:
            cands.append(Candidate("pos", f"{' '.join(qtokens[:4])} finally in spring", epoch, 1))
            cands.append(Candidate("dis", f"{qtext} remains unknown", epoch, 0, NegativeType.INSUFFICIENT))
            n_fill = pool_size - 2
            for j in range(n_fill):
                text = f"{other} painted a {w[2 + j % 6]} {w[(3 + j) % 6 + 2]} scene"
                cands.append(Candidate(f"neg{j}", text, epoch, 0, NegativeType.INSUFFICIENT))
        else:
            pos_text = f"{subject} did build the {w[0]} beside the old {w[1]} which stands today"
            cands.append(Candidate("pos", pos_text, epoch, 1))
            for j in range(pool_size - 1):
                keep = rng.sample(qtokens, rng.randint(0, 4))
                text = " ".join(keep + [other, "visited", "a", w[2 + j % 6]])
                cands.append(Candidate(f"neg{j}", text, epoch, 0, NegativeType.INSUFFICIENT))
        rng.shuffle(cands)
        out.append(validate_instance(Instance(query, tuple(cands), Objective.NEK)))
    return out
