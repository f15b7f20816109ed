"""Domain types shared across the package, and timestamp conditioning of text."""

from __future__ import annotations

import calendar
import hashlib
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Mapping, Sequence

from .errors import DuplicateCandidateId, EmptyPool, NoPositive, ValidationError

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
TIMESTAMP_PREFIX = "\nTimestamp: "
_TIMESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True, order=True)
class Timestamp:
    """A UTC instant with one-second resolution, stored as epoch seconds."""

    epoch: int

    @classmethod
    def parse(cls, text: str) -> Timestamp:
        if not isinstance(text, str) or not _TIMESTAMP_RE.match(text):
            raise ValueError(f"timestamp must look like YYYY-MM-DDThh:mm:ssZ, got {text!r}")
        parsed = time.strptime(text, TIMESTAMP_FORMAT)
        return cls(calendar.timegm(parsed))

    @classmethod
    def from_datetime(cls, dt: datetime) -> Timestamp:
        if dt.tzinfo is None:
            raise ValueError("naive datetimes are ambiguous; attach a UTC tzinfo")
        return cls(int(dt.timestamp()))

    def to_datetime(self) -> datetime:
        return datetime.fromtimestamp(self.epoch, tz=timezone.utc)

    def isoformat(self) -> str:
        return time.strftime(TIMESTAMP_FORMAT, time.gmtime(self.epoch))

    def days_between(self, other: Timestamp) -> float:
        """Absolute distance to ``other`` in (fractional) days."""
        return abs(self.epoch - other.epoch) / SECONDS_PER_DAY

    def __str__(self) -> str:
        return self.isoformat()


def render_with_timestamp(text: str, t: Timestamp) -> str:
    """Append ``"\\nTimestamp: <t>"`` to ``text``.

    Query and candidate texts go through this before reaching a backend so the
    re-ranker can see when each was written.
    """
    return f"{text}{TIMESTAMP_PREFIX}{t.isoformat()}"


def strip_timestamp(rendered: str) -> str:
    """Inverse of :func:`render_with_timestamp`."""
    head, sep, tail = rendered.rpartition(TIMESTAMP_PREFIX)
    if not sep or not _TIMESTAMP_RE.match(tail):
        raise ValueError("text carries no timestamp suffix")
    return head


class NegativeType(str, Enum):
    OUTDATED = "outdated"
    INSUFFICIENT = "insufficient"
    UNSPECIFIED = "unspecified"


class Objective(str, Enum):
    EK = "EK"
    NEK = "NEK"


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    timestamp: Timestamp

    def rendered(self) -> str:
        return render_with_timestamp(self.text, self.timestamp)


@dataclass(frozen=True)
class Candidate:
    id: str
    text: str
    timestamp: Timestamp
    label: int
    negative_type: NegativeType = NegativeType.UNSPECIFIED

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"candidate {self.id!r} has non-binary label {self.label!r}")

    @property
    def is_positive(self) -> bool:
        return self.label == 1

    def rendered(self) -> str:
        return render_with_timestamp(self.text, self.timestamp)


@dataclass(frozen=True)
class Instance:
    """One query with its candidate pool and binary relevance labels."""

    query: Query
    candidates: tuple[Candidate, ...]
    source_objective: Objective = Objective.EK

    def __post_init__(self):
        if not isinstance(self.candidates, tuple):
            object.__setattr__(self, "candidates", tuple(self.candidates))

    @property
    def labels(self) -> dict[str, int]:
        return {c.id: c.label for c in self.candidates}

    @property
    def positives(self) -> list[Candidate]:
        return [c for c in self.candidates if c.is_positive]

    def candidate(self, candidate_id: str) -> Candidate:
        for c in self.candidates:
            if c.id == candidate_id:
                return c
        raise KeyError(candidate_id)


def validate_instance(inst: Instance) -> Instance:
    """Return ``inst`` unchanged if it satisfies the instance invariants."""
    qid = inst.query.id
    if not inst.query.text:
        raise ValidationError("query text is empty", qid)
    if not inst.candidates:
        raise EmptyPool("instance has no candidates", qid)
    seen: set[str] = set()
    for c in inst.candidates:
        if c.id in seen:
            raise DuplicateCandidateId(f"candidate id {c.id!r} appears twice", qid)
        seen.add(c.id)
    if not any(c.is_positive for c in inst.candidates):
        raise NoPositive("instance has no positive candidate", qid)
    return inst


@dataclass(frozen=True)
class Lineage:
    """How an instruction came to exist.

    ``kind`` is ``seed``, ``mutation`` (one parent plus the digest of the
    textual gradient that drove it) or ``crossover`` (two parents).
    """

    kind: str = "seed"
    parents: tuple[str, ...] = ()
    gradient_digest: str | None = None

    def __post_init__(self):
        expected = {"seed": 0, "mutation": 1, "crossover": 2}
        if self.kind not in expected:
            raise ValueError(f"unknown lineage kind {self.kind!r}")
        if len(self.parents) != expected[self.kind]:
            raise ValueError(f"{self.kind} lineage needs {expected[self.kind]} parent(s)")

    @classmethod
    def mutation(cls, parent_id: str, gradient_digest: str) -> Lineage:
        return cls("mutation", (parent_id,), gradient_digest)

    @classmethod
    def crossover(cls, parent_a: str, parent_b: str) -> Lineage:
        return cls("crossover", (parent_a, parent_b))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "parents": list(self.parents), "gradient_digest": self.gradient_digest}

    @classmethod
    def from_dict(cls, d: Mapping) -> Lineage:
        return cls(d["kind"], tuple(d["parents"]), d.get("gradient_digest"))


def digest(text: str, length: int = 16) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:length]


@dataclass(frozen=True)
class Instruction:
    id: str
    text: str
    lineage: Lineage = field(default_factory=Lineage)

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValidationError("instruction text is empty")

    @classmethod
    def create(cls, text: str, lineage: Lineage | None = None) -> Instruction:
        """Build an instruction whose id is derived from its text and lineage.

        Ids hash the parent ids, so a child can never collide with an ancestor
        even when an operator regenerates an older text.
        """
        lineage = lineage or Lineage()
        key = "|".join([lineage.kind, *lineage.parents, lineage.gradient_digest or "", text])
        prefix = {"seed": "s", "mutation": "m", "crossover": "x"}[lineage.kind]
        return cls(f"{prefix}-{digest(key, 12)}", text, lineage)

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "lineage": self.lineage.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> Instruction:
        return cls(d["id"], d["text"], Lineage.from_dict(d["lineage"]))


@dataclass(frozen=True)
class ObjectiveVector:
    """Estimated utilities on the evolving (EK) and non-evolving (NEK) task sets."""

    ek: float
    nek: float

    def __post_init__(self):
        for name, v in (("ek", self.ek), ("nek", self.nek)):
            if not (0.0 <= v <= 1.0):  # also rejects NaN
                raise ValueError(f"objective {name}={v!r} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float]:
        return (self.ek, self.nek)


@dataclass(frozen=True)
class Ranking:
    instruction_id: str
    query_id: str
    order: tuple[str, ...]
    scores: Mapping[str, float]

    def position(self, candidate_id: str) -> int:
        """1-based rank of a candidate."""
        return self.order.index(candidate_id) + 1

    def ranked_labels(self, labels: Mapping[str, int]) -> list[int]:
        return [labels[cid] for cid in self.order]


def order_by_score(candidate_ids: Sequence[str], scores: Mapping[str, float]) -> tuple[str, ...]:
    """Descending score; equal scores keep their original pool order."""
    indexed = sorted(enumerate(candidate_ids), key=lambda pair: (-scores[pair[1]], pair[0]))
    return tuple(cid for _, cid in indexed)
