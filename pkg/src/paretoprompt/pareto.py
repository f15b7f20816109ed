"""Dominance, non-dominated fronts and crowding-distance pruning for two objectives (both maximized)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import Instruction, ObjectiveVector
from .errors import EmptyPool


@dataclass(frozen=True)
class ScoredInstruction:
    instruction: Instruction
    objectives: ObjectiveVector

    @property
    def id(self) -> str:
        return self.instruction.id

    def to_dict(self) -> dict:
        return {
            "instruction": self.instruction.to_dict(),
            "ek": self.objectives.ek,
            "nek": self.objectives.nek,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ScoredInstruction:
        return cls(Instruction.from_dict(d["instruction"]), ObjectiveVector(d["ek"], d["nek"]))


def dominates(a: ObjectiveVector, b: ObjectiveVector) -> bool:
    """True iff ``a`` is at least as good as ``b`` everywhere and differs somewhere."""
    return a.ek >= b.ek and a.nek >= b.nek and (a.ek, a.nek) != (b.ek, b.nek)


def dedupe(pool: Sequence[ScoredInstruction]) -> list[ScoredInstruction]:
    """Drop members whose text and objectives both repeat an earlier member."""
    seen: set[tuple[str, float, float]] = set()
    out = []
    for m in pool:
        key = (m.instruction.text, m.objectives.ek, m.objectives.nek)
        if key not in seen:
            seen.add(key)
            out.append(m)
    return out


def pareto_front(pool: Sequence[ScoredInstruction]) -> list[ScoredInstruction]:
    """Non-dominated members of ``pool``, in pool order.

    Uses a sort-and-sweep: after ordering by (EK desc, NEK desc) a member is
    dominated iff some earlier member with a distinct vector has NEK >= its NEK.
    """
    if not pool:
        raise EmptyPool("cannot take the front of an empty pool")
    members = dedupe(pool)
    order = sorted(range(len(members)), key=lambda i: (-members[i].objectives.ek, -members[i].objectives.nek))
    keep: set[int] = set()
    best_nek = -math.inf  # best NEK among strictly-better-EK groups processed so far
    i = 0
    while i < len(order):
        # group members sharing an EK value
        j = i
        ek = members[order[i]].objectives.ek
        while j < len(order) and members[order[j]].objectives.ek == ek:
            j += 1
        group = order[i:j]
        top_nek = members[group[0]].objectives.nek
        for idx in group:
            nek = members[idx].objectives.nek
            if nek == top_nek and nek > best_nek:
                keep.add(idx)
        best_nek = max(best_nek, top_nek)
        i = j
    return [m for i, m in enumerate(members) if i in keep]


def crowding_distance(front: Sequence[ScoredInstruction]) -> dict[str, float]:
    """Sum over both objectives of the normalized gap between each member's neighbours.

    Per objective the members are sorted ascending (ties by id); the two ends
    get infinity and an objective whose range is zero adds nothing to interior
    members.
    """
    dist = {m.id: 0.0 for m in front}
    if len(front) <= 2:
        return {k: math.inf for k in dist}
    for attr in ("ek", "nek"):
        ordered = sorted(front, key=lambda m: (getattr(m.objectives, attr), m.id))
        lo = getattr(ordered[0].objectives, attr)
        hi = getattr(ordered[-1].objectives, attr)
        dist[ordered[0].id] = math.inf
        dist[ordered[-1].id] = math.inf
        span = hi - lo
        if span == 0:
            continue
        for k in range(1, len(ordered) - 1):
            gap = getattr(ordered[k + 1].objectives, attr) - getattr(ordered[k - 1].objectives, attr)
            dist[ordered[k].id] += gap / span
    return dist


def _preference_key(m: ScoredInstruction, dist: Mapping[str, float]):
    return (-dist[m.id], -m.objectives.ek, -m.objectives.nek, m.id)


def select_top_by_crowding(front: Sequence[ScoredInstruction], budget: int) -> list[ScoredInstruction]:
    """Prune ``front`` to ``budget`` members, keeping the least crowded.

    Ties fall back to higher EK, then higher NEK, then instruction id. With a
    budget of at least two, the best-EK and best-NEK members always survive.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if len(front) <= budget:
        return list(front)
    dist = crowding_distance(front)
    ranked = sorted(front, key=lambda m: _preference_key(m, dist))
    if budget == 1:
        return ranked[:1]
    best_ek = min(front, key=lambda m: (-m.objectives.ek, -m.objectives.nek, m.id))
    best_nek = min(front, key=lambda m: (-m.objectives.nek, -m.objectives.ek, m.id))
    chosen = [best_ek] + ([best_nek] if best_nek.id != best_ek.id else [])
    for m in ranked:
        if len(chosen) >= budget:
            break
        if all(m.id != c.id for c in chosen):
            chosen.append(m)
    return sorted(chosen, key=lambda m: _preference_key(m, dist))
