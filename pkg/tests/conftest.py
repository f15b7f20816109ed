from __future__ import annotations

import pytest

from paretoprompt.core import Candidate, Instance, NegativeType, Objective, Query, Timestamp

T0 = Timestamp.parse("2024-06-01T00:00:00Z")


def make_instance(labels, qid="q1", query_text="who coaches the team", texts=None, types=None,
                  objective=Objective.EK, timestamps=None):
    """Instance with candidates c0..cN-1 carrying the given labels."""
    cands = []
    for i, lab in enumerate(labels):
        ntype = NegativeType.UNSPECIFIED
        if types is not None and types[i] is not None:
            ntype = NegativeType(types[i])
        cands.append(
            Candidate(
                f"c{i}",
                texts[i] if texts else f"passage {i}",
                timestamps[i] if timestamps else T0,
                lab,
                ntype,
            )
        )
    return Instance(Query(qid, query_text, T0), tuple(cands), objective)


class FixedScoreBackend:
    """Backend returning preset scores per (instruction, candidate id); counts calls."""

    def __init__(self, table, default=0.0):
        self.table = table
        self.default = default
        self.calls = 0

    def score(self, instruction, query, candidate):
        self.calls += 1
        per = self.table.get(instruction, self.table.get("*", {}))
        return per.get((query.id, candidate.id), per.get(candidate.id, self.default))


@pytest.fixture
def instance_factory():
    return make_instance


def synthetic_tasks(n_ek=100, n_nek=100):
    """EK/NEK splits used by the end-to-end tests (fixed seeds)."""
    from paretoprompt.dataio import (
        generate_synthetic_ek,
        generate_synthetic_nek,
        split_instances,
        synthesize_nek_timestamps,
    )

    ek = generate_synthetic_ek(n_ek, seed=1)
    nek = synthesize_nek_timestamps(generate_synthetic_nek(n_nek, seed=2), seed=3)
    return ek, nek, split_instances(ek, 0.5, seed=0), split_instances(nek, 0.5, seed=0)
