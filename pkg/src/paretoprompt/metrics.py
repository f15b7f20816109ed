"""Ranking metrics over binary relevance, plus the obsolete ratio.

Every metric accepts either a :class:`~paretoprompt.core.Ranking` or a plain
sequence of candidate ids (best first), together with a mapping from candidate
id to its 0/1 label.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

from .backends import rank
from .core import Instance, Instruction, NegativeType, Ranking
from .errors import CutoffOutOfRange, EmptyQuerySet, NoErrors, UnspecifiedNegativeType

RankingLike = Union[Ranking, Sequence[str]]

DEFAULT_CUTOFFS = (5, 10)


def _order(ranking: RankingLike) -> Sequence[str]:
    return ranking.order if isinstance(ranking, Ranking) else ranking


def _gains(ranking: RankingLike, labels: Mapping[str, int]) -> list[int]:
    return [int(labels[cid]) for cid in _order(ranking)]


def _check_cutoff(k: int) -> None:
    if not isinstance(k, int) or k < 1:
        raise CutoffOutOfRange(f"cutoff must be a positive integer, got {k!r}")


def _first_positive_rank(gains: Sequence[int]) -> int | None:
    for i, g in enumerate(gains, start=1):
        if g:
            return i
    return None


def precision_at_k(ranking: RankingLike, labels: Mapping[str, int], k: int) -> float:
    gains = _gains(ranking, labels)
    _check_cutoff(k)
    if k > len(gains):
        raise CutoffOutOfRange(f"cutoff {k} exceeds pool size {len(gains)}")
    return sum(gains[:k]) / k


def average_precision(ranking: RankingLike, labels: Mapping[str, int]) -> float:
    """Mean of precision@i over the ranks i that hold a positive; 0 without positives."""
    gains = _gains(ranking, labels)
    n_pos = sum(gains)
    if n_pos == 0:
        return 0.0
    hits = 0
    total = 0.0
    for i, g in enumerate(gains, start=1):
        if g:
            hits += 1
            total += hits / i
    return total / n_pos


def mean_average_precision(pairs: Iterable[tuple[RankingLike, Mapping[str, int]]]) -> float:
    aps = [average_precision(r, lab) for r, lab in pairs]
    if not aps:
        raise EmptyQuerySet("MAP needs at least one query")
    return math.fsum(aps) / len(aps)


def reciprocal_rank_at_k(ranking: RankingLike, labels: Mapping[str, int], k: int) -> float:
    _check_cutoff(k)
    r1 = _first_positive_rank(_gains(ranking, labels))
    if r1 is None or r1 > k:
        return 0.0
    return 1.0 / r1


def ndcg_at_k(ranking: RankingLike, labels: Mapping[str, int], k: int) -> float:
    _check_cutoff(k)
    gains = _gains(ranking, labels)
    dcg = math.fsum(g / math.log2(i + 1) for i, g in enumerate(gains[:k], start=1))
    n_ideal = min(k, sum(gains))
    idcg = math.fsum(1.0 / math.log2(i + 1) for i in range(1, n_ideal + 1))
    if idcg == 0:
        return 0.0
    return dcg / idcg


def hit_rate_at_k(ranking: RankingLike, labels: Mapping[str, int], k: int) -> float:
    _check_cutoff(k)
    r1 = _first_positive_rank(_gains(ranking, labels))
    return 1.0 if r1 is not None and r1 <= k else 0.0


def obsolete_counts(ranking: RankingLike, instance: Instance, strict: bool = True) -> tuple[int, int]:
    """(outdated, total) counts of negatives ranked above the top positive."""
    by_id = {c.id: c for c in instance.candidates}
    outdated = total = 0
    for cid in _order(ranking):
        cand = by_id[cid]
        if cand.is_positive:
            break
        if cand.negative_type is NegativeType.UNSPECIFIED and strict:
            raise UnspecifiedNegativeType(
                f"negative {cid!r} above the positive has no negative_type", instance.query.id
            )
        total += 1
        if cand.negative_type is NegativeType.OUTDATED:
            outdated += 1
    return outdated, total


def obsolete_ratio(pairs: Iterable[tuple[RankingLike, Instance]], strict: bool = True) -> float:
    """Pooled share of outdated passages among negatives ranked above the positive.

    Counts are summed over all queries before dividing. In non-strict mode a
    negative without a type annotation counts toward the denominator only.

    Raises:
        NoErrors: no query ranks any negative above its positive.
    """
    outdated = total = 0
    for ranking, inst in pairs:
        o, t = obsolete_counts(ranking, inst, strict=strict)
        outdated += o
        total += t
    if total == 0:
        raise NoErrors("no negative ranked above a positive")
    return outdated / total


# -- utilities and aggregate reports ----------------------------------------

UtilityFn = Callable[[RankingLike, Mapping[str, int]], float]

_CUTOFF_METRICS = {
    "mrr": reciprocal_rank_at_k,
    "ndcg": ndcg_at_k,
    "hit_rate": hit_rate_at_k,
    "p": precision_at_k,
}
_NAME_RE = re.compile(r"^(mrr|ndcg|hit_rate|p)@(\d+)$")


def utility_function(name: str) -> UtilityFn:
    """Resolve a metric name such as ``map`` or ``ndcg@10`` to a per-query function."""
    if name == "map":
        return average_precision
    m = _NAME_RE.match(name)
    if not m:
        raise ValueError(f"unknown utility metric {name!r}")
    fn = _CUTOFF_METRICS[m.group(1)]
    k = int(m.group(2))
    _check_cutoff(k)
    return lambda ranking, labels: fn(ranking, labels, k)


@dataclass(frozen=True)
class MetricConfig:
    cutoffs: tuple[int, ...] = DEFAULT_CUTOFFS
    utility: str = "map"
    obsolete_ratio: bool = True
    strict: bool = False

    def metric_names(self) -> list[str]:
        names = ["map"]
        for prefix in ("mrr", "ndcg", "hit_rate"):
            names.extend(f"{prefix}@{k}" for k in self.cutoffs)
        return names


@dataclass
class MetricReport:
    values: dict[str, float]
    cutoffs: tuple[int, ...]
    num_queries: int
    obsolete_ratio: float | None = None
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def to_dict(self) -> dict:
        return {
            "values": dict(self.values),
            "cutoffs": list(self.cutoffs),
            "num_queries": self.num_queries,
            "obsolete_ratio": self.obsolete_ratio,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> MetricReport:
        return cls(dict(d["values"]), tuple(d["cutoffs"]), d["num_queries"], d.get("obsolete_ratio"))


def report_from_rankings(
    rankings: Sequence[Ranking], instances: Sequence[Instance], config: MetricConfig | None = None
) -> MetricReport:
    config = config or MetricConfig()
    if not instances:
        raise EmptyQuerySet("cannot evaluate an empty query set")
    values: dict[str, float] = {}
    for name in config.metric_names():
        fn = utility_function(name)
        per_query = [fn(r, inst.labels) for r, inst in zip(rankings, instances)]
        values[name] = math.fsum(per_query) / len(per_query)
    ratio = None
    if config.obsolete_ratio:
        try:
            ratio = obsolete_ratio(zip(rankings, instances), strict=config.strict)
        except NoErrors:
            ratio = None
    return MetricReport(values, tuple(config.cutoffs), len(instances), ratio)


def evaluate(
    instruction: Instruction | str,
    instances: Sequence[Instance],
    backend,
    metric_config: MetricConfig | None = None,
) -> MetricReport:
    """Rank every instance under ``instruction`` and aggregate the configured metrics."""
    if not instances:
        raise EmptyQuerySet("cannot evaluate an empty query set")
    rankings = [rank(backend, instruction, inst) for inst in instances]
    return report_from_rankings(rankings, instances, metric_config)
