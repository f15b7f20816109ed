"""Re-ranker backends: the pointwise scoring contract and the ranking it induces.

A backend scores one (instruction, query, candidate) triple at a time and
returns a relevance value in [0, 1]. Three implementations ship here:

* :class:`ScriptedBackend` - deterministic lexical-overlap scorer whose
  temporal term switches on only when the instruction asks for recency.
* :class:`HttpBackend` - POSTs rendered texts to a scoring server.
* :class:`TempRALMBackend` - adds a decaying time-proximity bonus to an
  inner backend's semantic score.

:class:`CachedBackend` wraps any of them.
"""

from __future__ import annotations

import logging
import threading
import time
from functools import lru_cache
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Protocol, runtime_checkable

import httpx

from .core import Candidate, Instance, Instruction, Query, Ranking, digest, order_by_score
from .errors import BackendTimeout, BadResponse, ConfigError, RetriesExhausted

log = logging.getLogger(__name__)

SEMANTIC_WEIGHT = 0.7
DEFAULT_TEMPORAL_WEIGHT = 0.3
DEFAULT_HORIZON_DAYS = 365.0
DEFAULT_TRIGGER_TOKENS = ("recent", "up-to-date", "latest", "current")


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class ScoreRequest:
    instruction: str
    query_text: str
    candidate_text: str

    @classmethod
    def build(cls, instruction: str, query: Query, candidate: Candidate) -> ScoreRequest:
        return cls(instruction, query.rendered(), candidate.rendered())

    def to_json(self) -> dict:
        return {"instruction": self.instruction, "query": self.query_text, "document": self.candidate_text}


@runtime_checkable
class Backend(Protocol):
    def score(self, instruction: str, query: Query, candidate: Candidate) -> float: ...


@dataclass
class BackendConfig:
    kind: str = "scripted"
    endpoint: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    trigger_tokens: tuple[str, ...] = DEFAULT_TRIGGER_TOKENS
    temporal_weight: float = DEFAULT_TEMPORAL_WEIGHT
    horizon_days: float = DEFAULT_HORIZON_DAYS
    lam: float = 0.2
    inner: BackendConfig | None = None

    def __post_init__(self):
        if self.kind not in ("http", "scripted", "tempralm"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if not 0.0 <= self.temporal_weight <= 1.0:
            raise ConfigError("temporal_weight must lie in [0, 1]")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.horizon_days <= 0:
            raise ConfigError("horizon_days must be positive")
        if self.kind == "http" and not self.endpoint:
            raise ConfigError("http backend needs an endpoint")
        if self.kind == "tempralm" and self.inner is None:
            raise ConfigError("tempralm backend needs an inner backend config")


def make_backend(config: BackendConfig) -> Backend:
    if config.kind == "scripted":
        return ScriptedBackend(config.trigger_tokens, config.temporal_weight, config.horizon_days)
    if config.kind == "http":
        return HttpBackend(config.endpoint, timeout=config.timeout, max_retries=config.max_retries)
    return TempRALMBackend(make_backend(config.inner), lam=config.lam)


@lru_cache(maxsize=1 << 16)
def _tokens(text: str) -> frozenset[str]:
    return frozenset(text.lower().split())


def lexical_overlap(query_text: str, candidate_text: str) -> float:
    """Share of the query's distinct lower-cased tokens that also occur in the candidate."""
    q = _tokens(query_text)
    if not q:
        return 0.0
    return len(q & _tokens(candidate_text)) / len(q)


class ScriptedBackend:
    """Deterministic stand-in for an instruction-following re-ranker.

    score = 0.7 * overlap + w * recency, where ``w`` is the temporal weight if
    the instruction mentions any trigger token (case-insensitive substring)
    and 0 otherwise, and recency decays linearly to 0 at ``horizon_days``.
    """

    def __init__(
        self,
        trigger_tokens: Iterable[str] = DEFAULT_TRIGGER_TOKENS,
        temporal_weight: float = DEFAULT_TEMPORAL_WEIGHT,
        horizon_days: float = DEFAULT_HORIZON_DAYS,
    ):
        self.trigger_tokens = tuple(t.lower() for t in trigger_tokens)
        self.temporal_weight = temporal_weight
        self.horizon_days = horizon_days

    def triggered(self, instruction: str) -> bool:
        low = instruction.lower()
        return any(tok in low for tok in self.trigger_tokens)

    def recency(self, query: Query, candidate: Candidate) -> float:
        return max(0.0, 1.0 - query.timestamp.days_between(candidate.timestamp) / self.horizon_days)

    def score(self, instruction: str, query: Query, candidate: Candidate) -> float:
        semantic = SEMANTIC_WEIGHT * lexical_overlap(query.text, candidate.text)
        w = self.temporal_weight if self.triggered(instruction) else 0.0
        return _clamp01(semantic + w * self.recency(query, candidate))


def scripted_score(config: BackendConfig, instruction: str, q: Query, c: Candidate) -> float:
    if config.kind != "scripted":
        raise ConfigError("scripted_score needs a scripted backend config")
    return ScriptedBackend(config.trigger_tokens, config.temporal_weight, config.horizon_days).score(instruction, q, c)


def tempralm_score(lam: float, semantic_score: float, query_ts, candidate_ts) -> float:
    """Semantic score plus ``lam / (1 + days apart)``, clamped to [0, 1]."""
    return _clamp01(semantic_score + lam / (1.0 + query_ts.days_between(candidate_ts)))


class TempRALMBackend:
    def __init__(self, inner: Backend, lam: float = 0.2):
        if lam < 0:
            raise ConfigError("lambda must be non-negative")
        self.inner = inner
        self.lam = lam

    def score(self, instruction: str, query: Query, candidate: Candidate) -> float:
        s = self.inner.score(instruction, query, candidate)
        return tempralm_score(self.lam, s, query.timestamp, candidate.timestamp)


class HttpBackend:
    """Scores via ``POST endpoint`` with ``{"instruction","query","document"}``.

    The server answers ``{"score": float in [0, 1]}``. 429 and 5xx responses,
    timeouts and connection errors are retried with exponential backoff; any
    other 4xx, or a malformed body, is a :class:`BadResponse`.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        headers: Mapping[str, str] | None = None,
    ):
        self.endpoint = endpoint
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._headers = dict(headers or {})
        self._client = client or httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def score(self, instruction: str, query: Query, candidate: Candidate) -> float:
        req = ScoreRequest.build(instruction, query, candidate)
        ids = dict(query_id=query.id, candidate_id=candidate.id)
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json=req.to_json(), headers=self._headers)
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"request timed out: {exc}", **ids)
                continue
            except httpx.TransportError as exc:
                last = RetriesExhausted(f"transport error: {exc}", **ids)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = RetriesExhausted(f"server answered HTTP {resp.status_code}", **ids)
                log.debug("retryable HTTP %s from %s", resp.status_code, self.endpoint)
                continue
            if resp.status_code >= 400:
                raise BadResponse(f"server answered HTTP {resp.status_code}", **ids)
            return self._parse(resp, ids)
        if isinstance(last, BackendTimeout):
            raise last
        raise RetriesExhausted(f"gave up after {self.max_retries + 1} attempts: {last}", **ids)

    @staticmethod
    def _parse(resp: httpx.Response, ids: dict) -> float:
        try:
            value = resp.json()["score"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BadResponse(f"response lacks a numeric 'score': {exc}", **ids) from None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
            raise BadResponse(f"score {value!r} is not a number in [0, 1]", **ids)
        return float(value)


CacheKey = tuple[str, str, str, str]


class CachedBackend:
    """Memoizes scores keyed on (instruction digest, objective, query id, candidate id)."""

    def __init__(self, inner: Backend, cache: dict[CacheKey, float] | None = None):
        self.inner = inner
        self.cache: dict[CacheKey, float] = cache if cache is not None else {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self._objective: str = ""

    @staticmethod
    def key(instruction: str, objective: str, query_id: str, candidate_id: str) -> CacheKey:
        return (digest(instruction, 32), objective, query_id, candidate_id)

    def score(self, instruction: str, query: Query, candidate: Candidate, objective: str = "") -> float:
        k = self.key(instruction, objective, query.id, candidate.id)
        value = self.cache.get(k)
        if value is not None:
            with self._lock:
                self.hits += 1
            return value
        value = self.inner.score(instruction, query, candidate)
        with self._lock:
            self.misses += 1
            self.cache[k] = value
        return value

    def entries(self) -> list[list]:
        return [[*k, v] for k, v in sorted(self.cache.items())]

    @staticmethod
    def load_entries(rows: Iterable[list]) -> dict[CacheKey, float]:
        return {(r[0], r[1], r[2], r[3]): float(r[4]) for r in rows}


def cached(backend: Backend, cache: dict[CacheKey, float] | None = None) -> CachedBackend:
    return CachedBackend(backend, cache)


def rank(backend: Backend, instruction: Instruction | str, instance: Instance) -> Ranking:
    """Score every candidate and order by descending score, ties by pool position."""
    if isinstance(instruction, Instruction):
        text, iid = instruction.text, instruction.id
    else:
        text, iid = instruction, digest(instruction, 12)
    q = instance.query
    if isinstance(backend, CachedBackend):
        objective = instance.source_objective.value
        scores = {c.id: backend.score(text, q, c, objective) for c in instance.candidates}
    else:
        scores = {c.id: backend.score(text, q, c) for c in instance.candidates}
    order = order_by_score([c.id for c in instance.candidates], scores)
    return Ranking(iid, q.id, order, scores)
