"""Operator LLM clients, prompt templates and reply parsing.

The operator LLM realizes the text-based genetic operators (gradient
estimation, gradient application and crossover). Each call is identified by a
template id and carries the fully filled template text.
"""

from __future__ import annotations

import hashlib
import logging
import random
import re
import time
from functools import lru_cache
from importlib import resources
from typing import Callable, Mapping, Protocol, Union

import httpx

from .errors import OperatorCallFailed

log = logging.getLogger(__name__)

GRADIENT_ESTIMATION = "gradient_estimation"
GRADIENT_APPLICATION = "gradient_application"
CROSSOVER = "crossover"
TEMPLATE_IDS = (GRADIENT_ESTIMATION, GRADIENT_APPLICATION, CROSSOVER)

TEMPLATE_FIELDS = {
    GRADIENT_ESTIMATION: ("current_prompt", "error_string", "num_gradients"),
    GRADIENT_APPLICATION: ("current_prompt", "error_str", "gradient_str", "steps_per_gradient"),
    CROSSOVER: ("prompt_a", "prompt_b", "examples_a_wins", "examples_b_wins", "num_crossovers"),
}

FORMAT_REMINDER = (
    "\n\nIMPORTANT: your previous answer could not be parsed. "
    "Wrap every item individually between <START> and <END>."
)

_BLOCK_RE = re.compile(r"<START>((?:(?!<START>).)*?)<END>", re.DOTALL)


@lru_cache(maxsize=None)
def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise KeyError(f"unknown template {template_id!r}")
    return resources.files("paretoprompt").joinpath("templates", f"{template_id}.txt").read_text("utf-8")


def fill_template(template_id: str, **fields) -> str:
    expected = set(TEMPLATE_FIELDS[template_id])
    if set(fields) != expected:
        raise KeyError(f"{template_id} needs fields {sorted(expected)}, got {sorted(fields)}")
    return load_template(template_id).format_map({k: str(v) for k, v in fields.items()})


def parse_blocks(reply: str) -> list[str]:
    """Texts enclosed by matched ``<START>``/``<END>`` pairs, stripped.

    An ``<END>`` closes the nearest preceding ``<START>``; stray delimiters are
    ignored and blank blocks dropped.
    """
    blocks = (m.group(1).strip() for m in _BLOCK_RE.finditer(reply))
    return [b for b in blocks if b]


class OperatorLLM(Protocol):
    def complete(self, template_id: str, prompt: str) -> str: ...


class HttpChatOperatorLLM:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 0.7,
        seed: int | None = None,
        params: Mapping | None = None,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.temperature = temperature
        self.seed = seed
        self.params = dict(params or {})
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout)

    def payload(self, prompt: str) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            **self.params,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body

    def complete(self, template_id: str, prompt: str) -> str:
        body = self.payload(prompt)
        last = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.url, json=body, headers=self._headers)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise OperatorCallFailed(f"{template_id}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise OperatorCallFailed(f"{template_id}: malformed completion ({exc})") from None
            if not isinstance(content, str):
                raise OperatorCallFailed(f"{template_id}: completion content is not text")
            return content
        raise OperatorCallFailed(f"{template_id}: gave up after {self.max_retries + 1} attempts ({last})")

    def close(self) -> None:
        self._client.close()


# -- deterministic mock ------------------------------------------------------

_REASONS = (
    "The prompt never tells the model to compare document timestamps with the query timestamp, "
    "so passages describing an earlier state of the world win on keyword overlap.",
    "The prompt rewards surface similarity to the query and gives no rule for choosing between "
    "several plausible passages that disagree with each other.",
    "The prompt does not ask for the passage that directly answers the question, so loosely "
    "related background text is scored as highly as the answer.",
    "The prompt is generic and says nothing about whether facts may have changed over time.",
)

# two clauses per gradient reason, so different gradients yield different mutants
_RECENCY_CLAUSES = (
    "Prefer the most recent passage that is valid as of the query timestamp.",
    "Check each document timestamp and demote passages superseded by more recent facts.",
    "Favor up-to-date information over older descriptions of the same fact.",
    "When passages conflict, trust the latest one that precedes the query time.",
    "Rank documents reflecting the current state of affairs above outdated ones.",
    "Treat an answer as correct only if it is still current at the query timestamp.",
    "Assume facts may have changed and prefer the latest valid description.",
    "Use timestamps to decide which of several matching passages is up-to-date.",
)

_NEUTRAL_CLAUSES = (
    "Focus on passages that directly answer the question.",
    "Ignore passages that only mention the topic without answering it.",
    "Reward passages containing the specific entity named in the query.",
    "Penalize passages that discuss a different entity with a similar name.",
    "Prefer concise passages with a clear, factual answer.",
    "Do not reward keyword overlap that lacks an actual answer.",
    "Judge relevance by whether the passage resolves the information need.",
    "Prefer passages whose subject matches the query subject exactly.",
)

_QUOTED_RE = re.compile(r'`"(.*)"`[ \t]*$', re.MULTILINE)

Reply = Union[str, Callable[[str, str], str]]


def _sentences(text: str) -> list[str]:
    parts = re.split(r"(?<=[.!?])\s+", text.strip())
    return [p for p in parts if p]


class MockOperatorLLM:
    """Deterministic offline operator LLM.

    Replies depend only on (template id, SHA-256 of the filled prompt, seed).
    Gradient applications append a clause to the parent instruction; with
    ``inject_trigger`` the clauses speak about recency. Crossover merges the
    sentences of both parents. ``canned`` overrides the reply for a template
    with a fixed string or a ``(template_id, prompt) -> str`` callable.
    """

    def __init__(
        self,
        seed: int = 0,
        inject_trigger: bool = True,
        blocks_per_reply: int | None = None,
        canned: Mapping[str, Reply] | None = None,
    ):
        self.seed = seed
        self.inject_trigger = inject_trigger
        self.blocks_per_reply = blocks_per_reply
        self.canned = dict(canned or {})
        self.calls: list[tuple[str, str]] = []

    def _rng(self, template_id: str, prompt: str) -> random.Random:
        h = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        key = hashlib.sha256(f"{self.seed}|{template_id}|{h}".encode()).hexdigest()
        return random.Random(int(key[:16], 16))

    @staticmethod
    def _requested(prompt: str, default: int = 2) -> int:
        m = re.search(r"(?:Give |\*\*)(\d+)(?: reasons|\*\*)", prompt)
        return int(m.group(1)) if m else default

    def complete(self, template_id: str, prompt: str) -> str:
        self.calls.append((template_id, prompt))
        if template_id in self.canned:
            reply = self.canned[template_id]
            return reply(template_id, prompt) if callable(reply) else reply
        rng = self._rng(template_id, prompt)
        n = self.blocks_per_reply or self._requested(prompt)
        quoted = _QUOTED_RE.findall(prompt)
        if template_id == GRADIENT_ESTIMATION:
            blocks = rng.sample(_REASONS, min(n, len(_REASONS)))
        elif template_id == GRADIENT_APPLICATION:
            blocks = self._mutants(prompt, quoted[0] if quoted else "", n, rng)
        elif template_id == CROSSOVER:
            a, b = (quoted + ["", ""])[:2]
            blocks = self._hybrids(a, b, n, rng)
        else:
            raise OperatorCallFailed(f"mock has no behaviour for template {template_id!r}")
        return "\n".join(f"<START>{b}<END>" for b in blocks)

    def _mutants(self, prompt: str, parent: str, n: int, rng: random.Random) -> list[str]:
        pool = _RECENCY_CLAUSES if self.inject_trigger else _NEUTRAL_CLAUSES
        reason = next((i for i, r in enumerate(_REASONS) if r in prompt), None)
        if reason is None:
            clauses = list(pool)
            rng.shuffle(clauses)
        else:
            clauses = [pool[2 * reason], pool[2 * reason + 1]]
        fresh = [c for c in clauses if c not in parent]
        out = [f"{parent} {c}".strip() for c in fresh[:n]]
        i = 0
        while len(out) < n:
            i += 1
            tag = "" if reason is None else f"{reason}."
            out.append(f"{parent} {clauses[i % len(clauses)]} (variant {tag}{i})".strip())
        return out

    @staticmethod
    def _hybrids(a: str, b: str, n: int, rng: random.Random) -> list[str]:
        sa, sb = _sentences(a), _sentences(b)
        variants = [
            sa + [s for s in sb if s not in sa],
            sb + [s for s in sa if s not in sb],
        ]
        union = variants[0]
        for _ in range(4 * n):
            if len(variants) >= n:
                break
            shuffled = union[:]
            rng.shuffle(shuffled)
            variants.append(shuffled)
        out: list[str] = []
        for v in variants:
            text = " ".join(v)
            if text and text not in out:
                out.append(text)
        return out[:n]
