"""Text-based genetic operators: error sets, textual-gradient mutation and contrastive crossover."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Sequence

from .backends import Backend, rank
from .core import Candidate, Instance, Instruction, Lineage, Query, Ranking, digest
from .errors import NoParsableOutput, PopulationTooSmall
from .operator_llm import (
    CROSSOVER,
    FORMAT_REMINDER,
    GRADIENT_APPLICATION,
    GRADIENT_ESTIMATION,
    OperatorLLM,
    fill_template,
    parse_blocks,
)
from .pareto import ScoredInstruction

log = logging.getLogger(__name__)

MAX_EXAMPLES_PER_CALL = 4
MAX_OFFENDERS_PER_EXAMPLE = 2
MAX_PASSAGE_CHARS = 600
TRUNCATION_MARKER = " [...truncated]"


@dataclass(frozen=True)
class ErrorInstance:
    """A query on which negatives (``offenders``) outranked the top positive."""

    query: Query
    positive: Candidate
    offenders: tuple[Candidate, ...]


@dataclass(frozen=True)
class TextualGradient:
    text: str
    source_instruction_id: str

    @property
    def digest(self) -> str:
        return digest(self.text, 12)


@dataclass
class ContrastiveSets:
    a_wins: list[ErrorInstance] = field(default_factory=list)
    b_wins: list[ErrorInstance] = field(default_factory=list)


def error_from_ranking(ranking: Ranking, instance: Instance) -> ErrorInstance | None:
    """Negatives ranked above the best-ranked positive, or None on success."""
    offenders = []
    for cid in ranking.order:
        cand = instance.candidate(cid)
        if cand.is_positive:
            if not offenders:
                return None
            return ErrorInstance(instance.query, cand, tuple(offenders))
        offenders.append(cand)
    return None


def compute_error_set(instruction: Instruction, batch: Sequence[Instance], backend: Backend) -> list[ErrorInstance]:
    errors = []
    for inst in batch:
        err = error_from_ranking(rank(backend, instruction, inst), inst)
        if err is not None:
            errors.append(err)
    return errors


# -- prompt serialization ----------------------------------------------------


def _truncate(text: str, limit: int = MAX_PASSAGE_CHARS) -> str:
    if len(text) <= limit:
        return text
    return text[:limit] + TRUNCATION_MARKER


def _render(text: str, ts) -> str:
    return f"{_truncate(text)}\nTimestamp: {ts.isoformat()}"


def format_error_examples(
    errors: Sequence[ErrorInstance],
    negative_label: str = "Negative Document",
    max_examples: int = MAX_EXAMPLES_PER_CALL,
) -> str:
    """Serialize up to ``max_examples`` errors, each with at most two offenders."""
    if not errors:
        return "(no examples)"
    chunks = []
    for n, err in enumerate(errors[:max_examples], start=1):
        lines = [
            f"## Example {n}",
            f"**Query:** {_render(err.query.text, err.query.timestamp)}",
            f"**Positive Document:** {_render(err.positive.text, err.positive.timestamp)}",
        ]
        for j, neg in enumerate(err.offenders[:MAX_OFFENDERS_PER_EXAMPLE], start=1):
            lines.append(f"**{negative_label} {j}:** {_render(neg.text, neg.timestamp)}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks)


def _ask(op_llm: OperatorLLM, template_id: str, prompt: str) -> list[str]:
    """One call plus a single re-ask with a format reminder if nothing parses."""
    blocks = parse_blocks(op_llm.complete(template_id, prompt))
    if blocks:
        return blocks
    log.info("%s reply had no <START>/<END> blocks; re-asking once", template_id)
    blocks = parse_blocks(op_llm.complete(template_id, prompt + FORMAT_REMINDER))
    if not blocks:
        raise NoParsableOutput(f"{template_id}: no delimited blocks in reply after retry")
    return blocks


def _fresh_children(
    texts: Sequence[str], lineage: Lineage, exclude: Sequence[str], limit: int
) -> list[Instruction]:
    seen = set(exclude)
    out = []
    for text in texts:
        if text in seen:
            continue
        seen.add(text)
        out.append(Instruction.create(text, lineage))
        if len(out) >= limit:
            break
    return out


# -- mutation ----------------------------------------------------------------


def estimate_gradients(
    op_llm: OperatorLLM, instruction: Instruction, errors: Sequence[ErrorInstance], num_gradients: int
) -> list[TextualGradient]:
    if not errors:
        raise ValueError("gradient estimation needs at least one error instance")
    prompt = fill_template(
        GRADIENT_ESTIMATION,
        current_prompt=instruction.text,
        error_string=format_error_examples(errors),
        num_gradients=num_gradients,
    )
    blocks = _ask(op_llm, GRADIENT_ESTIMATION, prompt)
    return [TextualGradient(b, instruction.id) for b in blocks[:num_gradients]]


def apply_gradient(
    op_llm: OperatorLLM,
    instruction: Instruction,
    errors: Sequence[ErrorInstance],
    gradient: TextualGradient,
    steps_per_gradient: int,
) -> list[Instruction]:
    prompt = fill_template(
        GRADIENT_APPLICATION,
        current_prompt=instruction.text,
        error_str=format_error_examples(errors),
        gradient_str=gradient.text,
        steps_per_gradient=steps_per_gradient,
    )
    blocks = _ask(op_llm, GRADIENT_APPLICATION, prompt)
    lineage = Lineage.mutation(instruction.id, gradient.digest)
    return _fresh_children(blocks, lineage, [instruction.text], steps_per_gradient)


# -- crossover ---------------------------------------------------------------


def select_crossover_pairs(
    population: Sequence[ScoredInstruction], num_pairs: int, rng: random.Random
) -> list[tuple[Instruction, Instruction]]:
    """Pick parent pairs, preferring complementary strengths.

    ``population`` carries training-batch utilities as objectives. A pair is
    complementary when one member is strictly better on EK and the other
    strictly better on NEK; such pairs are ranked by |dEK| * |dNEK| and
    returned EK-stronger parent first. Remaining slots are filled with the
    other distinct pairs in seeded random order.
    """
    if len(population) < 2:
        raise PopulationTooSmall("crossover needs at least two instructions")
    members = sorted(population, key=lambda m: m.id)
    complementary = []
    others = []
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            a, b = members[i], members[j]
            d_ek = a.objectives.ek - b.objectives.ek
            d_nek = a.objectives.nek - b.objectives.nek
            if d_ek * d_nek < 0:
                if d_ek < 0:
                    a, b = b, a
                complementary.append((abs(d_ek) * abs(d_nek), a, b))
            else:
                others.append((a, b))
    complementary.sort(key=lambda t: (-t[0], t[1].id, t[2].id))
    pairs = [(a.instruction, b.instruction) for _, a, b in complementary]
    rng.shuffle(others)
    pairs.extend((a.instruction, b.instruction) for a, b in others)
    return pairs[:num_pairs]


def build_contrastive_sets(
    pair: tuple[Instruction, Instruction],
    ek_batch: Sequence[Instance],
    nek_batch: Sequence[Instance],
    backend: Backend,
    max_examples: int = MAX_EXAMPLES_PER_CALL,
) -> ContrastiveSets:
    """EK wins of the first parent and NEK wins of the second.

    A parent wins an instance when it puts a positive at rank 1 and the other
    parent does not. Each recorded example lists the passages that outranked
    the positive under the losing parent.
    """
    a, b = pair
    sets = ContrastiveSets()
    for batch, winner, loser, bucket in ((ek_batch, a, b, sets.a_wins), (nek_batch, b, a, sets.b_wins)):
        for inst in batch:
            if len(bucket) >= max_examples:
                break
            if error_from_ranking(rank(backend, winner, inst), inst) is not None:
                continue
            loss = error_from_ranking(rank(backend, loser, inst), inst)
            if loss is not None:
                bucket.append(loss)
    return sets


def crossover(
    op_llm: OperatorLLM,
    p_a: Instruction,
    p_b: Instruction,
    sets: ContrastiveSets,
    num_crossovers: int,
) -> list[Instruction]:
    label = "Document preferred by the other prompt"
    prompt = fill_template(
        CROSSOVER,
        prompt_a=p_a.text,
        prompt_b=p_b.text,
        examples_a_wins=format_error_examples(sets.a_wins, label),
        examples_b_wins=format_error_examples(sets.b_wins, label),
        num_crossovers=num_crossovers,
    )
    blocks = _ask(op_llm, CROSSOVER, prompt)
    return _fresh_children(blocks, Lineage.crossover(p_a.id, p_b.id), [p_a.text, p_b.text], num_crossovers)
