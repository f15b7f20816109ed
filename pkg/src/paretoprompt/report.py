"""Run reports: per-round fronts, the final front, metric tables and plot-ready series."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .core import Instance, Instruction
from .metrics import MetricConfig, MetricReport, evaluate
from .optimizer import OptimizerConfig, RunState

SERIES_COLUMNS = ("round", "instruction_id", "ek", "nek", "on_front", "selected")


@dataclass
class Report:
    metadata: dict
    rounds: list[dict]
    final_front: list[dict]
    series: list[dict]
    metric_tables: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> Report:
        return cls(**{k: d[k] for k in ("metadata", "rounds", "final_front", "series", "metric_tables")})


def compute_metric_tables(
    state: RunState,
    ek: Sequence[Instance],
    nek: Sequence[Instance],
    backend,
    metric_config: MetricConfig | None = None,
) -> dict[str, dict[str, MetricReport]]:
    """Full metric reports on both task sets for the seed and every final-front instruction."""
    members: list[Instruction] = [state.seed_instruction]
    members += [m.instruction for m in state.population if m.id != state.seed_instruction.id]
    return {
        ins.id: {"EK": evaluate(ins, ek, backend, metric_config), "NEK": evaluate(ins, nek, backend, metric_config)}
        for ins in members
    }


def build_report(state: RunState, metric_tables: Mapping[str, Mapping[str, MetricReport]] | None = None) -> Report:
    config = OptimizerConfig.from_dict(state.config)
    metadata = {
        "config": state.config,
        "config_digest": config.digest(),
        "seed": config.seed,
        "rounds_completed": state.round,
        "seed_instruction": state.seed_instruction.to_dict(),
        **{k: v for k, v in state.metadata.items() if k not in ("config",)},
    }
    rounds = []
    series = []
    for rec in state.history:
        front = set(rec.front_ids)
        chosen = set(rec.selected_ids)
        rounds.append(
            {
                "round": rec.round,
                "num_candidates": len(rec.candidates),
                "num_mutants": rec.num_mutants,
                "num_crossovers": rec.num_crossovers,
                "front": [
                    {"id": c.id, "ek": c.objectives.ek, "nek": c.objectives.nek, "selected": c.id in chosen}
                    for c in rec.candidates
                    if c.id in front
                ],
            }
        )
        if rec.round == 0:
            continue
        for c in rec.candidates:
            series.append(
                {
                    "round": rec.round,
                    "instruction_id": c.id,
                    "ek": c.objectives.ek,
                    "nek": c.objectives.nek,
                    "on_front": c.id in front,
                    "selected": c.id in chosen,
                }
            )
    final_front = [
        {
            "id": m.id,
            "text": m.instruction.text,
            "ek": m.objectives.ek,
            "nek": m.objectives.nek,
            "lineage": m.instruction.lineage.to_dict(),
        }
        for m in sorted(state.population, key=lambda m: (-m.objectives.ek, -m.objectives.nek, m.id))
    ]
    tables = {
        iid: {obj: rep.to_dict() for obj, rep in per.items()} for iid, per in (metric_tables or {}).items()
    }
    return Report(metadata, rounds, final_front, series, tables)


def _fmt(v: float | None, scale: float = 100.0) -> str:
    return "-" if v is None else f"{v * scale:.2f}"


def render_markdown(report: Report) -> str:
    md = report.metadata
    lines = [
        "# Instruction optimization report",
        "",
        f"- rounds completed: {md['rounds_completed']}",
        f"- seed: {md['seed']}",
        f"- config digest: `{md['config_digest']}`",
        "",
        "## Final Pareto front",
        "",
        "| # | id | EK | NEK | instruction |",
        "|---|----|----|-----|-------------|",
    ]
    for n, m in enumerate(report.final_front, start=1):
        text = m["text"].replace("|", "\\|").replace("\n", " ")
        lines.append(f"| {n} | `{m['id']}` | {_fmt(m['ek'])} | {_fmt(m['nek'])} | {text} |")

    if report.metric_tables:
        seed_id = md["seed_instruction"]["id"]
        names = None
        rows = []
        order = [seed_id] + [m["id"] for m in report.final_front if m["id"] != seed_id]
        for n, iid in enumerate(order):
            per = report.metric_tables.get(iid)
            if per is None:
                continue
            names = names or list(per["EK"]["values"])
            label = "Base instruction" if iid == seed_id else f"Pareto Solution {n}"
            cells = [_fmt(per[obj]["values"][k]) for obj in ("EK", "NEK") for k in names]
            rows.append(f"| {label} | " + " | ".join(cells) + " |")
        if names:
            header = [f"EK {k.upper()}" for k in names] + [f"NEK {k.upper()}" for k in names]
            lines += ["", "## Metrics (x100)", "", "| Method | " + " | ".join(header) + " |",
                      "|---" * (len(header) + 1) + "|", *rows]

    lines += ["", "## Front per round", "", "| round | candidates | front size | kept | (EK, NEK) of kept |",
              "|---|---|---|---|---|"]
    for r in report.rounds:
        kept = [f"({_fmt(f['ek'])}, {_fmt(f['nek'])})" for f in r["front"] if f["selected"]]
        lines.append(
            f"| {r['round']} | {r['num_candidates']} | {len(r['front'])} | {len(kept)} | {' '.join(kept)} |"
        )
    return "\n".join(lines) + "\n"


def render_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SERIES_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report.series:
        writer.writerow({**row, "ek": repr(row["ek"]), "nek": repr(row["nek"]),
                         "on_front": int(row["on_front"]), "selected": int(row["selected"])})
    return buf.getvalue()


def write_report(
    state: RunState,
    fmt: str,
    path: str | os.PathLike,
    metric_tables: Mapping[str, Mapping[str, MetricReport]] | None = None,
) -> Report:
    report = build_report(state, metric_tables)
    if fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        text = render_csv(report)
    elif fmt == "markdown":
        text = render_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    Path(path).write_text(text, encoding="utf-8")
    return report
