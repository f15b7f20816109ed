"""Command-line entry point.

Environment variables (values are never logged):

    PARETOPROMPT_RERANKER_URL      scoring endpoint for ``--backend http``
    PARETOPROMPT_OPERATOR_URL      base URL of an OpenAI-compatible API for ``--operator http``
    PARETOPROMPT_OPERATOR_MODEL    model name for the operator LLM
    PARETOPROMPT_OPERATOR_API_KEY  bearer token for the operator LLM

Exit codes: 0 success, 2 validation error, 3 backend/operator failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .backends import BackendConfig, make_backend
from .dataio import (
    dump_instances,
    generate_synthetic_ek,
    generate_synthetic_nek,
    load_instances,
    split_instances,
    synthesize_nek_timestamps,
)
from .errors import BackendError, CorruptCheckpoint, OperatorError, ValidationError
from .metrics import MetricConfig, evaluate
from .operator_llm import HttpChatOperatorLLM, MockOperatorLLM
from .optimizer import (
    DEFAULT_INSTRUCTION,
    OptimizerConfig,
    checkpoint_load,
    init_state,
    run_optimization,
)
from .report import compute_metric_tables, write_report

log = logging.getLogger("paretoprompt")

EXIT_OK, EXIT_VALIDATION, EXIT_BACKEND, EXIT_IO = 0, 2, 3, 4


def _backend(args):
    url = args.backend_url or os.environ.get("PARETOPROMPT_RERANKER_URL")
    if args.backend == "tempralm":
        inner = BackendConfig(kind=args.tempralm_inner, endpoint=url)
        cfg = BackendConfig(kind="tempralm", inner=inner, lam=args.tempralm_lambda)
    else:
        cfg = BackendConfig(kind=args.backend, endpoint=url)
    return make_backend(cfg)


def _operator(args):
    if args.operator == "mock":
        return MockOperatorLLM(seed=args.operator_seed)
    url = args.operator_url or os.environ.get("PARETOPROMPT_OPERATOR_URL")
    model = args.operator_model or os.environ.get("PARETOPROMPT_OPERATOR_MODEL")
    if not url or not model:
        raise ValidationError("--operator http needs an operator URL and model (flags or environment)")
    return HttpChatOperatorLLM(
        url, model, api_key=os.environ.get("PARETOPROMPT_OPERATOR_API_KEY"), seed=args.operator_seed
    )


def _load_tasks(args, seed: int, val_fraction: float, nek_timestamp_seed: int | None):
    ek = load_instances(args.ek, strict=args.strict)
    nek = load_instances(args.nek, strict=args.strict)
    if nek_timestamp_seed is not None:
        nek = synthesize_nek_timestamps(nek, nek_timestamp_seed)
    return split_instances(ek, val_fraction, seed), split_instances(nek, val_fraction, seed)


def _print_front(state) -> None:
    for m in sorted(state.population, key=lambda m: (-m.objectives.ek, m.id)):
        print(f"{m.id}\tEK={m.objectives.ek:.4f}\tNEK={m.objectives.nek:.4f}\t{m.instruction.text}")


def cmd_synth(args) -> int:
    dump_instances(generate_synthetic_ek(args.n_ek, args.seed), args.ek_out)
    nek = synthesize_nek_timestamps(generate_synthetic_nek(args.n_nek, args.seed + 1), args.seed + 2)
    dump_instances(nek, args.nek_out)
    print(f"wrote {args.n_ek} EK instances to {args.ek_out} and {args.n_nek} NEK instances to {args.nek_out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    instances = load_instances(args.dataset, strict=args.strict)
    config = MetricConfig(cutoffs=tuple(args.cutoffs), strict=args.strict)
    report = evaluate(args.instruction, instances, _backend(args), config)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_optimize(args) -> int:
    config = OptimizerConfig(
        rounds=args.rounds,
        pareto_budget=args.pareto_size,
        expansion_factor=args.expansion_factor,
        train_batch_ek=args.train_batch,
        train_batch_nek=args.train_batch,
        val_batch_ek=args.val_batch,
        val_batch_nek=args.val_batch,
        resample_validation=not args.fixed_validation,
        seed=args.seed,
        utility=args.utility,
    )
    nek_ts_seed = args.seed if args.synthesize_nek_timestamps else None
    ek, nek = _load_tasks(args, args.seed, args.val_fraction, nek_ts_seed)
    backend = _backend(args)
    state = init_state(config, ek, nek, backend, args.initial_instruction)
    state.metadata.update(
        {
            "ek_path": str(args.ek),
            "nek_path": str(args.nek),
            "val_fraction": args.val_fraction,
            "nek_timestamp_seed": nek_ts_seed,
            "strict": args.strict,
            "backend": args.backend,
            "operator": args.operator,
        }
    )
    state = run_optimization(config, ek, nek, backend, _operator(args), state=state, checkpoint_path=args.checkpoint)
    _print_front(state)
    return EXIT_OK


def cmd_resume(args) -> int:
    state = checkpoint_load(args.checkpoint)
    config = OptimizerConfig.from_dict(state.config)
    if args.rounds is not None:
        config = OptimizerConfig.from_dict({**state.config, "rounds": args.rounds})
        state.config = config.to_dict()
    md = state.metadata
    args.ek = args.ek or md.get("ek_path")
    args.nek = args.nek or md.get("nek_path")
    args.strict = args.strict or md.get("strict", False)
    if not args.ek or not args.nek:
        raise ValidationError("resume needs --ek and --nek (not recorded in checkpoint)")
    ek, nek = _load_tasks(args, config.seed, md.get("val_fraction", 0.5), md.get("nek_timestamp_seed"))
    state = run_optimization(
        config, ek, nek, _backend(args), _operator(args), state=state, checkpoint_path=args.checkpoint
    )
    _print_front(state)
    return EXIT_OK


def cmd_report(args) -> int:
    state = checkpoint_load(args.checkpoint)
    tables = None
    if args.ek and args.nek:
        ek = load_instances(args.ek, strict=args.strict)
        nek = load_instances(args.nek, strict=args.strict)
        ts_seed = state.metadata.get("nek_timestamp_seed")
        if ts_seed is not None:
            nek = synthesize_nek_timestamps(nek, ts_seed)
        tables = compute_metric_tables(state, ek, nek, _backend(args), MetricConfig(cutoffs=tuple(args.cutoffs)))
    write_report(state, args.format, args.out, tables)
    print(f"wrote {args.format} report to {args.out}")
    return EXIT_OK


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("scripted", "http", "tempralm"), default="scripted")
    p.add_argument("--backend-url", help="scoring endpoint (default: $PARETOPROMPT_RERANKER_URL)")
    p.add_argument("--tempralm-inner", choices=("scripted", "http"), default="scripted")
    p.add_argument("--tempralm-lambda", type=float, default=0.2)


def _add_operator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--operator", choices=("mock", "http"), default="mock")
    p.add_argument("--operator-url")
    p.add_argument("--operator-model")
    p.add_argument("--operator-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paretoprompt", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic EK and NEK fixtures")
    p.add_argument("--ek-out", required=True)
    p.add_argument("--nek-out", required=True)
    p.add_argument("--n-ek", type=int, default=100)
    p.add_argument("--n-nek", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="metrics for one instruction on one dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--instruction", default=DEFAULT_INSTRUCTION)
    p.add_argument("--cutoffs", type=int, nargs="+", default=[5, 10])
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="run the evolutionary search")
    p.add_argument("--ek", required=True)
    p.add_argument("--nek", required=True)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--pareto-size", type=int, default=4)
    p.add_argument("--expansion-factor", type=int, default=8)
    p.add_argument("--train-batch", type=int, default=32)
    p.add_argument("--val-batch", type=int, default=None, help="default: full validation split")
    p.add_argument("--fixed-validation", action="store_true", help="draw the validation batch once")
    p.add_argument("--val-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--utility", default="map")
    p.add_argument("--initial-instruction", default=DEFAULT_INSTRUCTION)
    p.add_argument("--synthesize-nek-timestamps", action="store_true")
    p.add_argument("--checkpoint", default="run_state.json")
    p.add_argument("--strict", action="store_true")
    _add_backend_flags(p)
    _add_operator_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("resume", help="continue a run from its checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ek")
    p.add_argument("--nek")
    p.add_argument("--rounds", type=int, help="override the total number of rounds")
    p.add_argument("--strict", action="store_true")
    _add_backend_flags(p)
    _add_operator_flags(p)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("report", help="render a checkpoint as json, csv or markdown")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--format", choices=("json", "csv", "markdown"), default="markdown")
    p.add_argument("--out", required=True)
    p.add_argument("--ek", help="with --nek: add full metric tables for the seed and the final front")
    p.add_argument("--nek")
    p.add_argument("--cutoffs", type=int, nargs="+", default=[5, 10])
    p.add_argument("--strict", action="store_true")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CorruptCheckpoint as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BackendError, OperatorError) as exc:
        print(f"backend/operator failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
