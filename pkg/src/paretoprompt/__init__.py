"""Pareto-front instruction optimization for instruction-conditioned passage re-rankers."""

from .backends import (
    BackendConfig,
    CachedBackend,
    HttpBackend,
    ScoreRequest,
    ScriptedBackend,
    TempRALMBackend,
    cached,
    make_backend,
    rank,
)
from .core import (
    Candidate,
    Instance,
    Instruction,
    Lineage,
    NegativeType,
    Objective,
    ObjectiveVector,
    Query,
    Ranking,
    Timestamp,
    render_with_timestamp,
    validate_instance,
)
from .metrics import MetricConfig, MetricReport, evaluate
from .operator_llm import HttpChatOperatorLLM, MockOperatorLLM
from .optimizer import (
    DEFAULT_INSTRUCTION,
    OptimizerConfig,
    RunState,
    TaskSplit,
    checkpoint_load,
    checkpoint_save,
    run_optimization,
    run_round,
)
from .pareto import ScoredInstruction, crowding_distance, dominates, pareto_front, select_top_by_crowding

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "CachedBackend",
    "Candidate",
    "DEFAULT_INSTRUCTION",
    "HttpBackend",
    "HttpChatOperatorLLM",
    "Instance",
    "Instruction",
    "Lineage",
    "MetricConfig",
    "MetricReport",
    "MockOperatorLLM",
    "NegativeType",
    "Objective",
    "ObjectiveVector",
    "OptimizerConfig",
    "Query",
    "Ranking",
    "RunState",
    "ScoreRequest",
    "ScoredInstruction",
    "ScriptedBackend",
    "TaskSplit",
    "TempRALMBackend",
    "Timestamp",
    "cached",
    "checkpoint_load",
    "checkpoint_save",
    "crowding_distance",
    "dominates",
    "evaluate",
    "make_backend",
    "pareto_front",
    "rank",
    "render_with_timestamp",
    "run_optimization",
    "run_round",
    "select_top_by_crowding",
    "validate_instance",
]
