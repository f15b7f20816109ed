"""Exception hierarchy.

Errors are grouped so the CLI can map them onto exit codes: validation
problems (2), backend or operator failures (3), and I/O (4).
"""

from __future__ import annotations


class ParetoPromptError(Exception):
    """Base class for every error raised by this package."""


# -- validation ------------------------------------------------------------


class ValidationError(ParetoPromptError, ValueError):
    """An input violates a data invariant."""

    def __init__(self, message: str, query_id: str | None = None):
        self.query_id = query_id
        if query_id is not None:
            message = f"{message} (query_id={query_id!r})"
        super().__init__(message)


class NoPositive(ValidationError):
    pass


class DuplicateCandidateId(ValidationError):
    pass


class EmptyPool(ValidationError):
    """Raised for an instance without candidates or an empty Pareto pool."""


class UnspecifiedNegativeType(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ConfigError(ValidationError):
    pass


class CorruptCheckpoint(ValidationError):
    pass


# -- metrics ---------------------------------------------------------------


class CutoffOutOfRange(ParetoPromptError, ValueError):
    pass


class EmptyQuerySet(ParetoPromptError, ValueError):
    pass


class NoErrors(ParetoPromptError):
    """No negative was ranked above a positive, so the obsolete ratio is undefined."""


# -- backends --------------------------------------------------------------


class BackendError(ParetoPromptError):
    """A re-ranker backend failed while scoring one request."""

    def __init__(self, message: str, query_id: str | None = None, candidate_id: str | None = None):
        self.query_id = query_id
        self.candidate_id = candidate_id
        if query_id is not None or candidate_id is not None:
            message = f"{message} [query={query_id!r} candidate={candidate_id!r}]"
        super().__init__(message)


class BackendTimeout(BackendError):
    pass


class BadResponse(BackendError):
    pass


class RetriesExhausted(BackendError):
    pass


# -- operators -------------------------------------------------------------


class OperatorError(ParetoPromptError):
    pass


class OperatorCallFailed(OperatorError):
    pass


class NoParsableOutput(OperatorError):
    pass


class PopulationTooSmall(ParetoPromptError, ValueError):
    pass
