"""Exception hierarchy shared across the runtime."""

from __future__ import annotations

from typing import Any


class EventGraphError(Exception):
    """Base class for every error raised by this package."""


# -- event log -----------------------------------------------------------------


class NonCanonicalizable(EventGraphError, ValueError):
    pass


class LogSealed(EventGraphError):
    pass


class UnknownEventType(EventGraphError):
    pass


class DanglingCause(EventGraphError):
    pass


class MalformedLog(EventGraphError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class VersionMismatch(EventGraphError):
    pass


# -- graph ---------------------------------------------------------------------


class ProjectionError(EventGraphError):
    """Base for fold failures. ``seq`` is filled in by :func:`project`."""

    seq: int | None = None


class DanglingReference(ProjectionError):
    pass


class UnknownObjectType(ProjectionError):
    pass


class UnknownRelationType(ProjectionError):
    pass


class PatchTargetMissing(ProjectionError):
    pass


class DuplicateObject(ProjectionError):
    pass


# -- patterns ------------------------------------------------------------------


class ParseError(EventGraphError):
    def __init__(self, offset: int, expected: str, text: str = ""):
        found = text[offset : offset + 12] if text else ""
        msg = f"at offset {offset}: expected {expected}"
        if text:
            msg += f", found {found!r}" if found else ", found end of input"
        super().__init__(msg)
        self.offset = offset
        self.expected = expected


# -- runtime -------------------------------------------------------------------


class DuplicateBehaviorName(EventGraphError):
    pass


class InvalidSubscription(EventGraphError):
    pass


class ContextEscaped(EventGraphError):
    pass


class BehaviorError(EventGraphError):
    def __init__(self, behavior: str, cause: BaseException):
        super().__init__(f"{behavior}: {type(cause).__name__}: {cause}")
        self.behavior = behavior
        self.cause = cause


class RunInterrupt(EventGraphError):
    """Raised through behavior bodies; never converted into behavior.failed."""


class BudgetExceeded(RunInterrupt):
    def __init__(self, dimension: str, limit: Any, attempted: Any):
        super().__init__(f"budget exceeded on {dimension}: {attempted} > {limit}")
        self.dimension = dimension
        self.limit = limit
        self.attempted = attempted


# -- effects -------------------------------------------------------------------


class ProviderError(EventGraphError):
    pass


class FixtureMiss(ProviderError):
    pass


class UnknownTool(EventGraphError):
    pass


class ToolError(EventGraphError):
    pass


class UnknownDocument(ToolError):
    pass


# -- replay / fork -------------------------------------------------------------


class DivergenceError(RunInterrupt):
    def __init__(self, seq: int, expected, actual, field_diffs):
        self.first_divergent_seq = seq
        self.expected = expected
        self.actual = actual
        self.field_diffs = list(field_diffs)
        fields = ", ".join(name for name, _, _ in self.field_diffs) or "presence"
        super().__init__(f"replay diverged at seq {seq} ({fields})")

    @property
    def seq(self) -> int:
        return self.first_divergent_seq


class MissingBehavior(EventGraphError):
    pass


class CutoffOutOfRange(EventGraphError):
    pass


class UnrelatedRuns(EventGraphError):
    pass


class UnknownTarget(EventGraphError):
    pass


class PackError(EventGraphError):
    pass
