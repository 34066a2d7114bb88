"""Event-sourced reactive graph runtime.

The log is the source of truth; the typed graph is a deterministic fold over
it. Behaviors react to graph changes, model and tool responses are recorded
and served back on replay, and runs can be forked and structurally diffed.
"""

from .canonical import canonicalize, digest
from .effects import CallableProvider, Fixture, FixtureProvider, ModelRequest, ResponseCache, ToolRegistry
from .errors import (
    BudgetExceeded,
    CutoffOutOfRange,
    DivergenceError,
    EventGraphError,
    FixtureMiss,
    MissingBehavior,
    UnknownTarget,
    UnrelatedRuns,
)
from .graph import Graph, GraphView, project
from .log import Event, EventId, EventLog, SimulatedClock, load_log, save_log
from .pack import Pack, find_pack, run_quickstart
from .pattern import match_pattern, parse_pattern
from .replay import ForkSpec, fork, lineage, replay, structural_diff
from .runtime import Behavior, Budget, ConfiguredBehavior, Form, Runtime, behavior, relation_behavior

__version__ = "0.1.0"

__all__ = [
    "Behavior", "Budget", "BudgetExceeded", "CallableProvider", "ConfiguredBehavior", "CutoffOutOfRange",
    "DivergenceError", "Event", "EventGraphError", "EventId", "EventLog", "Fixture", "FixtureMiss",
    "FixtureProvider", "ForkSpec", "Form", "Graph", "GraphView", "MissingBehavior", "ModelRequest", "Pack",
    "ResponseCache", "Runtime", "SimulatedClock", "ToolRegistry", "UnknownTarget", "UnrelatedRuns",
    "behavior", "canonicalize", "digest", "find_pack", "fork", "lineage", "load_log", "match_pattern",
    "parse_pattern", "project", "relation_behavior", "replay", "run_quickstart", "save_log", "structural_diff",
]
