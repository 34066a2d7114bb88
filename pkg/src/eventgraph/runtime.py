"""Behavior registration, reactive dispatch, the context handle, and budgets.

Dispatch is a single breadth-first queue: every appended event is queued in
append order, and when an event is dequeued each behavior whose subscription
matches fires, in registration order. A fire appends ``behavior.started``,
runs the body, then appends ``behavior.finished`` (or ``behavior.failed``).
"""

from __future__ import annotations

import hashlib
import uuid
from collections import Counter, deque
from collections.abc import Callable, Iterable, Mapping
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any

from .effects import ModelRequest, ProviderResponse, ResponseCache, ToolRegistry, model_key, tool_key
from .errors import (
    BudgetExceeded,
    ContextEscaped,
    DivergenceError,
    DuplicateBehaviorName,
    FixtureMiss,
    InvalidSubscription,
    ProviderError,
    RunInterrupt,
    ToolError,
    UnknownTool,
)
from .graph import GRAPH_EVENT_TYPES, Graph, GraphView, apply_event
from .log import Event, EventId, EventLog, ForkRecord, parse_timestamp, system_clock
from .pattern import Pattern, Predicate, evaluate_predicate, match_pattern, parse_pattern, parse_predicate

EXTERNAL_ACTORS = ("user", "system")
RESERVED_ACTORS = frozenset({"user", "system", "runtime"})


class Form(str, Enum):
    FUNCTION = "function"
    CONFIGURED = "configured"
    LLM_BACKED = "llm_backed"
    RELATION = "relation_behavior"


@dataclass(frozen=True)
class Subscription:
    event_type: str
    predicate: tuple[Predicate, ...] = ()
    pattern: Pattern | None = None

    @classmethod
    def of(cls, event_type: str, predicate: str | None = None, pattern: str | Pattern | None = None) -> Subscription:
        preds = parse_predicate(predicate) if predicate else ()
        if isinstance(pattern, str):
            pattern = parse_pattern(pattern)
        return cls(event_type, preds, pattern)


Body = Callable[[Event, GraphView, "RunContext"], None]


@dataclass
class Behavior:
    name: str
    subscription: Subscription
    body: Body
    form: Form = Form.FUNCTION
    config: Any = field(default_factory=dict)


class ConfiguredBehavior:
    """Base for class-form behaviors; ``defaults`` are overlaid by manifest config."""

    defaults: Mapping[str, Any] = {}

    def __init__(self, **config):
        self.config = {**self.defaults, **config}

    def __call__(self, event: Event, graph: GraphView, ctx: RunContext) -> None:
        self.run(event, graph, ctx)

    def run(self, event: Event, graph: GraphView, ctx: RunContext) -> None:
        raise NotImplementedError


def behavior(name: str, event_type: str, *, predicate=None, pattern=None, form=Form.FUNCTION, config=None):
    """Decorator turning a function into a :class:`Behavior`."""

    def wrap(fn: Body) -> Behavior:
        return Behavior(name, Subscription.of(event_type, predicate, pattern), fn, Form(form), dict(config or {}))

    return wrap


def relation_behavior(name: str, relation_type: str, body: Body, *, pattern=None, config=None) -> Behavior:
    sub = Subscription.of("relation.created", f"type = '{relation_type}'", pattern)
    return Behavior(name, sub, body, Form.RELATION, dict(config or {}))


# -- budgets -------------------------------------------------------------------


@dataclass(frozen=True)
class Budget:
    max_events: int = 10000
    max_behavior_calls: int = 2000
    max_model_calls: int = 500
    max_patches: int = 2000
    max_depth: int = 64
    max_wall_ms: int = 300000
    max_cost: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"budget cap {f.name} must be strictly positive")

    def with_overrides(self, overrides: Mapping[str, Any]) -> Budget:
        known = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, value in overrides.items():
            name = key if key.startswith("max_") else f"max_{key}"
            if name not in known:
                raise ValueError(f"unknown budget dimension {key!r}")
            changes[name] = float(value) if name == "max_cost" else int(value)
        return replace(self, **changes)

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> Budget:
        return cls().with_overrides(rec)


DIMENSIONS = {
    "events": "max_events",
    "behavior_calls": "max_behavior_calls",
    "model_calls": "max_model_calls",
    "patches": "max_patches",
    "depth": "max_depth",
    "wall_ms": "max_wall_ms",
    "cost": "max_cost",
}


class BudgetState:
    def __init__(self, budget: Budget):
        self.budget = budget
        self.used: Counter = Counter()

    def cap(self, dimension: str):
        return getattr(self.budget, DIMENSIONS[dimension])

    def charge(self, dimension: str, amount=1) -> None:
        """Accumulate usage; raises BudgetExceeded once the cap is passed."""
        if dimension not in DIMENSIONS:
            raise ValueError(f"unknown budget dimension {dimension!r}")
        self.used[dimension] += amount
        if self.used[dimension] > self.cap(dimension):
            raise BudgetExceeded(dimension, self.cap(dimension), self.used[dimension])


@dataclass
class RunStats:
    provider_calls: int = 0
    tool_executions: int = 0
    cache_hits: int = 0
    recorded_serves: int = 0
    fixture_misses: int = 0


def make_id(run: str, seq: int, n: int | str) -> str:
    raw = hashlib.sha256(f"{run}/{seq}/{n}".encode()).digest()
    return str(uuid.UUID(bytes=raw[:16], version=4))


# -- the context handle --------------------------------------------------------


class RunContext:
    """The body's only door to ids, time, models, tools, and graph writes."""

    def __init__(self, runtime: Runtime, behavior: Behavior, trigger: Event, started: Event, bindings):
        self._rt = runtime
        self.behavior = behavior
        self.trigger = trigger
        self.started = started
        self.bindings: list[dict[str, str]] = bindings
        self.last_model_request: EventId | None = None
        self._ids = 0
        self._active = True

    @property
    def name(self) -> str:
        return self.behavior.name

    @property
    def config(self) -> Any:
        return self._rt.behavior(self.behavior.name).config

    def _check(self) -> None:
        if not self._active:
            raise ContextEscaped(f"context of {self.name!r} used outside its fire")

    def close(self) -> None:
        self._active = False

    def now(self):
        self._check()
        return parse_timestamp(self.trigger.timestamp)

    def new_id(self) -> str:
        self._check()
        n = self._ids
        self._ids += 1
        return make_id(self._rt.log.current_run, self.started.seq, n)

    def emit(self, type: str, payload: Any, *, caused_by: EventId | None = None) -> Event:
        self._check()
        return self._rt._append(type, payload, self.name, caused_by or self.trigger.id)

    def _provenance(self, caused_by, model_request) -> dict:
        return {
            "behavior": self.name,
            "caused_by_event": list(caused_by or self.trigger.id),
            "model_request_event": None if model_request is None else list(model_request),
        }

    def create_object(self, type: str, properties: Any = None, *, model_request: EventId | None = None,
                      caused_by: EventId | None = None, id: str | None = None) -> str:
        self._check()
        oid = id or self.new_id()
        self.emit(
            "object.created",
            {"id": oid, "type": type, "properties": properties or {},
             "provenance": self._provenance(caused_by, model_request)},
            caused_by=caused_by,
        )
        return oid

    def create_relation(self, type: str, from_id: str, to_id: str, properties: Any = None, *,
                        model_request: EventId | None = None, caused_by: EventId | None = None) -> str:
        self._check()
        rid = self.new_id()
        self.emit(
            "relation.created",
            {"id": rid, "type": type, "from": from_id, "to": to_id, "properties": properties or {},
             "provenance": self._provenance(caused_by, model_request)},
            caused_by=caused_by,
        )
        return rid

    def patch_object(self, target: str, set: Mapping[str, Any] | None = None, remove: Iterable[str] = (), *,
                     caused_by: EventId | None = None) -> Event:
        """Set and/or remove properties; keys are dotted paths."""
        self._check()
        ops = [{"path": key.split("."), "op": "set", "value": value} for key, value in (set or {}).items()]
        ops += [{"path": key.split("."), "op": "remove"} for key in remove]
        self._rt.charge("patches", 1)
        return self.emit("object.patched", {"target": target, "ops": ops}, caused_by=caused_by)

    def call_model(self, request: ModelRequest) -> Any:
        self._check()
        return self._rt._call_model(self, request)

    def call_tool(self, tool: str, args: Any) -> Any:
        self._check()
        return self._rt._call_tool(self, tool, args)

    def ask(self, **variables) -> Any:
        """Render this behavior's prompt template and call its configured model."""
        cfg = self.config
        prompt = cfg["prompt"].format_map(variables)
        request = ModelRequest(
            model=cfg["model"],
            system=cfg.get("system", ""),
            messages=({"role": "user", "content": prompt},),
            tools=tuple(cfg.get("tools", ())),
            output_schema=cfg.get("output_schema"),
        )
        return self.call_model(request)


# -- the runtime ---------------------------------------------------------------


def anchor_of(event: Event) -> str | None:
    if event.type == "object.created":
        return event.payload["id"]
    if event.type == "object.patched":
        return event.payload["target"]
    if event.type == "relation.created":
        return event.payload["from"]
    return None


class Runtime:
    """One run: its log, its graph, its behaviors, and the dispatch loop."""

    def __init__(
        self,
        run_id: str = "run",
        *,
        behaviors: Iterable[Behavior] = (),
        provider=None,
        tools: ToolRegistry | Mapping[str, Callable] | None = None,
        budget: Budget | None = None,
        clock: Callable[[], str] | None = None,
        object_types: Iterable[str] | None = None,
        relation_types: Iterable[str] | None = None,
        event_types: Iterable[str] = (),
        forks: Iterable[ForkRecord] = (),
    ):
        self.log = EventLog(run_id, event_types=event_types, forks=forks)
        self.graph = Graph(object_types, relation_types)
        self.view = GraphView(self.graph)
        self.behaviors: list[Behavior] = []
        self.provider = provider
        self.tools = tools if isinstance(tools, ToolRegistry) else ToolRegistry(tools)
        self.budget = budget or Budget()
        self.usage = BudgetState(self.budget)
        self.clock = clock or system_clock
        self.cache = ResponseCache()
        self.recorded: ResponseCache | None = None
        self.strict = False
        self.follower = None
        self.halted: Event | None = None
        self.stats = RunStats()
        self._queue: deque[Event] = deque()
        self._depth: dict[EventId, int] = {}
        self._provider_index: Counter = Counter()
        self._fire: RunContext | None = None
        self._dispatching = False
        self._start = None
        for b in behaviors:
            self.register(b)

    # registration

    def register(self, b: Behavior) -> None:
        if any(existing.name == b.name for existing in self.behaviors):
            raise DuplicateBehaviorName(b.name)
        self._validate(b)
        self.behaviors.append(b)

    def _validate(self, b: Behavior) -> None:
        if b.name in RESERVED_ACTORS:
            raise InvalidSubscription(f"behavior name {b.name!r} is reserved")
        sub = b.subscription
        if sub.event_type not in self.log.event_types:
            raise InvalidSubscription(f"{b.name}: event type {sub.event_type!r} is not declared")
        if sub.pattern is not None and sub.event_type not in GRAPH_EVENT_TYPES:
            raise InvalidSubscription(f"{b.name}: patterns need a graph-effecting event type")
        if Form(b.form) is Form.RELATION:
            typed = any(p.path == ("type",) and p.comparator == "=" for p in sub.predicate)
            if sub.event_type != "relation.created" or not typed:
                raise InvalidSubscription(f"{b.name}: relation behaviors subscribe to one relation type")

    def behavior(self, name: str) -> Behavior:
        for b in self.behaviors:
            if b.name == name:
                return b
        raise KeyError(name)

    def replace_behavior(self, b: Behavior) -> None:
        self._validate(b)
        for i, existing in enumerate(self.behaviors):
            if existing.name == b.name:
                self.behaviors[i] = b
                return
        raise KeyError(b.name)

    # external input

    def start(self, **metadata) -> Event:
        return self.emit("run.started", {"run": self.log.run, "budget": self.budget.to_record(), **metadata},
                         actor="system")

    def emit(self, type: str, payload: Any, actor: str = "user", caused_by: EventId | None = None) -> Event:
        """Append an external event and run the resulting cascade to quiescence."""
        if self.halted is not None:
            d = self.halted.payload
            raise BudgetExceeded(d["dimension"], d["limit"], d["attempted"])
        try:
            event = self._append(type, payload, actor, caused_by)
        except BudgetExceeded:
            return self.halted
        self._drain()
        return event

    def create_object(self, type: str, properties: Any = None, *, actor: str = "user",
                      caused_by: EventId | None = None) -> str:
        oid = make_id(self.log.current_run, len(self.log) + 1, "u")
        payload = {"id": oid, "type": type, "properties": properties or {},
                   "provenance": {"behavior": actor, "model_request_event": None}}
        if caused_by is not None:
            payload["provenance"]["caused_by_event"] = list(caused_by)
        self.emit("object.created", payload, actor=actor, caused_by=caused_by)
        return oid

    def create_relation(self, type: str, from_id: str, to_id: str, properties: Any = None, *,
                        actor: str = "user", caused_by: EventId | None = None) -> str:
        rid = make_id(self.log.current_run, len(self.log) + 1, "u")
        payload = {"id": rid, "type": type, "from": from_id, "to": to_id, "properties": properties or {},
                   "provenance": {"behavior": actor, "model_request_event": None}}
        if caused_by is not None:
            payload["provenance"]["caused_by_event"] = list(caused_by)
        self.emit("relation.created", payload, actor=actor, caused_by=caused_by)
        return rid

    # appending

    def _timestamp(self) -> str:
        if self.follower is not None:
            expected = self.follower.expected(self)
            if expected is not None:
                return expected.timestamp
        return self.clock()

    def _append(self, type: str, payload: Any, actor: str, caused_by: EventId | None = None, *,
                budgeted: bool = True) -> Event:
        if budgeted and self.halted is not None:
            d = self.halted.payload
            raise BudgetExceeded(d["dimension"], d["limit"], d["attempted"])
        timestamp = self._timestamp()
        if budgeted:
            self._check_budget(caused_by, timestamp)
        event = self.log.next_event(type, payload, actor, caused_by, timestamp)
        if self.follower is not None:
            event = self.follower.accept(self, event)
        self.log.validate(event)
        apply_event(self.graph, event)  # raises before mutating on a bad reference
        self.log.commit(event)
        self._depth[event.id] = 0 if event.caused_by is None else self._depth[event.caused_by] + 1
        self.cache.observe(event)
        if self._start is None and type == "run.started":
            self._start = parse_timestamp(event.timestamp)
        self._queue.append(event)
        if self.follower is not None:
            self.follower.committed(self, event)
        return event

    def _check_budget(self, caused_by: EventId | None, timestamp: str) -> None:
        if len(self.log) + 1 >= self.budget.max_events:
            # the last slot is reserved for the budget.exceeded marker
            self._halt("events", self.budget.max_events, len(self.log) + 1)
        depth = 0 if caused_by is None else self._depth.get(caused_by, 0) + 1
        if depth > self.budget.max_depth:
            self._halt("depth", self.budget.max_depth, depth)
        if self._start is not None:
            elapsed = parse_timestamp(timestamp) - self._start
            elapsed_ms = elapsed.days * 86_400_000 + elapsed.seconds * 1000 + elapsed.microseconds // 1000
            if elapsed_ms > self.budget.max_wall_ms:
                self._halt("wall_ms", self.budget.max_wall_ms, elapsed_ms)

    def charge(self, dimension: str, amount=1) -> None:
        try:
            self.usage.charge(dimension, amount)
        except BudgetExceeded as exc:
            self._halt(exc.dimension, exc.limit, exc.attempted)

    def _halt(self, dimension: str, limit, attempted):
        cause = self._fire.trigger.id if self._fire is not None else None
        self.halted = self._append(
            "budget.exceeded",
            {"dimension": dimension, "limit": limit, "attempted": attempted},
            "runtime",
            cause,
            budgeted=False,
        )
        self._queue.clear()
        raise BudgetExceeded(dimension, limit, attempted)

    # dispatch

    def _drain(self) -> None:
        if self._dispatching:
            return
        self._dispatching = True
        try:
            while self._queue and self.halted is None:
                event = self._queue.popleft()
                for b in list(self.behaviors):
                    if self.halted is not None:
                        break
                    bindings = self._matches(b, event)
                    if bindings is not None:
                        self._fire_behavior(b, event, bindings)
        except BudgetExceeded:
            pass
        finally:
            self._dispatching = False

    def pending(self) -> int:
        return len(self._queue)

    def _matches(self, b: Behavior, event: Event) -> list[dict[str, str]] | None:
        sub = b.subscription
        if sub.event_type != event.type:
            return None
        if sub.predicate and not evaluate_predicate(sub.predicate, event.payload):
            return None
        if sub.pattern is None:
            return []
        anchor = anchor_of(event)
        if anchor is None:
            return None
        bindings = match_pattern(self.graph, sub.pattern, anchor)
        return bindings or None

    def _fire_behavior(self, b: Behavior, event: Event, bindings) -> None:
        self.charge("behavior_calls", 1)
        started = self._append("behavior.started", {"behavior": b.name, "trigger": list(event.id)}, b.name, event.id)
        ctx = RunContext(self, b, event, started, bindings)
        self._fire = ctx
        try:
            b.body(event, self.view, ctx)
        except RunInterrupt:
            raise
        except Exception as exc:
            self._append("behavior.failed", {"behavior": b.name, "error": f"{type(exc).__name__}: {exc}"},
                         b.name, event.id)
            return
        finally:
            ctx.close()
            self._fire = None
        self._append("behavior.finished", {"behavior": b.name}, b.name, event.id)

    # effects

    def _call_model(self, ctx: RunContext, request: ModelRequest) -> Any:
        name = ctx.name
        self.charge("model_calls", 1)
        key = model_key(request)
        req = self._append(
            "llm.requested",
            {"behavior": name, "prompt_hash": key, "request": request.normalized(), "deterministic": True},
            name,
            ctx.trigger.id,
        )
        ctx.last_model_request = req.id
        hit = self.cache.get(key)
        if hit is not None:
            self.stats.cache_hits += 1
            self._append("llm.responded", {"prompt_hash": key, "response": hit.response, "cached": True, "cost": 0},
                         name, req.id)
            return hit.response
        index = self._provider_index[name]
        self._provider_index[name] += 1
        try:
            result, recorded = self._fetch(key, lambda: self._live_model(request, name, index))
        except ProviderError as exc:
            if isinstance(exc, FixtureMiss):
                self.stats.fixture_misses += 1
            self._append("llm.failed", {"prompt_hash": key, "error": f"{type(exc).__name__}: {exc}"}, name, req.id)
            raise
        cached = self._served_flag(recorded)
        cost = 0 if cached else result.cost
        event = self._append(
            "llm.responded",
            {"prompt_hash": key, "response": result.response, "cached": cached, "cost": cost},
            name,
            req.id,
        )
        if cost:
            self.charge("cost", cost)
        return event.payload["response"]

    def _live_model(self, request: ModelRequest, behavior: str, index: int) -> ProviderResponse:
        if self.provider is None:
            raise ProviderError("no model provider configured")
        self.stats.provider_calls += 1
        return self.provider.call(request, behavior=behavior, index=index)

    def _fetch(self, key: str, live: Callable[[], ProviderResponse]) -> tuple[ProviderResponse, bool]:
        if self.recorded is not None:
            entry = self.recorded.get(key)
            if entry is not None:
                self.stats.recorded_serves += 1
                return ProviderResponse(entry.response, entry.cost), True
            if self.strict:
                seq = len(self.log) + 1
                expected = self.follower.expected(self) if self.follower is not None else None
                raise DivergenceError(seq, expected, None, [("response", None, key)])
        return live(), False

    def _served_flag(self, recorded: bool) -> bool:
        # while following a log, reproduce whatever that log recorded for the flag
        if self.follower is None:
            return recorded
        expected = self.follower.expected(self)
        if expected is not None and isinstance(expected.payload, Mapping) and "cached" in expected.payload:
            return bool(expected.payload["cached"])
        return False

    def _call_tool(self, ctx: RunContext, tool: str, args: Any) -> Any:
        name = ctx.name
        if tool not in self.tools:
            raise UnknownTool(tool)
        key = tool_key(tool, args)
        req = self._append("tool.requested", {"behavior": name, "tool": tool, "args": args, "key": key},
                           name, ctx.trigger.id)
        hit = self.cache.get(key)
        if hit is not None:
            self.stats.cache_hits += 1
            self._append("tool.responded", {"key": key, "tool": tool, "response": hit.response, "cached": True},
                         name, req.id)
            return hit.response

        def live() -> ProviderResponse:
            self.stats.tool_executions += 1
            return ProviderResponse(self.tools.execute(tool, args))

        try:
            result, recorded = self._fetch(key, live)
        except RunInterrupt:
            raise
        except Exception as exc:
            self._append("tool.failed", {"key": key, "tool": tool, "error": f"{type(exc).__name__}: {exc}"},
                         name, req.id)
            if isinstance(exc, ToolError):
                raise
            raise ToolError(f"{tool}: {exc}") from exc
        event = self._append(
            "tool.responded",
            {"key": key, "tool": tool, "response": result.response, "cached": self._served_flag(recorded)},
            name,
            req.id,
        )
        return event.payload["response"]

    # reporting

    def summary(self) -> dict:
        counts = Counter(e.type for e in self.log)
        by_type = Counter(o.type for o in self.graph.objects.values())
        return {
            "events": len(self.log),
            "objects": len(self.graph.objects),
            "relations": len(self.graph.relations),
            "model_calls": counts["llm.requested"],
            "tool_calls": counts["tool.requested"],
            "objects_by_type": dict(sorted(by_type.items())),
            "halted": None if self.halted is None else self.halted.payload["dimension"],
        }

