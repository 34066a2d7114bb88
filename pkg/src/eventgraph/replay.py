"""Replay (strict and permissive), fork, structural diff, and lineage."""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any, Protocol

from .canonical import canonicalize, digest, thaw
from .effects import ResponseCache
from .errors import CutoffOutOfRange, DivergenceError, MissingBehavior, UnknownTarget, UnrelatedRuns
from .graph import Graph, GraphObject, Relation, project
from .log import Event, EventId, EventLog, ForkRecord, SimulatedClock, as_event_id
from .runtime import EXTERNAL_ACTORS, Budget, Runtime

STRICT = "strict"
PERMISSIVE = "permissive"


class PackLike(Protocol):
    """What replay and fork need from a pack."""

    name: str

    def behavior_names(self) -> list[str]: ...

    def build_runtime(self, run_id: str, *, provider=None, budget=None, clock=None, forks=()) -> Runtime: ...

    def apply_overrides(self, runtime: Runtime, overrides: Mapping[str, Any]) -> None: ...

    def provider(self, overrides: Mapping[str, Any] | None = None): ...


COMPARED_FIELDS = ("id", "type", "actor", "caused_by", "payload")


def compare_events(expected: Event, actual: Event) -> list[tuple[str, Any, Any]]:
    """Field differences that matter for strict replay; timestamps are excluded."""
    diffs = []
    for name in COMPARED_FIELDS:
        a, b = getattr(expected, name), getattr(actual, name)
        if name == "payload":
            if canonicalize(a) != canonicalize(b):
                diffs.append((name, thaw(a), thaw(b)))
        elif a != b:
            diffs.append((name, a, b))
    return diffs


def recorded_budget(log: EventLog) -> Budget:
    if len(log) and log[0].type == "run.started" and "budget" in log[0].payload:
        return Budget.from_record(log[0].payload["budget"])
    return Budget()


def behaviors_named(log: EventLog) -> list[str]:
    names = []
    for event in log:
        if event.type == "behavior.started" and event.payload["behavior"] not in names:
            names.append(event.payload["behavior"])
    return names


def _check_pack(log: EventLog, pack: PackLike) -> None:
    available = set(pack.behavior_names())
    missing = [n for n in behaviors_named(log) if n not in available]
    if missing:
        raise MissingBehavior(f"pack {pack.name!r} lacks behaviors named in the log: {', '.join(missing)}")


class _Follower:
    """Runtime hook that holds appends to a recorded event sequence.

    While following, each appended event is compared with the recorded one at
    the same position and the recorded event is committed in its place. A fork
    (strict, with ``on_switch``) switches on reaching ``limit``; permissive
    replay switches at the first disagreement. Switching detaches the follower
    and the runtime carries on live.
    """

    def __init__(self, recorded: EventLog, limit: int, mode: str, *,
                 on_switch: Callable[[Runtime, int], None] | None = None,
                 checkpoints: Mapping[int, list[Callable[[Runtime], None]]] | None = None):
        self.recorded = recorded
        self.limit = limit
        self.mode = mode
        self.on_switch = on_switch
        self.checkpoints = checkpoints or {}
        self.switched_at: int | None = None

    def expected(self, rt: Runtime) -> Event | None:
        i = len(rt.log)
        return self.recorded[i] if i < self.limit else None

    def accept(self, rt: Runtime, candidate: Event) -> Event:
        exp = self.expected(rt)
        if exp is None:
            diffs = [("presence", None, candidate.type)]
        else:
            diffs = compare_events(exp, candidate)
            if not diffs:
                return exp
        if self.mode != PERMISSIVE or self.on_switch is None:
            raise DivergenceError(candidate.seq, exp, candidate, diffs)
        self.switch(rt, len(rt.log))
        return rt.log.next_event(candidate.type, candidate.payload, candidate.actor, candidate.caused_by, rt.clock())

    def committed(self, rt: Runtime, event: Event) -> None:
        for hook in self.checkpoints.get(event.seq, ()):
            hook(rt)
        if event.seq >= self.limit and self.on_switch is not None and self.mode == STRICT:
            self.switch(rt, event.seq)
        elif rt.follower is self and event.seq < self.limit:
            rt.log.current_run = self.recorded[event.seq].id.run

    def switch(self, rt: Runtime, at: int) -> None:
        self.switched_at = at
        rt.follower = None
        self.on_switch(rt, at)


def _drive(rt: Runtime, follower: _Follower) -> None:
    """Feed recorded external inputs until the follower has consumed its range."""
    rec = follower.recorded
    if len(rec) and follower.limit:
        rt.log.current_run = rec[0].id.run
    for hook in follower.checkpoints.get(0, ()):
        hook(rt)
    while rt.follower is follower and len(rt.log) < follower.limit:
        exp = rec[len(rt.log)]
        if exp.actor not in EXTERNAL_ACTORS or rt.halted is not None:
            if follower.mode == PERMISSIVE and follower.on_switch is not None:
                follower.switch(rt, len(rt.log))
                break
            raise DivergenceError(exp.seq, exp, None, [("presence", exp.type, None)])
        rt.emit(exp.type, exp.payload, exp.actor, exp.caused_by)


def _reissue_inputs(rt: Runtime, recorded: EventLog, after: int) -> int:
    """Re-run the recorded external inputs that came after ``after`` in a new id space."""
    id_map: dict[str, str] = {}
    event_map: dict[EventId, EventId] = {}
    count = 0

    def remap(cause: EventId | None) -> EventId | None:
        if cause is None:
            return None
        if cause.seq <= after:
            return cause
        return event_map.get(cause)

    for event in recorded[after:]:
        if event.actor not in EXTERNAL_ACTORS:
            continue
        if rt.halted is not None:
            break
        p = event.payload
        if event.type == "object.created":
            oid = rt.create_object(p["type"], thaw(p.get("properties")), actor=event.actor,
                                   caused_by=remap(event.caused_by))
            if oid not in rt.graph.objects:
                break
            id_map[p["id"]] = oid
            new_event = next(e for e in reversed(rt.log.events) if e.type == "object.created"
                             and e.payload["id"] == oid)
        elif event.type == "relation.created":
            rid = rt.create_relation(p["type"], id_map.get(p["from"], p["from"]), id_map.get(p["to"], p["to"]),
                                     thaw(p.get("properties")), actor=event.actor, caused_by=remap(event.caused_by))
            if rid not in rt.graph.relations:
                break
            id_map[p["id"]] = rid
            new_event = next(e for e in reversed(rt.log.events) if e.type == "relation.created"
                             and e.payload["id"] == rid)
        else:
            new_event = rt.emit(event.type, thaw(p), event.actor, remap(event.caused_by))
        event_map[event.id] = new_event.id
        count += 1
    return count


def _checkpoints(forks, pack: PackLike, upto: int) -> dict[int, list]:
    points: dict[int, list] = {}
    for rec in forks:
        if rec.effective_at <= upto and rec.overrides:
            overrides = rec.overrides
            points.setdefault(rec.effective_at, []).append(lambda rt, o=overrides: pack.apply_overrides(rt, o))
    return points


# -- replay --------------------------------------------------------------------


@dataclass
class ReplayResult:
    graph: Graph
    log: EventLog
    mode: str
    new_run: bool = False
    fresh_events: int = 0
    divergence_seq: int | None = None
    provider_calls: int = 0
    tool_executions: int = 0
    runtime: Runtime | None = None


def replay(log: EventLog, mode: str = PERMISSIVE, pack: PackLike | None = None, *, provider=None,
           overrides: Mapping[str, Any] | None = None, run_id: str | None = None, clock=None) -> ReplayResult:
    """Rebuild state from ``log`` by re-firing the pack's behaviors against it.

    Strict mode serves every model and tool response from the log, never calls
    a provider, and raises DivergenceError at the first event that does not
    reproduce. Permissive mode serves what it can from the log's cache; on the
    first disagreement it materializes a new run (the original is never
    rewritten) and continues live from there. Without a pack, only the fold
    is performed.
    """
    if mode not in (STRICT, PERMISSIVE):
        raise ValueError(f"unknown replay mode {mode!r}")
    if pack is None:
        return ReplayResult(project(log), log, mode)
    _check_pack(log, pack)

    recorded_cache = ResponseCache.from_log(log)
    if mode == STRICT:
        rt = pack.build_runtime(log.run, budget=recorded_budget(log), forks=log.forks)
        rt.recorded = recorded_cache
        rt.strict = True
        follower = _Follower(log, len(log), STRICT, checkpoints=_checkpoints(log.forks, pack, len(log)))
        rt.follower = follower
        _drive(rt, follower)
        rt.follower = None
        return ReplayResult(rt.graph, log, mode, runtime=rt)

    overrides = dict(overrides or {})
    new_id = run_id or f"{log.run}-replay-{digest(canonicalize(overrides))[:8]}"
    rt = pack.build_runtime(log.run, provider=provider if provider is not None else pack.provider(),
                            budget=recorded_budget(log), forks=log.forks)
    rt.recorded = recorded_cache
    state: dict[str, int] = {}

    def on_switch(runtime: Runtime, at: int) -> None:
        state["at"] = at
        runtime.log.run = new_id
        runtime.log.current_run = new_id
        runtime.log.forks = list(log.forks) + [ForkRecord(log.run, at, overrides, apply_at=0)]
        last = log[at - 1].timestamp if at else log[0].timestamp
        runtime.clock = clock or SimulatedClock.after(last)

    checkpoints = _checkpoints(log.forks, pack, len(log))
    if overrides:
        checkpoints.setdefault(0, []).append(lambda r: pack.apply_overrides(r, overrides))
    follower = _Follower(log, len(log), PERMISSIVE, on_switch=on_switch, checkpoints=checkpoints)
    rt.follower = follower
    _drive(rt, follower)
    rt.follower = None
    if "at" not in state:
        return ReplayResult(rt.graph, log, mode, provider_calls=rt.stats.provider_calls,
                            tool_executions=rt.stats.tool_executions, runtime=rt)
    at = state["at"]
    _reissue_inputs(rt, log, at)
    return ReplayResult(rt.graph, rt.log, mode, new_run=True, fresh_events=len(rt.log) - at, divergence_seq=at + 1,
                        provider_calls=rt.stats.provider_calls, tool_executions=rt.stats.tool_executions, runtime=rt)


# -- fork ----------------------------------------------------------------------


@dataclass(frozen=True)
class ForkSpec:
    parent: str
    cutoff: int
    overrides: Mapping[str, Any] = field(default_factory=dict)


@dataclass
class ForkResult:
    runtime: Runtime
    cutoff: int
    prefix_provider_calls: int
    prefix_tool_executions: int
    reissued_inputs: int = 0

    @property
    def log(self) -> EventLog:
        return self.runtime.log

    @property
    def graph(self) -> Graph:
        return self.runtime.graph

    @property
    def live_provider_calls(self) -> int:
        return self.runtime.stats.provider_calls - self.prefix_provider_calls


def fork_run_id(parent: EventLog, cutoff: int, overrides: Mapping[str, Any]) -> str:
    return f"{parent.run}-fork{cutoff}-{digest(canonicalize(thaw(overrides)))[:8]}"


def fork(parent: EventLog, spec: ForkSpec | int, pack: PackLike, *, provider=None, run_id: str | None = None,
         clock=None, replay_inputs: bool = True, inherit_cache: bool | None = None) -> ForkResult:
    """Branch ``parent`` after event ``cutoff`` and run the branch forward.

    Events 1..cutoff are the parent's own events. The prefix is rebuilt by
    re-firing behaviors with every response served from the parent's log (no
    provider is even attached while it runs). Overrides take effect at the
    cutoff, live execution resumes there under the fork's run id, and the
    parent's later external inputs are re-issued unless ``replay_inputs`` is off.

    After the cutoff, requests whose hashes match a parent recording are still
    served from the parent's log, so only edited requests go live. Fixture
    overrides change what the provider answers, so by default they switch that
    inheritance off (``inherit_cache``) and every post-cutoff call goes live.
    """
    if isinstance(spec, int):
        spec = ForkSpec(parent.run, spec)
    k = spec.cutoff
    if not 1 <= k <= len(parent):
        raise CutoffOutOfRange(f"cutoff {k} outside 1..{len(parent)}")
    _check_pack(parent, pack)
    overrides = dict(spec.overrides)
    new_id = run_id or fork_run_id(parent, k, overrides)
    forks = list(parent.forks) + [ForkRecord(parent.run, k, overrides)]
    live_provider = provider if provider is not None else pack.provider(overrides)
    if inherit_cache is None:
        inherit_cache = not any(key.startswith("fixtures.") for key in overrides)
    parent_cache = ResponseCache.from_log(parent)

    rt = pack.build_runtime(new_id, budget=recorded_budget(parent), forks=forks)
    rt.recorded = parent_cache
    rt.strict = True
    counts: dict[str, int] = {}

    def on_switch(runtime: Runtime, at: int) -> None:
        counts["provider"] = runtime.stats.provider_calls
        counts["tools"] = runtime.stats.tool_executions
        runtime.log.current_run = new_id
        runtime.recorded = parent_cache if inherit_cache else None
        runtime.strict = False
        runtime.provider = live_provider
        runtime.clock = clock or SimulatedClock.after(parent[k - 1].timestamp)
        if overrides:
            pack.apply_overrides(runtime, overrides)

    # strict: the prefix must reproduce exactly, and only reaching the cutoff switches
    follower = _Follower(parent, k, STRICT, on_switch=on_switch, checkpoints=_checkpoints(parent.forks, pack, k))
    rt.follower = follower
    _drive(rt, follower)
    rt.follower = None
    reissued = _reissue_inputs(rt, parent, k) if replay_inputs else 0
    return ForkResult(rt, k, counts.get("provider", 0), counts.get("tools", 0), reissued)


# -- structural diff -----------------------------------------------------------

ABSENT = type("Absent", (), {"__repr__": lambda self: "<absent>"})()


@dataclass(frozen=True)
class PropertyDiff:
    path: tuple[str, ...]
    a: Any
    b: Any

    def to_record(self) -> dict:
        rec: dict[str, Any] = {"path": list(self.path)}
        if self.a is not ABSENT:
            rec["a"] = thaw(self.a)
        if self.b is not ABSENT:
            rec["b"] = thaw(self.b)
        return rec


@dataclass(frozen=True)
class ObjectChange:
    id: str
    type: str
    diffs: tuple[PropertyDiff, ...]

    def to_record(self) -> dict:
        return {"id": self.id, "type": self.type, "diffs": [d.to_record() for d in self.diffs]}


@dataclass
class StructuralDiff:
    run_a: str
    run_b: str
    cutoff: int
    objects_only_in_a: list[GraphObject] = field(default_factory=list)
    objects_only_in_b: list[GraphObject] = field(default_factory=list)
    relations_only_in_a: list[Relation] = field(default_factory=list)
    relations_only_in_b: list[Relation] = field(default_factory=list)
    changed_objects: list[ObjectChange] = field(default_factory=list)
    patches_only_in_a: list[Event] = field(default_factory=list)
    patches_only_in_b: list[Event] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not (self.objects_only_in_a or self.objects_only_in_b or self.relations_only_in_a
                    or self.relations_only_in_b or self.changed_objects)

    def to_report(self) -> dict:
        def patch(e: Event) -> dict:
            return {"seq": e.seq, "target": e.payload["target"], "ops": thaw(e.payload["ops"])}

        return {
            "run_a": self.run_a,
            "run_b": self.run_b,
            "shared_prefix": self.cutoff,
            "objects_only_in_a": [o.to_record() for o in self.objects_only_in_a],
            "objects_only_in_b": [o.to_record() for o in self.objects_only_in_b],
            "relations_only_in_a": [r.to_record() for r in self.relations_only_in_a],
            "relations_only_in_b": [r.to_record() for r in self.relations_only_in_b],
            "changed_objects": [c.to_record() for c in self.changed_objects],
            "patches_only_in_a": [patch(e) for e in self.patches_only_in_a],
            "patches_only_in_b": [patch(e) for e in self.patches_only_in_b],
        }

    def render(self) -> str:
        lines = [f"diff {self.run_a} .. {self.run_b} (shared prefix: {self.cutoff} events)"]
        if self.is_empty:
            lines.append("no differences")
            return "\n".join(lines)

        def describe(obj) -> str:
            label = obj.properties.get("name") or obj.properties.get("text") or obj.properties.get("title") or ""
            return f"{obj.type} {obj.id}" + (f"  {label}" if label else "")

        for side, objs, rels in (("a", self.objects_only_in_a, self.relations_only_in_a),
                                 ("b", self.objects_only_in_b, self.relations_only_in_b)):
            run = self.run_a if side == "a" else self.run_b
            lines.append(f"only in {run}: {len(objs)} objects, {len(rels)} relations")
            lines.extend(f"  + {describe(o)}" for o in objs)
            lines.extend(f"  + {r.type} {r.from_id} -> {r.to_id}" for r in rels)
        lines.append(f"changed objects: {len(self.changed_objects)}")
        for change in self.changed_objects:
            lines.append(f"  ~ {change.type} {change.id}")
            for d in change.diffs:
                lines.append(f"      {'.'.join(d.path)}: {d.a!r} -> {d.b!r}")
        lines.append(f"patches after the shared prefix: {len(self.patches_only_in_a)} in a, "
                     f"{len(self.patches_only_in_b)} in b")
        return "\n".join(lines)


def shared_prefix(a: EventLog, b: EventLog) -> int:
    """Length of the literally shared event prefix, or raise UnrelatedRuns."""
    related = a.run == b.run or (a.parent and a.parent[0] == b.run) or (b.parent and b.parent[0] == a.run) or (
        a.parent and b.parent and a.parent[0] == b.parent[0]
    ) or any(f.parent == b.run for f in a.forks) or any(f.parent == a.run for f in b.forks) or (
        {f.parent for f in a.forks} & {f.parent for f in b.forks}
    )
    if not related or not len(a) or not len(b) or a[0].id != b[0].id:
        raise UnrelatedRuns(f"runs {a.run!r} and {b.run!r} share no recorded prefix")
    k = 0
    for ea, eb in zip(a.events, b.events):
        if ea != eb:
            break
        k += 1
    return k


def flatten(properties: Any, prefix: tuple[str, ...] = ()) -> dict[tuple[str, ...], Any]:
    out: dict[tuple[str, ...], Any] = {}
    for key, value in properties.items():
        path = prefix + (key,)
        if isinstance(value, Mapping) and value:
            out.update(flatten(value, path))
        else:
            out[path] = value
    return out


def property_diffs(a: Any, b: Any) -> tuple[PropertyDiff, ...]:
    fa, fb = flatten(a), flatten(b)
    diffs = []
    for path in sorted(set(fa) | set(fb)):
        va, vb = fa.get(path, ABSENT), fb.get(path, ABSENT)
        if va is ABSENT or vb is ABSENT or canonicalize(va) != canonicalize(vb):
            diffs.append(PropertyDiff(path, va, vb))
    return tuple(diffs)


def structural_diff(a: EventLog, b: EventLog) -> StructuralDiff:
    """Compare two runs that share a fork prefix.

    Objects and relations created inside the shared prefix are matched by id;
    anything created after it belongs to one run only.
    """
    k = shared_prefix(a, b)
    ga, gb = project(a), project(b)
    diff = StructuralDiff(a.run, b.run, k)
    for log, graph, objs, rels, patches in (
        (a, ga, diff.objects_only_in_a, diff.relations_only_in_a, diff.patches_only_in_a),
        (b, gb, diff.objects_only_in_b, diff.relations_only_in_b, diff.patches_only_in_b),
    ):
        for event in log[k:]:
            if event.type == "object.created":
                objs.append(graph.objects[event.payload["id"]])
            elif event.type == "relation.created":
                rels.append(graph.relations[event.payload["id"]])
            elif event.type == "object.patched":
                patches.append(event)

    touched = {e.payload["target"] for e in diff.patches_only_in_a + diff.patches_only_in_b}
    for oid in sorted(touched):
        oa, ob = ga.objects.get(oid), gb.objects.get(oid)
        if oa is None or ob is None or oa.created_by_event.seq > k:
            continue
        diffs = property_diffs(oa.properties, ob.properties)
        if diffs:
            diff.changed_objects.append(ObjectChange(oid, oa.type, diffs))
    return diff


# -- lineage -------------------------------------------------------------------


@dataclass(frozen=True)
class LineageStep:
    event_id: EventId
    type: str
    actor: str

    def __str__(self) -> str:
        return f"#{self.event_id.seq:<5} {self.type:<18} {self.actor}"


@dataclass(frozen=True)
class LineageChain:
    """From the artifact's creating event back to a root (strictly decreasing seq)."""

    target: str
    steps: tuple[LineageStep, ...]
    model_request: LineageStep | None = None

    @property
    def root(self) -> LineageStep:
        return self.steps[-1]

    def event_types(self) -> list[str]:
        types = [s.type for s in self.steps]
        if self.model_request is not None:
            types.append(self.model_request.type)
        return types

    def render(self) -> str:
        lines = [f"lineage of {self.target} (root first)"]
        lines.extend(f"  {step}" for step in reversed(self.steps))
        if self.model_request is not None:
            lines.append(f"  produced by model request {self.model_request}")
        return "\n".join(lines)


def _step(event: Event) -> LineageStep:
    return LineageStep(event.id, event.type, event.actor)


def lineage(log: EventLog, target: str | EventId | int) -> LineageChain:
    if isinstance(target, int):
        if not 1 <= target <= len(log):
            raise UnknownTarget(f"no event with seq {target}")
        start = log.by_seq(target)
    elif isinstance(target, str):
        start = next((e for e in log if e.type in ("object.created", "relation.created")
                      and e.payload["id"] == target), None)
        if start is None:
            raise UnknownTarget(f"no object or relation with id {target!r}")
    else:
        start = log.get(as_event_id(target))
        if start is None:
            raise UnknownTarget(f"no event {target}")

    steps = []
    event: Event | None = start
    while event is not None:
        steps.append(_step(event))
        if event.caused_by is None:
            break
        nxt = log.get(event.caused_by)
        if nxt is None or nxt.seq >= event.seq:
            raise UnknownTarget(f"broken causal chain at {event.id}")
        event = nxt

    model_request = None
    prov = start.payload.get("provenance") if start.type in ("object.created", "relation.created") else None
    if prov and prov.get("model_request_event"):
        req = log.get(as_event_id(prov["model_request_event"]))
        if req is not None:
            model_request = _step(req)
    label = target if isinstance(target, str) else str(start.id)
    return LineageChain(label, tuple(steps), model_request)
