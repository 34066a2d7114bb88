"""The typed property graph, computed as a left fold over an event log."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from typing import Any

from .canonical import FrozenDict, canonicalize, freeze, thaw
from .errors import (
    DanglingReference,
    DuplicateObject,
    PatchTargetMissing,
    ProjectionError,
    UnknownObjectType,
    UnknownRelationType,
)
from .log import Event, EventId, EventLog, as_event_id

GRAPH_EVENT_TYPES = ("object.created", "object.patched", "relation.created")


@dataclass(frozen=True)
class Provenance:
    behavior: str
    caused_by_event: EventId
    model_request_event: EventId | None = None

    def to_record(self) -> dict:
        return {
            "behavior": self.behavior,
            "caused_by_event": list(self.caused_by_event),
            "model_request_event": None if self.model_request_event is None else list(self.model_request_event),
        }


@dataclass(frozen=True)
class GraphObject:
    id: str
    type: str
    properties: Any
    provenance: Provenance
    created_by_event: EventId

    def get(self, path, default=None):
        return get_path(self.properties, path, default)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "type": self.type,
            "properties": thaw(self.properties),
            "provenance": self.provenance.to_record(),
            "created_by_event": list(self.created_by_event),
        }


@dataclass(frozen=True)
class Relation:
    id: str
    type: str
    from_id: str
    to_id: str
    properties: Any
    provenance: Provenance
    created_by_event: EventId

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "type": self.type,
            "from": self.from_id,
            "to": self.to_id,
            "properties": thaw(self.properties),
            "provenance": self.provenance.to_record(),
            "created_by_event": list(self.created_by_event),
        }


@dataclass(frozen=True)
class PatchOp:
    path: tuple[str, ...]
    op: str  # "set" | "remove"
    value: Any = None


@dataclass(frozen=True)
class Patch:
    target: str
    ops: tuple[PatchOp, ...]


@dataclass
class GraphDelta:
    objects_created: list[GraphObject] = field(default_factory=list)
    relations_created: list[Relation] = field(default_factory=list)
    patches: list[Patch] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.objects_created or self.relations_created or self.patches)


_MISSING = object()


def get_path(properties: Any, path, default=None):
    """Follow a key path (tuple or dotted string) into nested maps."""
    if isinstance(path, str):
        path = tuple(path.split("."))
    node = properties
    for key in path:
        if not isinstance(node, dict) or key not in node:
            return default
        node = node[key]
    return node


def has_path(properties: Any, path) -> bool:
    return get_path(properties, path, _MISSING) is not _MISSING


def apply_ops(properties: Any, ops: Iterable[PatchOp]) -> FrozenDict:
    """Apply patch operations in order; last writer wins, removing an absent path is a no-op."""
    props = thaw(properties)
    for op in ops:
        if not op.path:
            raise ValueError("patch path must be non-empty")
        if op.op == "set":
            node = props
            for key in op.path[:-1]:
                child = node.get(key)
                if not isinstance(child, dict):
                    child = {}
                    node[key] = child
                node = child
            node[op.path[-1]] = thaw(op.value)
        elif op.op == "remove":
            node = props
            for key in op.path[:-1]:
                node = node.get(key) if isinstance(node, dict) else None
                if not isinstance(node, dict):
                    break
            else:
                node.pop(op.path[-1], None)
        else:
            raise ValueError(f"unknown patch op {op.op!r}")
    return freeze(props)


def parse_ops(raw_ops: Iterable[Any]) -> tuple[PatchOp, ...]:
    ops = []
    for raw in raw_ops:
        path = raw["path"]
        if isinstance(path, str):
            path = path.split(".")
        ops.append(PatchOp(tuple(str(p) for p in path), raw["op"], raw.get("value")))
    return tuple(ops)


def _provenance(payload: Any, event: Event) -> Provenance:
    raw = payload.get("provenance") or {}
    cause = as_event_id(raw.get("caused_by_event")) or event.caused_by or event.id
    return Provenance(
        behavior=raw.get("behavior") or event.actor,
        caused_by_event=cause,
        model_request_event=as_event_id(raw.get("model_request_event")),
    )


class Graph:
    """Objects and relations keyed by id, plus by-type and adjacency indexes.

    ``object_types``/``relation_types`` of ``None`` accept any type name.
    """

    def __init__(self, object_types: Iterable[str] | None = None, relation_types: Iterable[str] | None = None):
        self.object_types = None if object_types is None else frozenset(object_types)
        self.relation_types = None if relation_types is None else frozenset(relation_types)
        self.objects: dict[str, GraphObject] = {}
        self.relations: dict[str, Relation] = {}
        self.objects_by_type: dict[str, list[str]] = {}
        self.relations_by_type: dict[str, list[str]] = {}
        self.outgoing: dict[str, list[str]] = {}
        self.incoming: dict[str, list[str]] = {}
        self.applied = 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.objects == other.objects and self.relations == other.relations

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Graph(objects={len(self.objects)}, relations={len(self.relations)})"

    def apply(self, event: Event) -> GraphDelta:
        return apply_event(self, event)

    def copy(self) -> Graph:
        other = Graph(self.object_types, self.relation_types)
        other.objects = dict(self.objects)
        other.relations = dict(self.relations)
        other.objects_by_type = {k: list(v) for k, v in self.objects_by_type.items()}
        other.relations_by_type = {k: list(v) for k, v in self.relations_by_type.items()}
        other.outgoing = {k: list(v) for k, v in self.outgoing.items()}
        other.incoming = {k: list(v) for k, v in self.incoming.items()}
        other.applied = self.applied
        return other

    def check_indexes(self) -> None:
        """Assert the indexes agree with the primary maps (used by tests)."""
        by_type: dict[str, list[str]] = {}
        for oid, obj in self.objects.items():
            by_type.setdefault(obj.type, []).append(oid)
        assert by_type == self.objects_by_type
        rel_by_type: dict[str, list[str]] = {}
        out: dict[str, list[str]] = {}
        inc: dict[str, list[str]] = {}
        for rid, rel in self.relations.items():
            rel_by_type.setdefault(rel.type, []).append(rid)
            out.setdefault(rel.from_id, []).append(rid)
            inc.setdefault(rel.to_id, []).append(rid)
        assert rel_by_type == self.relations_by_type
        assert out == self.outgoing
        assert inc == self.incoming


def apply_event(graph: Graph, event: Event) -> GraphDelta:
    """Fold one event into ``graph`` and report what changed."""
    delta = GraphDelta()
    payload = event.payload
    if event.type == "object.created":
        oid = payload["id"]
        otype = payload["type"]
        if graph.object_types is not None and otype not in graph.object_types:
            raise UnknownObjectType(f"object type {otype!r} is not declared")
        if oid in graph.objects or oid in graph.relations:
            raise DuplicateObject(f"id {oid!r} already exists")
        obj = GraphObject(
            id=oid,
            type=otype,
            properties=freeze(payload.get("properties") or {}),
            provenance=_provenance(payload, event),
            created_by_event=event.id,
        )
        graph.objects[oid] = obj
        graph.objects_by_type.setdefault(otype, []).append(oid)
        delta.objects_created.append(obj)
    elif event.type == "relation.created":
        rid = payload["id"]
        rtype = payload["type"]
        if graph.relation_types is not None and rtype not in graph.relation_types:
            raise UnknownRelationType(f"relation type {rtype!r} is not declared")
        if rid in graph.relations or rid in graph.objects:
            raise DuplicateObject(f"id {rid!r} already exists")
        for end in ("from", "to"):
            if payload[end] not in graph.objects:
                raise DanglingReference(f"relation {rid!r} {end} end {payload[end]!r} does not exist")
        rel = Relation(
            id=rid,
            type=rtype,
            from_id=payload["from"],
            to_id=payload["to"],
            properties=freeze(payload.get("properties") or {}),
            provenance=_provenance(payload, event),
            created_by_event=event.id,
        )
        graph.relations[rid] = rel
        graph.relations_by_type.setdefault(rtype, []).append(rid)
        graph.outgoing.setdefault(rel.from_id, []).append(rid)
        graph.incoming.setdefault(rel.to_id, []).append(rid)
        delta.relations_created.append(rel)
    elif event.type == "object.patched":
        target = payload["target"]
        obj = graph.objects.get(target)
        if obj is None:
            raise PatchTargetMissing(f"patch target {target!r} does not exist")
        ops = parse_ops(payload["ops"])
        graph.objects[target] = replace(obj, properties=apply_ops(obj.properties, ops))
        delta.patches.append(Patch(target, ops))
    graph.applied += 1
    return delta


def project(log: EventLog | Iterable[Event], object_types=None, relation_types=None) -> Graph:
    graph = Graph(object_types, relation_types)
    for event in log:
        try:
            apply_event(graph, event)
        except ProjectionError as exc:
            exc.seq = event.seq
            exc.args = (f"seq {event.seq}: {exc.args[0] if exc.args else exc}",)
            raise
    return graph


def _creation_seq(item) -> int:
    return item.created_by_event.seq


def query(
    graph: Graph,
    object_type: str | None = None,
    relation_type: str | None = None,
    from_id: str | None = None,
    to_id: str | None = None,
) -> list:
    """Read-side lookup, always in ascending creation order.

    Without relation filters, returns the objects of ``object_type`` (or all).
    With ``to_id`` (or ``from_id``) and optionally ``relation_type``, returns the
    objects at the other end of matching relations, filtered by ``object_type``.
    With only ``relation_type``, returns the matching relations themselves.
    """
    if relation_type is None and from_id is None and to_id is None:
        ids = graph.objects_by_type.get(object_type, []) if object_type else list(graph.objects)
        return sorted((graph.objects[i] for i in ids), key=_creation_seq)

    rels = relations(graph, relation_type, from_id, to_id)
    if from_id is None and to_id is None:
        return rels
    seen: dict[str, GraphObject] = {}
    for rel in rels:
        other = rel.from_id if to_id is not None else rel.to_id
        obj = graph.objects[other]
        if object_type is None or obj.type == object_type:
            seen.setdefault(other, obj)
    return sorted(seen.values(), key=_creation_seq)


def relations(
    graph: Graph,
    relation_type: str | None = None,
    from_id: str | None = None,
    to_id: str | None = None,
) -> list[Relation]:
    if from_id is not None:
        ids = graph.outgoing.get(from_id, [])
    elif to_id is not None:
        ids = graph.incoming.get(to_id, [])
    elif relation_type is not None:
        ids = graph.relations_by_type.get(relation_type, [])
    else:
        ids = list(graph.relations)
    out = []
    for rid in ids:
        rel = graph.relations[rid]
        if relation_type is not None and rel.type != relation_type:
            continue
        if from_id is not None and rel.from_id != from_id:
            continue
        if to_id is not None and rel.to_id != to_id:
            continue
        out.append(rel)
    return sorted(out, key=_creation_seq)


def export_graph(graph: Graph) -> bytes:
    """Canonical debug export, objects and relations sorted by id."""
    return canonicalize(
        {
            "objects": [graph.objects[k].to_record() for k in sorted(graph.objects)],
            "relations": [graph.relations[k].to_record() for k in sorted(graph.relations)],
        }
    )


class GraphView:
    """Read-only window onto a live graph, handed to behavior bodies."""

    def __init__(self, graph: Graph):
        self._graph = graph

    def __contains__(self, oid: str) -> bool:
        return oid in self._graph.objects

    def __len__(self) -> int:
        return len(self._graph.objects)

    def get(self, oid: str) -> GraphObject | None:
        return self._graph.objects.get(oid)

    def relation(self, rid: str) -> Relation | None:
        return self._graph.relations.get(rid)

    def objects(self, object_type: str | None = None) -> list[GraphObject]:
        return query(self._graph, object_type)

    def query(self, object_type=None, relation_type=None, from_id=None, to_id=None) -> list:
        return query(self._graph, object_type, relation_type, from_id, to_id)

    def relations(self, relation_type=None, from_id=None, to_id=None) -> list[Relation]:
        return relations(self._graph, relation_type, from_id, to_id)

    def match(self, pattern, anchor: str) -> list[dict[str, str]]:
        from .pattern import match_pattern

        return match_pattern(self._graph, pattern, anchor)

    def snapshot(self) -> Graph:
        return self._graph.copy()
