"""Append-only event log, clocks, and the line-delimited log file format."""

from __future__ import annotations

import json
import os
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, NamedTuple

from .canonical import HASH_NAME, canonicalize, freeze, thaw
from .errors import (
    DanglingCause,
    LogSealed,
    MalformedLog,
    UnknownEventType,
    VersionMismatch,
)

FORMAT_VERSION = "eventgraph-log/1"

CORE_EVENT_TYPES = (
    "run.started",
    "pack.loaded",
    "object.created",
    "object.patched",
    "relation.created",
    "behavior.started",
    "behavior.finished",
    "behavior.failed",
    "llm.requested",
    "llm.responded",
    "llm.failed",
    "tool.requested",
    "tool.responded",
    "tool.failed",
    "budget.exceeded",
)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S.%fZ"


class EventId(NamedTuple):
    run: str
    seq: int

    def __str__(self) -> str:
        return f"{self.run}#{self.seq}"


def as_event_id(value: Any) -> EventId | None:
    """Coerce ``[run, seq]`` (as stored in payloads) into an :class:`EventId`."""
    if value is None:
        return None
    run, seq = value
    return EventId(str(run), int(seq))


@dataclass(frozen=True)
class Event:
    id: EventId
    type: str
    payload: Any
    actor: str
    caused_by: EventId | None
    timestamp: str

    @property
    def seq(self) -> int:
        return self.id.seq

    def to_record(self) -> dict:
        return {
            "id": [self.id.run, self.id.seq],
            "type": self.type,
            "payload": self.payload,
            "actor": self.actor,
            "caused_by": None if self.caused_by is None else [self.caused_by.run, self.caused_by.seq],
            "timestamp": self.timestamp,
        }

    def line(self) -> bytes:
        return canonicalize(self.to_record())


# -- clocks --------------------------------------------------------------------


def format_timestamp(moment: datetime) -> str:
    return moment.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)


TimestampSource = Callable[[], str]


def system_clock() -> str:
    return format_timestamp(datetime.now(timezone.utc))


class SimulatedClock:
    """Deterministic clock for offline runs: a fixed start advancing a fixed step per read."""

    def __init__(self, start: str = "2025-01-01T00:00:00.000000Z", step_us: int = 1000):
        self._next = parse_timestamp(start)
        self._step = timedelta(microseconds=step_us)

    @classmethod
    def after(cls, timestamp: str, step_us: int = 1000) -> SimulatedClock:
        start = parse_timestamp(timestamp) + timedelta(microseconds=step_us)
        return cls(format_timestamp(start), step_us)

    def __call__(self) -> str:
        now = self._next
        self._next = now + self._step
        return format_timestamp(now)


# -- the log -------------------------------------------------------------------


@dataclass(frozen=True)
class ForkRecord:
    """One link of a run's ancestry: the parent run, the cutoff, and what changed."""

    parent: str
    cutoff: int
    overrides: Any = field(default_factory=dict)
    apply_at: int | None = None

    @property
    def effective_at(self) -> int:
        return self.cutoff if self.apply_at is None else self.apply_at

    def to_record(self) -> dict:
        rec = {"parent": self.parent, "cutoff": self.cutoff, "overrides": thaw(self.overrides)}
        if self.apply_at is not None:
            rec["apply_at"] = self.apply_at
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> ForkRecord:
        return cls(rec["parent"], int(rec["cutoff"]), freeze(rec.get("overrides") or {}), rec.get("apply_at"))


class EventLog:
    """The ordered, append-only sequence of events for one run.

    ``run`` is the run identifier recorded in the header; ``current_run`` is the
    identifier new events are stamped with, which differs from ``run`` only while
    a fork or replay is still walking a prefix copied from an ancestor.
    """

    def __init__(
        self,
        run: str,
        *,
        event_types: Iterable[str] = (),
        forks: Iterable[ForkRecord] = (),
    ):
        self.run = run
        self.current_run = run
        self.forks: list[ForkRecord] = list(forks)
        self.event_types: set[str] = set(CORE_EVENT_TYPES) | set(event_types)
        self._events: list[Event] = []
        self._ids: set[EventId] = set()
        self.sealed = False

    # read side

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[Event]:
        return iter(list(self._events))

    def __getitem__(self, index):
        return self._events[index]

    @property
    def events(self) -> tuple[Event, ...]:
        return tuple(self._events)

    @property
    def parent(self) -> tuple[str, int] | None:
        if not self.forks:
            return None
        last = self.forks[-1]
        return (last.parent, last.cutoff)

    def by_seq(self, seq: int) -> Event:
        if not 1 <= seq <= len(self._events):
            raise KeyError(seq)
        return self._events[seq - 1]

    def get(self, event_id: EventId) -> Event | None:
        event_id = as_event_id(event_id)
        if event_id not in self._ids:
            return None
        return self._events[event_id.seq - 1]

    def __contains__(self, event_id) -> bool:
        return as_event_id(event_id) in self._ids

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            self.run == other.run
            and self.forks == other.forks
            and self._events == other._events
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"EventLog(run={self.run!r}, events={len(self)}, parent={self.parent!r})"

    # write side

    def declare(self, *event_types: str) -> None:
        self.event_types.update(event_types)

    def seal(self) -> None:
        self.sealed = True

    def unseal(self) -> None:
        self.sealed = False

    def next_event(
        self,
        type: str,
        payload: Any,
        actor: str,
        caused_by: EventId | None = None,
        timestamp: str | None = None,
    ) -> Event:
        """Build (but do not commit) the event that :meth:`append` would add."""
        if timestamp is None:
            timestamp = system_clock()
        canonicalize(payload)  # validates
        return Event(
            id=EventId(self.current_run, len(self._events) + 1),
            type=type,
            payload=freeze(payload),
            actor=actor,
            caused_by=as_event_id(caused_by),
            timestamp=timestamp,
        )

    def validate(self, event: Event) -> None:
        """Raise if ``event`` could not be committed next."""
        if self.sealed:
            raise LogSealed(f"log {self.run!r} is sealed")
        if event.type not in self.event_types:
            raise UnknownEventType(f"event type {event.type!r} is not declared")
        if event.id.seq != len(self._events) + 1:
            raise ValueError(f"expected seq {len(self._events) + 1}, got {event.id.seq}")
        if event.id in self._ids:
            raise ValueError(f"duplicate event id {event.id}")
        if event.caused_by is not None and event.caused_by not in self._ids:
            raise DanglingCause(f"caused_by {event.caused_by} is not an earlier event of this log")

    def commit(self, event: Event) -> Event:
        self.validate(event)
        self._events.append(event)
        self._ids.add(event.id)
        return event

    def append(
        self,
        type: str,
        payload: Any,
        actor: str,
        caused_by: EventId | None = None,
        timestamp_source: TimestampSource | None = None,
    ) -> Event:
        if self.sealed:
            raise LogSealed(f"log {self.run!r} is sealed")
        clock = timestamp_source or system_clock
        return self.commit(self.next_event(type, payload, actor, caused_by, clock()))

    def header(self) -> dict:
        head: dict[str, Any] = {
            "format": FORMAT_VERSION,
            "run": self.run,
            "hash": HASH_NAME,
            "parent": None,
        }
        if self.forks:
            last = self.forks[-1]
            head["parent"] = {"run": last.parent, "cutoff": last.cutoff}
            head["forks"] = [f.to_record() for f in self.forks]
        return head


# -- persistence ---------------------------------------------------------------


def dump_log(log: EventLog) -> bytes:
    lines = [canonicalize(log.header())]
    lines.extend(event.line() for event in log._events)
    return b"\n".join(lines) + b"\n"


def save_log(log: EventLog, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_bytes(dump_log(log))
    return path


def load_log(path: str | os.PathLike) -> EventLog:
    return parse_log(Path(path).read_bytes())


def parse_log(data: bytes) -> EventLog:
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    if not lines:
        raise MalformedLog(1, "missing header")
    header = _parse_line(lines[0], 1)
    if not isinstance(header, dict) or "format" not in header:
        raise MalformedLog(1, "header is not a log header")
    if header["format"] != FORMAT_VERSION:
        raise VersionMismatch(f"unknown log format {header['format']!r}")
    if header.get("hash") != HASH_NAME:
        raise VersionMismatch(f"unsupported hash function {header.get('hash')!r}")
    try:
        forks = [ForkRecord.from_record(rec) for rec in header.get("forks", [])]
        if header.get("parent") and not forks:
            forks = [ForkRecord(header["parent"]["run"], int(header["parent"]["cutoff"]))]
        log = EventLog(str(header["run"]), forks=forks)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedLog(1, f"bad header: {exc}") from None

    for number, raw in enumerate(lines[1:], start=2):
        rec = _parse_line(raw, number)
        try:
            event = Event(
                id=as_event_id(rec["id"]),
                type=_expect_str(rec["type"]),
                payload=freeze(rec["payload"]),
                actor=_expect_str(rec["actor"]),
                caused_by=as_event_id(rec["caused_by"]),
                timestamp=_expect_str(rec["timestamp"]),
            )
            parse_timestamp(event.timestamp)
            canonicalize(event.payload)
            log.declare(event.type)
            log.commit(event)
        except Exception as exc:  # any structural defect is reported by line
            raise MalformedLog(number, f"{type(exc).__name__}: {exc}") from None
    return log


def _parse_line(raw: bytes, number: int) -> Any:
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedLog(number, f"invalid JSON: {exc}") from None


def _expect_str(value: Any) -> str:
    if not isinstance(value, str):
        raise TypeError(f"expected string, got {type(value).__name__}")
    return value
