"""Recorded model and tool effects.

Model and tool calls go out once; their responses are written to the log as
``llm.responded`` / ``tool.responded`` events and served from a
content-addressed index of those events ever after.
"""

from __future__ import annotations

import json
import os
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

from .canonical import canonicalize, digest, freeze, thaw
from .errors import FixtureMiss
from .log import Event, EventId, EventLog


@dataclass(frozen=True)
class ModelRequest:
    model: str
    system: str
    messages: tuple = ()
    tools: tuple = ()
    output_schema: Any = None
    temperature: int = 0

    def __post_init__(self):
        if self.temperature != 0 or isinstance(self.temperature, bool):
            raise ValueError("requests issued by this runtime are pinned to temperature 0")
        object.__setattr__(self, "messages", freeze(list(self.messages)))
        object.__setattr__(self, "tools", freeze(list(self.tools)))
        object.__setattr__(self, "output_schema", freeze(self.output_schema))

    def normalized(self) -> dict:
        """Request as hashed: tools ordered by name, absent optional fields dropped."""
        body: dict[str, Any] = {
            "model": self.model,
            "system": self.system,
            "messages": [_message(m) for m in self.messages],
            "temperature": 0,
        }
        if self.tools:
            body["tools"] = sorted((thaw(t) for t in self.tools), key=lambda t: t["name"])
        if self.output_schema is not None:
            body["output_schema"] = thaw(self.output_schema)
        return body

    @classmethod
    def from_payload(cls, payload: Mapping) -> ModelRequest:
        return cls(
            model=payload["model"],
            system=payload["system"],
            messages=tuple(payload.get("messages", ())),
            tools=tuple(payload.get("tools", ())),
            output_schema=payload.get("output_schema"),
            temperature=payload.get("temperature", 0),
        )


def _message(m: Any) -> dict:
    if isinstance(m, str):
        return {"role": "user", "content": m}
    return {"role": m["role"], "content": m["content"]}


def model_key(request: ModelRequest) -> str:
    return digest(canonicalize(request.normalized(), integers_only=True))


def tool_key(tool: str, args: Any) -> str:
    return digest(canonicalize({"tool": tool, "args": args}, integers_only=True))


@dataclass(frozen=True)
class CacheEntry:
    event_id: EventId
    response: Any
    cost: Any = 0


class ResponseCache:
    """Index from cache key to the response event that recorded it.

    Built from (and kept in step with) a log; never a separate store.
    """

    def __init__(self):
        self._entries: dict[str, CacheEntry] = {}

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> CacheEntry | None:
        return self._entries.get(key)

    def observe(self, event: Event) -> None:
        if event.type == "llm.responded":
            key = event.payload["prompt_hash"]
        elif event.type == "tool.responded":
            key = event.payload["key"]
        else:
            return
        # first recording wins; cached re-serves point back at it
        self._entries.setdefault(key, CacheEntry(event.id, event.payload["response"], event.payload.get("cost", 0)))

    @classmethod
    def from_log(cls, log: EventLog | Iterable[Event]) -> ResponseCache:
        cache = cls()
        for event in log:
            cache.observe(event)
        return cache


# -- providers -----------------------------------------------------------------


@dataclass(frozen=True)
class ProviderResponse:
    response: Any
    cost: Any = 0


class Provider(Protocol):
    def call(self, request: ModelRequest, *, behavior: str, index: int) -> ProviderResponse: ...


class CallableProvider:
    """Adapts a plain function ``(request) -> response`` into a provider.

    The hook for live model integrations; ``cost`` may be a constant or a
    function of the response.
    """

    def __init__(self, fn: Callable[[ModelRequest], Any], cost: Any = 0):
        self.fn = fn
        self.cost = cost
        self.calls = 0

    def call(self, request, *, behavior, index):
        self.calls += 1
        response = self.fn(request)
        cost = self.cost(response) if callable(self.cost) else self.cost
        return ProviderResponse(response, cost)


@dataclass(frozen=True)
class Fixture:
    match: Any
    response: Any

    def matches_key(self, key: str) -> bool:
        return self.match.get("key") == key

    def to_record(self) -> dict:
        return {"match": thaw(self.match), "response": thaw(self.response)}


class FixtureProvider:
    """Scripted responses; a pure function of the request and its call position.

    A fixture matches either on the exact cache key (``{"key": ...}``) or on the
    calling behavior and its per-run provider call index
    (``{"behavior": ..., "index": n}``). Exact keys take precedence.
    """

    def __init__(self, fixtures: Iterable[Fixture] = ()):
        self.by_key: dict[str, Any] = {}
        self.by_position: dict[tuple[str, int], Any] = {}
        for fx in fixtures:
            self.add(fx)
        self.calls = 0

    def add(self, fixture: Fixture) -> None:
        match = fixture.match
        if "key" in match:
            self.by_key[match["key"]] = fixture.response
        elif "behavior" in match and "index" in match:
            self.by_position[(match["behavior"], int(match["index"]))] = fixture.response
        else:
            raise ValueError(f"fixture match must name a key or a behavior and index: {thaw(match)}")

    def call(self, request: ModelRequest, *, behavior: str, index: int) -> ProviderResponse:
        self.calls += 1
        key = model_key(request)
        if key in self.by_key:
            return ProviderResponse(self.by_key[key], 0)
        if (behavior, index) in self.by_position:
            return ProviderResponse(self.by_position[(behavior, index)], 0)
        raise FixtureMiss(f"no fixture for behavior {behavior!r} call {index} (key {key[:12]})")

    def with_overrides(self, overrides: Mapping[tuple[str, int] | str, Any]) -> FixtureProvider:
        clone = FixtureProvider()
        clone.by_key = dict(self.by_key)
        clone.by_position = dict(self.by_position)
        for where, response in overrides.items():
            if isinstance(where, str):
                clone.by_key[where] = freeze(response)
            else:
                clone.by_position[(where[0], int(where[1]))] = freeze(response)
        return clone

    @classmethod
    def from_dir(cls, path: str | os.PathLike) -> FixtureProvider:
        """Load every ``*.json`` fixture file under ``path`` (sorted by name)."""
        fixtures = []
        for file in sorted(Path(path).glob("*.json")):
            rec = json.loads(file.read_text("utf-8"))
            fixtures.append(Fixture(freeze(rec["match"]), freeze(rec["response"])))
        return cls(fixtures)


def write_fixture(directory: str | os.PathLike, name: str, match: Mapping, response: Any) -> Path:
    path = Path(directory) / f"{name}.json"
    path.write_bytes(canonicalize({"match": match, "response": response}) + b"\n")
    return path


# -- tools ---------------------------------------------------------------------


class ToolRegistry:
    """Named tool implementations, with an execution counter."""

    def __init__(self, tools: Mapping[str, Callable[[Any], Any]] | None = None):
        self._tools = dict(tools or {})
        self.executions = 0

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def names(self) -> list[str]:
        return sorted(self._tools)

    def execute(self, name: str, args: Any) -> Any:
        self.executions += 1
        return self._tools[name](thaw(args))

