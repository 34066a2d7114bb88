"""Packs: a manifest naming object types, behaviors, tools, fixtures, and a default budget.

A pack is a directory holding ``manifest.json`` plus the Python modules and
fixture files it names. Behavior entries are ``module:attr`` references into
the pack directory; the attribute is either a :class:`Behavior` or a
:class:`ConfiguredBehavior` subclass declaring ``event_type`` (and optionally
``predicate`` / ``pattern``) as class attributes.
"""

from __future__ import annotations

import importlib.util
import json
import os
import sys
from collections.abc import Mapping
from dataclasses import replace
from pathlib import Path
from typing import Any

from .canonical import freeze, thaw
from .effects import FixtureProvider, ToolRegistry
from .errors import PackError
from .log import SimulatedClock
from .runtime import Behavior, Budget, ConfiguredBehavior, Form, Runtime, Subscription

PACK_PATH_ENV = "EVENTGRAPH_PACK_PATH"
BUILTIN_PACKS = Path(__file__).parent / "packs"


def _set_path(config: Mapping, dotted: str, value: Any) -> dict:
    out = thaw(config)
    node = out
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value
    return out


def split_overrides(overrides: Mapping[str, Any]) -> tuple[dict, dict, dict]:
    """Partition flat ``key=value`` overrides into (behavior config, budget, fixtures)."""
    config: dict[str, dict[str, Any]] = {}
    budget: dict[str, Any] = {}
    fixtures: dict[tuple[str, int], Any] = {}
    for key, value in overrides.items():
        head, _, rest = key.partition(".")
        if not rest:
            raise PackError(f"override {key!r} must look like <behavior>.<key>, budget.<dim> or fixtures.<b>.<n>")
        if head == "budget":
            budget[rest] = value
        elif head == "fixtures":
            name, _, index = rest.rpartition(".")
            if not name or not index.isdigit():
                raise PackError(f"fixture override {key!r} must be fixtures.<behavior>.<index>")
            fixtures[(name, int(index))] = value
        else:
            config.setdefault(head, {})[rest] = value
    return config, budget, fixtures


class Pack:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.is_file():
            raise PackError(f"no manifest.json in {self.root}")
        self.manifest = json.loads(path.read_text("utf-8"))
        self.name: str = self.manifest["name"]
        self.version: str = str(self.manifest.get("version", "0"))
        self.object_types: list[str] = list(self.manifest.get("object_types", ()))
        self.relation_types: list[str] = list(self.manifest.get("relation_types", ()))
        self.event_types: list[str] = list(self.manifest.get("event_types", ()))
        self.budget = Budget().with_overrides(self.manifest.get("budget", {}))
        self._modules: dict[str, Any] = {}
        self._check_behaviors()

    def __repr__(self) -> str:
        return f"Pack({self.name!r}, {self.root})"

    def module(self, name: str):
        if name not in self._modules:
            file = self.root / f"{name}.py"
            if not file.is_file():
                raise PackError(f"pack {self.name!r} has no module {name!r}")
            qualified = f"eventgraph_pack_{self.name}_{name}"
            spec = importlib.util.spec_from_file_location(qualified, file)
            module = importlib.util.module_from_spec(spec)
            sys.modules[qualified] = module
            spec.loader.exec_module(module)
            self._modules[name] = module
        return self._modules[name]

    def resolve(self, entry: str) -> Any:
        module, _, attr = entry.partition(":")
        try:
            return getattr(self.module(module), attr)
        except AttributeError:
            raise PackError(f"pack {self.name!r}: {entry!r} does not exist") from None

    def _check_behaviors(self) -> None:
        names = [b["name"] for b in self.manifest.get("behaviors", ())]
        if len(set(names)) != len(names):
            raise PackError(f"pack {self.name!r} registers a behavior name twice")
        declared = set(self.object_types)
        for b in self.make_behaviors():
            pattern = b.subscription.pattern
            if pattern is not None and declared:
                unknown = {n.type for n in pattern.nodes if n.type} - declared
                if unknown:
                    raise PackError(f"{b.name}: pattern names undeclared types {sorted(unknown)}")

    def behavior_names(self) -> list[str]:
        return [b["name"] for b in self.manifest.get("behaviors", ())]

    def make_behavior(self, spec: Mapping, config_overrides: Mapping[str, Any] | None = None) -> Behavior:
        target = self.resolve(spec["entry"])
        config = dict(spec.get("config", {}))
        for key, value in (config_overrides or {}).items():
            config = _set_path(config, key, value)
        if isinstance(target, Behavior):
            return replace(target, name=spec["name"], config=freeze({**thaw(target.config), **config}))
        if isinstance(target, type) and issubclass(target, ConfiguredBehavior):
            instance = target(**config)
            sub = Subscription.of(target.event_type, getattr(target, "predicate", None),
                                  getattr(target, "pattern", None))
            return Behavior(spec["name"], sub, instance, Form.CONFIGURED, freeze(instance.config))
        raise PackError(f"{spec['entry']!r} is neither a Behavior nor a ConfiguredBehavior subclass")

    def make_behaviors(self, config_overrides: Mapping[str, Mapping] | None = None) -> list[Behavior]:
        config_overrides = config_overrides or {}
        specs = self.manifest.get("behaviors", ())
        for name in config_overrides:
            if name not in self.behavior_names():
                raise PackError(f"override names unknown behavior {name!r}")
        return [self.make_behavior(spec, config_overrides.get(spec["name"])) for spec in specs]

    def tools(self) -> ToolRegistry:
        return ToolRegistry({name: self.resolve(entry) for name, entry in self.manifest.get("tools", {}).items()})

    def fixtures_dir(self) -> Path | None:
        ref = self.manifest.get("fixtures")
        return None if ref is None else self.root / ref

    def provider(self, overrides: Mapping[str, Any] | None = None) -> FixtureProvider:
        """The pack's fixture provider, with any ``fixtures.<behavior>.<n>`` overrides applied."""
        directory = self.fixtures_dir()
        base = FixtureProvider.from_dir(directory) if directory is not None else FixtureProvider()
        _, _, fixtures = split_overrides(overrides or {})
        return base.with_overrides(fixtures) if fixtures else base

    def build_runtime(self, run_id: str, *, provider=None, budget: Budget | None = None, clock=None,
                      forks=()) -> Runtime:
        return Runtime(
            run_id,
            behaviors=self.make_behaviors(),
            provider=provider,
            tools=self.tools(),
            budget=budget or self.budget,
            clock=clock,
            object_types=self.object_types or None,
            relation_types=self.relation_types or None,
            event_types=self.event_types,
            forks=forks,
        )

    def apply_overrides(self, runtime: Runtime, overrides: Mapping[str, Any]) -> None:
        """Apply behavior-config and budget overrides to a live runtime.

        Fixture overrides are a property of the provider and are handled by
        :meth:`provider`; they are ignored here.
        """
        config, budget, _ = split_overrides(overrides)
        by_name = {spec["name"]: spec for spec in self.manifest.get("behaviors", ())}
        for name, changes in config.items():
            if name not in by_name:
                raise PackError(f"override names unknown behavior {name!r}")
            current = thaw(runtime.behavior(name).config)
            for key, value in changes.items():
                current = _set_path(current, key, value)
            runtime.replace_behavior(self.make_behavior({**by_name[name], "config": current}))
        if budget:
            runtime.budget = runtime.budget.with_overrides(budget)
            runtime.usage.budget = runtime.budget

    def start(self, runtime: Runtime) -> None:
        runtime.start(pack=self.name, version=self.version)
        runtime.emit("pack.loaded", {"pack": self.name, "version": self.version,
                                     "behaviors": self.behavior_names()}, actor="system")

    def run_demo(self, run_id: str = "quickstart", *, budget: Mapping[str, Any] | None = None,
                 provider=None, clock=None) -> Runtime:
        """Run the manifest's ``demo`` input to quiescence and return the runtime."""
        demo = self.manifest.get("demo")
        if demo is None:
            raise PackError(f"pack {self.name!r} has no demo input")
        rt = self.build_runtime(
            run_id,
            provider=provider if provider is not None else self.provider(),
            budget=self.budget.with_overrides(budget or {}),
            clock=clock or SimulatedClock(),
        )
        self.start(rt)
        if rt.halted is None:
            rt.create_object(demo["type"], demo.get("properties", {}))
        return rt


def search_path() -> list[Path]:
    extra = os.environ.get(PACK_PATH_ENV, "")
    return [Path(p) for p in extra.split(os.pathsep) if p] + [BUILTIN_PACKS]


def find_pack(name_or_path: str | os.PathLike) -> Pack:
    """A pack by directory path, or by name on EVENTGRAPH_PACK_PATH and then the built-ins."""
    direct = Path(name_or_path)
    if (direct / "manifest.json").is_file():
        return Pack(direct)
    for base in search_path():
        candidate = base / str(name_or_path)
        if (candidate / "manifest.json").is_file():
            return Pack(candidate)
    raise PackError(f"no pack named {str(name_or_path)!r} on the search path")


def run_quickstart(run_id: str = "quickstart", *, budget: Mapping[str, Any] | None = None,
                   provider=None, pack: Pack | None = None) -> tuple[Runtime, dict]:
    pack = pack or find_pack("diligence")
    rt = pack.run_demo(run_id, budget=budget, provider=provider)
    return rt, rt.summary()
