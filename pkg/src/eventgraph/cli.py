"""``eventgraph`` command line.

Exit codes:
  0  success
  1  usage error, missing or unreadable file
  2  fixture miss (a model request had no scripted response)
  3  budget halt
  4  strict replay divergence
  5  pack lacks a behavior named in the log
  6  fork cutoff out of range
  7  diff of unrelated runs
  8  lineage target not found
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from .canonical import canonicalize
from .errors import (
    CutoffOutOfRange,
    DivergenceError,
    EventGraphError,
    FixtureMiss,
    MissingBehavior,
    UnknownTarget,
    UnrelatedRuns,
)
from .log import EventLog, load_log, save_log
from .pack import Pack, find_pack
from .replay import ForkSpec, fork, lineage, replay, structural_diff

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FIXTURE_MISS = 2
EXIT_BUDGET = 3
EXIT_DIVERGENCE = 4
EXIT_MISSING_BEHAVIOR = 5
EXIT_CUTOFF = 6
EXIT_UNRELATED = 7
EXIT_UNKNOWN_TARGET = 8

_EXIT_FOR = (
    (FixtureMiss, EXIT_FIXTURE_MISS),
    (DivergenceError, EXIT_DIVERGENCE),
    (MissingBehavior, EXIT_MISSING_BEHAVIOR),
    (CutoffOutOfRange, EXIT_CUTOFF),
    (UnrelatedRuns, EXIT_UNRELATED),
    (UnknownTarget, EXIT_UNKNOWN_TARGET),
)


def parse_assignments(items: list[str] | None) -> dict:
    """``key=value`` pairs; values are read as JSON when they parse, else as strings."""
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _write_canonical(path: Path, value) -> Path:
    path.write_bytes(canonicalize(value) + b"\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pack_for(log: EventLog, name: str | None) -> Pack:
    if name is None and len(log) and log[0].type == "run.started":
        name = log[0].payload.get("pack")
    return find_pack(name or "diligence")


def _print_summary(summary: dict) -> None:
    for key in ("events", "objects", "relations", "model_calls", "tool_calls"):
        print(f"{key:<12} {summary[key]}")
    by_type = ", ".join(f"{k}={v}" for k, v in summary["objects_by_type"].items())
    print(f"{'by type':<12} {by_type}")


def _finish_run(rt, out: Path, figures: bool) -> int:
    path = save_log(rt.log, out / f"{rt.log.run}.log")
    summary = rt.summary()
    _write_canonical(out / "summary.json", summary)
    if figures:
        from .plotting import plot_run

        plot_run(rt.log, out / "events.png")
    _print_summary(summary)
    print(f"log written to {path}")
    failed = [e for e in rt.log if e.type == "behavior.failed"]
    if rt.stats.fixture_misses:
        for e in failed:
            if "FixtureMiss" in e.payload["error"]:
                print(f"fixture miss in {e.payload['behavior']}: {e.payload['error']}", file=sys.stderr)
        return EXIT_FIXTURE_MISS
    if rt.halted is not None:
        d = rt.halted.payload
        print(f"halted: budget.exceeded {d['dimension']} (limit {d['limit']}) at seq {rt.halted.seq}")
        return EXIT_BUDGET
    return EXIT_OK


def cmd_quickstart(args) -> int:
    pack = find_pack("diligence")
    rt = pack.run_demo("quickstart", budget=parse_assignments(args.budget))
    return _finish_run(rt, _out_dir(args), not args.no_figures)


def cmd_run(args) -> int:
    pack = find_pack(args.pack)
    if args.input:
        demo = json.loads(Path(args.input).read_text("utf-8"))
        pack.manifest = {**pack.manifest, "demo": demo}
    rt = pack.run_demo(args.run_id or pack.name, budget=parse_assignments(args.budget))
    return _finish_run(rt, _out_dir(args), not args.no_figures)


def cmd_replay(args) -> int:
    log = load_log(args.log)
    pack = _pack_for(log, args.pack)
    if args.strict:
        result = replay(log, "strict", pack)
        stats = result.runtime.stats
        print(f"strict replay ok: {len(log)} events reproduced")
        print(f"{stats.provider_calls + stats.tool_executions} live calls "
              f"(provider {stats.provider_calls}, tools {stats.tool_executions})")
        return EXIT_OK
    result = replay(log, "permissive", pack, overrides=parse_assignments(args.override))
    if not result.new_run:
        print(f"permissive replay: no divergence, 0 fresh events ({len(log)} events)")
        return EXIT_OK
    path = save_log(result.log, _out_dir(args) / f"{result.log.run}.log")
    print(f"permissive replay diverged at seq {result.divergence_seq}; new run {result.log.run}")
    print(f"{result.fresh_events} fresh events, {result.provider_calls} live model calls")
    print(f"log written to {path}")
    return EXIT_OK


def cmd_fork(args) -> int:
    parent = load_log(args.log)
    pack = _pack_for(parent, args.pack)
    overrides = parse_assignments(args.override)
    result = fork(parent, ForkSpec(parent.run, args.at, overrides), pack, run_id=args.run_id)
    path = save_log(result.log, _out_dir(args) / f"{result.log.run}.log")
    print(f"forked {parent.run} at {args.at} -> {result.log.run}")
    print(f"prefix provider calls {result.prefix_provider_calls}, live provider calls {result.live_provider_calls}")
    print(f"{len(result.log)} events, {len(result.graph.objects)} objects, {len(result.graph.relations)} relations")
    print(f"log written to {path}")
    if result.runtime.halted is not None:
        return EXIT_BUDGET
    return EXIT_OK


def cmd_diff(args) -> int:
    a, b = load_log(args.run_a), load_log(args.run_b)
    diff = structural_diff(a, b)
    out = _out_dir(args)
    print(diff.render())
    _write_canonical(out / "diff.json", diff.to_report())
    if not args.no_figures:
        from .plotting import plot_diff

        plot_diff(diff, out / "diff.png")
    print(f"report written to {out / 'diff.json'}")
    return EXIT_OK


def cmd_lineage(args) -> int:
    log = load_log(args.log)
    target = args.object if args.object is not None else args.event
    chain = lineage(log, target)
    print(chain.render())
    return EXIT_OK


def cmd_inspect(args) -> int:
    log = load_log(args.log)
    parent = log.parent
    print(f"run {log.run}" + (f" (fork of {parent[0]} at {parent[1]})" if parent else ""))
    print(f"{len(log)} events")
    for event_type, n in sorted(Counter(e.type for e in log).items()):
        print(f"  {event_type:<18} {n}")
    shown = [e for e in log if args.type is None or e.type == args.type]
    for event in shown[: args.limit]:
        cause = "-" if event.caused_by is None else f"#{event.caused_by.seq}"
        print(f"#{event.seq:<5} {event.type:<18} {event.actor:<22} {cause}")
    return EXIT_OK


def _clip(value, width: int = 160) -> str:
    text = repr(value)
    return text if len(text) <= width else text[: width - 3] + "..."


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventgraph",
        description=__doc__.split("\n")[0],
        epilog=__doc__.split("\n", 2)[2],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def outputs(p, default="."):
        p.add_argument("--out", default=default, help="directory for logs, reports and figures")
        p.add_argument("--no-figures", action="store_true", help="skip writing PNG figures")

    p = sub.add_parser("quickstart", help="run the bundled diligence demo offline")
    outputs(p)
    p.add_argument("--budget", action="append", metavar="DIM=N", help="budget override, e.g. max_events=100")
    p.set_defaults(fn=cmd_quickstart)

    p = sub.add_parser("run", help="run a pack's demo input (or --input) to quiescence")
    outputs(p)
    p.add_argument("--pack", default="diligence", help="pack name or directory")
    p.add_argument("--input", help="JSON file with {type, properties} of the initial object")
    p.add_argument("--run-id")
    p.add_argument("--budget", action="append", metavar="DIM=N")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("replay", help="replay a log strictly or permissively")
    p.add_argument("log")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--pack")
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default=".")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("fork", help="branch a run after event --at and run the branch forward")
    p.add_argument("log")
    p.add_argument("--at", type=int, required=True)
    p.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="behavior.key=value, budget.dim=value, or fixtures.behavior.index=<json>")
    p.add_argument("--pack")
    p.add_argument("--run-id")
    p.add_argument("--out", default=".")
    p.set_defaults(fn=cmd_fork)

    p = sub.add_parser("diff", help="structural diff of two runs sharing a prefix")
    p.add_argument("run_a")
    p.add_argument("run_b")
    outputs(p)
    p.set_defaults(fn=cmd_diff)

    p = sub.add_parser("lineage", help="causal chain of an object, relation or event")
    p.add_argument("log")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--object")
    target.add_argument("--event", type=int, metavar="SEQ")
    p.set_defaults(fn=cmd_lineage)

    p = sub.add_parser("inspect", help="summarize a log file")
    p.add_argument("log")
    p.add_argument("--type", help="only list events of this type")
    p.add_argument("--limit", type=int, default=0, help="list up to this many events")
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DivergenceError as exc:
        print(f"divergence at seq {exc.seq}", file=sys.stdout)
        for name, expected, actual in exc.field_diffs:
            print(f"  {name}: expected {_clip(expected)}, got {_clip(actual)}")
        return EXIT_DIVERGENCE
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except EventGraphError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        for cls, code in _EXIT_FOR:
            if isinstance(exc, cls):
                return code
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
