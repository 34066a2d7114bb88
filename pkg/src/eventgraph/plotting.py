"""Figures written next to CLI reports. Uses the non-interactive Agg backend."""

from __future__ import annotations

from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .log import EventLog  # noqa: E402
from .replay import StructuralDiff  # noqa: E402

# fixed metadata keeps the PNG bytes stable across reruns
_PNG_META = {"Software": None}


def plot_run(log: EventLog, path: str | Path) -> Path:
    """Event counts by type, and graph growth over the run."""
    counts = Counter(e.type for e in log)
    types = sorted(counts)
    seqs, objects, relations = [], [], []
    n_obj = n_rel = 0
    for event in log:
        n_obj += event.type == "object.created"
        n_rel += event.type == "relation.created"
        seqs.append(event.seq)
        objects.append(n_obj)
        relations.append(n_rel)

    fig, (left, right) = plt.subplots(1, 2, figsize=(11, 4.5))
    left.barh(types, [counts[t] for t in types], color="#4c72b0")
    left.set_xlabel("events")
    left.set_title(f"{log.run}: {len(log)} events by type")
    right.step(seqs, objects, where="post", label="objects")
    right.step(seqs, relations, where="post", label="relations")
    halt = [e.seq for e in log if e.type == "budget.exceeded"]
    for seq in halt:
        right.axvline(seq, color="#c44e52", linestyle="--", label="budget.exceeded")
    right.set_xlabel("seq")
    right.set_ylabel("count")
    right.set_title("graph size over the run")
    right.legend(loc="upper left")
    fig.tight_layout()
    return _save(fig, path)


def plot_diff(diff: StructuralDiff, path: str | Path) -> Path:
    """Per-type counts of artifacts present in only one run, plus changed objects."""
    a = Counter(o.type for o in diff.objects_only_in_a)
    b = Counter(o.type for o in diff.objects_only_in_b)
    changed = Counter(c.type for c in diff.changed_objects)
    types = sorted(set(a) | set(b) | set(changed)) or ["(none)"]
    ys = range(len(types))
    height = 0.27

    fig, ax = plt.subplots(figsize=(8, 0.5 * len(types) + 2))
    ax.barh([y - height for y in ys], [a[t] for t in types], height, label=f"only in {diff.run_a}")
    ax.barh(list(ys), [b[t] for t in types], height, label=f"only in {diff.run_b}")
    ax.barh([y + height for y in ys], [changed[t] for t in types], height, label="changed")
    ax.set_yticks(list(ys))
    ax.set_yticklabels(types)
    ax.set_xlabel("objects")
    ax.set_title(f"structural diff after a shared prefix of {diff.cutoff} events")
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path
