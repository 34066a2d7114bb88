"""Hypothesis strategies for well-formed logs, small graphs, and patterns."""

from hypothesis import strategies as st

from eventgraph.graph import Graph, apply_event
from eventgraph.log import EventLog, SimulatedClock
from eventgraph.pattern import EdgePattern, NodePattern, Pattern, Predicate

OBJECT_TYPES = ("a", "b", "c")
RELATION_TYPES = ("r", "s")
KEYS = ("k", "m", "n")

scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(-3, 3),
    st.sampled_from(["x", "y", "it's"]),
)
properties = st.dictionaries(st.sampled_from(KEYS), scalars, max_size=3)


@st.composite
def logs(draw, max_events=50, run="r"):
    """A log of graph and non-graph events whose references are all valid."""
    clock = SimulatedClock()
    log = EventLog(run)
    log.append("run.started", {"run": run}, "system", timestamp_source=clock)
    objects: list[str] = []
    n = draw(st.integers(0, max_events - 1))
    for i in range(n):
        choices = ["object", "noise"]
        if objects:
            choices += ["relation", "patch", "patch"]
        kind = draw(st.sampled_from(choices))
        cause = draw(st.sampled_from([None, *[e.id for e in log][-3:]]))
        if kind == "object":
            oid = f"o{i}"
            objects.append(oid)
            payload = {"id": oid, "type": draw(st.sampled_from(OBJECT_TYPES)), "properties": draw(properties),
                       "provenance": {"behavior": "t", "model_request_event": None}}
            log.append("object.created", payload, "user", cause, timestamp_source=clock)
        elif kind == "relation":
            payload = {"id": f"e{i}", "type": draw(st.sampled_from(RELATION_TYPES)),
                       "from": draw(st.sampled_from(objects)), "to": draw(st.sampled_from(objects)),
                       "properties": {}, "provenance": {"behavior": "t", "model_request_event": None}}
            log.append("relation.created", payload, "user", cause, timestamp_source=clock)
        elif kind == "patch":
            ops = draw(st.lists(
                st.one_of(
                    st.builds(lambda k, v: {"path": [k], "op": "set", "value": v}, st.sampled_from(KEYS), scalars),
                    st.builds(lambda k: {"path": [k], "op": "remove"}, st.sampled_from(KEYS)),
                    st.builds(lambda k, v: {"path": ["nested", k], "op": "set", "value": v},
                              st.sampled_from(KEYS), scalars),
                ),
                min_size=1, max_size=3,
            ))
            log.append("object.patched", {"target": draw(st.sampled_from(objects)), "ops": ops}, "user", cause,
                       timestamp_source=clock)
        else:
            log.append("llm.requested", {"behavior": "t", "prompt_hash": str(i)}, "t", cause,
                       timestamp_source=clock)
    return log


# -- graphs and patterns for the matcher -----------------------------------------


def build(objects, relations=()):
    log = EventLog("g")
    g = Graph()
    for oid, otype, props in objects:
        apply_event(g, log.append("object.created", {"id": oid, "type": otype, "properties": props}, "user"))
    for i, (src, rtype, dst) in enumerate(relations):
        apply_event(g, log.append("relation.created",
                                  {"id": f"r{i}", "type": rtype, "from": src, "to": dst}, "user"))
    return g


names = st.sampled_from(["a", "b", "c", "d"])
types = st.sampled_from([None, "t", "u"])
literals = st.one_of(st.integers(-5, 5), st.booleans(), st.sampled_from(["x", "it's", ""]))


@st.composite
def patterns(draw):
    vars_ = draw(st.lists(names, min_size=1, max_size=3, unique=True))
    nodes = tuple(NodePattern(v, draw(types)) for v in vars_)
    edges = tuple(EdgePattern(draw(st.sampled_from(vars_)), draw(st.sampled_from(["r", "s"])),
                              draw(st.sampled_from(vars_))) for _ in range(draw(st.integers(0, 3))))
    preds = []
    for _ in range(draw(st.integers(0, 2))):
        comparator = draw(st.sampled_from(["=", "!=", "exists", "missing"]))
        preds.append(Predicate(draw(st.sampled_from(vars_)), (draw(st.sampled_from(["k", "m"])),), comparator,
                               draw(literals) if comparator in ("=", "!=") else None))
    return Pattern(nodes, edges, tuple(preds), draw(st.sampled_from(vars_)))


@st.composite
def graphs(draw, max_objects=8):
    n = draw(st.integers(1, max_objects))
    objects = [(f"o{i}", draw(st.sampled_from(["t", "u"])),
                draw(st.dictionaries(st.sampled_from(["k", "m"]), literals, max_size=2))) for i in range(n)]
    ids = [o[0] for o in objects]
    relations = draw(st.lists(st.tuples(st.sampled_from(ids), st.sampled_from(["r", "s"]), st.sampled_from(ids)),
                              max_size=2 * n))
    return build(objects, relations)
