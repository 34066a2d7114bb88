import pytest
from hypothesis import given, settings
from strategies import logs

from eventgraph.canonical import canonicalize
from eventgraph.errors import DanglingReference, PatchTargetMissing, UnknownObjectType
from eventgraph.graph import Graph, GraphView, PatchOp, apply_event, apply_ops, export_graph, project, query
from eventgraph.log import EventLog, dump_log, parse_log


def make_log():
    log = EventLog("r")
    root = log.append("run.started", {}, "system")
    log.append("object.created", {"id": "c1", "type": "company", "properties": {"name": "Northwind Robotics"}},
               "user", root.id)
    return log



def test_object_created_yields_one_new_object():
    log = make_log()
    g = Graph(object_types={"company"})
    assert apply_event(g, log[0]).objects_created == []
    delta = apply_event(g, log[1])
    assert [o.id for o in delta.objects_created] == ["c1"]
    assert g.objects["c1"].properties["name"] == "Northwind Robotics"


def test_root_provenance_points_at_own_event_and_caused_provenance_at_cause():
    log = EventLog("r")
    goal = log.append("object.created", {"id": "g", "type": "goal", "properties": {}}, "user")
    log.append("object.created", {"id": "c", "type": "company", "properties": {}}, "planner", goal.id)
    g = project(log)
    assert g.objects["g"].provenance.caused_by_event == goal.id
    assert g.objects["c"].provenance.caused_by_event == goal.id
    assert g.objects["c"].provenance.behavior == "planner"


def test_non_graph_event_is_an_empty_delta():
    log = EventLog("r")
    event = log.append("llm.requested", {"prompt_hash": "x"}, "b")
    assert not apply_event(Graph(), event)


def test_dangling_relation_end():
    log = make_log()
    log.append("relation.created", {"id": "r1", "type": "concerns", "from": "c1", "to": "nope"}, "user")
    with pytest.raises(DanglingReference) as err:
        project(log)
    assert err.value.seq == 3


def test_unknown_object_type_and_missing_patch_target():
    log = make_log()
    with pytest.raises(UnknownObjectType):
        project(log, object_types={"claim"})
    log.append("object.patched", {"target": "ghost", "ops": [{"path": ["a"], "op": "set", "value": 1}]}, "user")
    with pytest.raises(PatchTargetMissing):
        project(log)


def test_failed_apply_leaves_graph_untouched():
    log = make_log()
    g = project(log)
    before = export_graph(g)
    bad = log.next_event("relation.created", {"id": "r1", "type": "x", "from": "c1", "to": "ghost"}, "user")
    with pytest.raises(DanglingReference):
        apply_event(g, bad)
    assert export_graph(g) == before


def test_patch_semantics_last_writer_wins_and_remove_absent_is_noop():
    props = apply_ops({"a": 1}, [
        PatchOp(("a",), "set", 2),
        PatchOp(("a",), "set", 3),
        PatchOp(("gone",), "remove"),
        PatchOp(("deep", "x"), "set", True),
        PatchOp(("deep", "y", "z"), "remove"),
    ])
    assert props == {"a": 3, "deep": {"x": True}}


def test_patches_may_create_new_properties():
    log = make_log()
    log.append("object.patched", {"target": "c1", "ops": [{"path": ["sector"], "op": "set", "value": "robots"}]},
               "user")
    assert project(log).objects["c1"].properties == {"name": "Northwind Robotics", "sector": "robots"}


def test_empty_log_projects_to_empty_graph():
    assert project(EventLog("r")) == Graph()


def test_graph_view_is_read_only():
    view = GraphView(project(make_log()))
    assert not hasattr(view, "objects_by_type")
    with pytest.raises(TypeError):
        view.get("c1").properties["name"] = "x"


def test_query_demo_claims_in_creation_order(quickstart):
    g = project(quickstart.log)
    scan = [e.payload["id"] for e in quickstart.log if e.type == "object.created" and e.payload["type"] == "claim"]
    assert [o.id for o in query(g, "claim")] == scan
    assert query(g, "nonexistent") == []


def test_query_supports_into_claim_matches_relation_scan(quickstart):
    g = project(quickstart.log)
    for claim in query(g, "claim"):
        scan = [e.payload["from"] for e in quickstart.log
                if e.type == "relation.created" and e.payload["type"] == "supports" and e.payload["to"] == claim.id]
        found = query(g, relation_type="supports", to_id=claim.id)
        assert [o.id for o in found] == scan
        assert all(o.type == "evidence" for o in found)


def test_projection_of_live_log_matches_live_graph(quickstart):
    assert project(quickstart.log) == quickstart.graph
    assert project(parse_log(dump_log(quickstart.log))) == quickstart.graph


def test_export_is_canonical_and_sorted(quickstart):
    data = export_graph(quickstart.graph)
    assert data == canonicalize(__import__("json").loads(data))


@settings(max_examples=100, deadline=None)
@given(logs())
def test_total_provenance_and_index_consistency(log):
    g = project(log)
    g.check_indexes()
    for item in [*g.objects.values(), *g.relations.values()]:
        assert item.provenance.caused_by_event in log


@settings(max_examples=100, deadline=None)
@given(logs())
def test_prefix_fold_locality(log):
    g = Graph()
    for i, event in enumerate(log):
        apply_event(g, event)
        if i % 7 == 0:
            assert g == project(log[: i + 1])
    assert g == project(log)
