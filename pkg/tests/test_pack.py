import json
import shutil
from collections import Counter

import pytest

from eventgraph.canonical import canonicalize
from eventgraph.errors import PackError
from eventgraph.graph import export_graph
from eventgraph.log import dump_log
from eventgraph.pack import PACK_PATH_ENV, Pack, find_pack, run_quickstart, split_overrides

# frozen from the first complete run of the bundled fixtures
GOLDEN_SUMMARY = {"events": 343, "objects": 53, "relations": 65, "model_calls": 27, "tool_calls": 27}
GOLDEN_BY_TYPE = {"claim": 12, "company": 3, "contradiction": 1, "document": 9, "evidence": 12, "goal": 1,
                  "memo": 3, "question": 9, "risk": 3}


def pack_without(base: Pack, tmp_path, behavior: str) -> Pack:
    root = tmp_path / base.name
    shutil.copytree(base.root, root)
    manifest = json.loads((root / "manifest.json").read_text("utf-8"))
    manifest["behaviors"] = [b for b in manifest["behaviors"] if b["name"] != behavior]
    (root / "manifest.json").write_bytes(canonicalize(manifest))
    return Pack(root)


def test_manifest_is_canonical_and_declares_the_vocabulary(pack):
    raw = (pack.root / "manifest.json").read_bytes()
    assert raw.rstrip(b"\n") == canonicalize(json.loads(raw))
    assert set(pack.object_types) >= {"company", "question", "document", "claim", "evidence", "contradiction",
                                      "risk", "memo"}
    assert set(pack.relation_types) == {"addresses", "derived_from", "supports", "contradicts", "concerns",
                                        "summarizes"}
    assert set(pack.manifest["tools"]) == {"document_store.search", "document_store.fetch"}
    assert pack.behavior_names()[0] == "planner"


def test_fixture_files_are_canonical(pack):
    files = sorted(pack.fixtures_dir().glob("*.json"))
    assert files
    for file in files:
        raw = file.read_bytes()
        assert raw.rstrip(b"\n") == canonicalize(json.loads(raw)), file.name


def test_golden_summary(quickstart):
    summary = quickstart.summary()
    assert {k: summary[k] for k in GOLDEN_SUMMARY} == GOLDEN_SUMMARY
    assert dict(summary["objects_by_type"]) == GOLDEN_BY_TYPE


def test_demo_structure(quickstart):
    graph = quickstart.graph
    by_type = Counter(o.type for o in graph.objects.values())
    assert by_type["company"] == 3 and by_type["contradiction"] == 1
    companies = [o.id for o in graph.objects.values() if o.type == "company"]
    per_company = Counter(r.to_id for r in graph.relations.values() if r.type == "concerns"
                          and graph.objects[r.from_id].type == "question")
    assert len({per_company[c] for c in companies}) == 1
    supported = {r.to_id for r in graph.relations.values() if r.type == "supports"}
    assert all(o.id in supported for o in graph.objects.values() if o.type == "claim")
    memo_targets = Counter(r.to_id for r in graph.relations.values() if r.type == "concerns"
                           and graph.objects[r.from_id].type == "memo")
    assert sorted(memo_targets[c] for c in companies) == [1, 1, 1]


def test_the_contradiction_is_northwind_revenue(quickstart):
    graph = quickstart.graph
    (contradiction,) = [o for o in graph.objects.values() if o.type == "contradiction"]
    claims = [graph.objects[r.to_id] for r in graph.relations.values()
              if r.type == "contradicts" and r.from_id == contradiction.id]
    assert sorted(c.properties["value"] for c in claims) == ["$40M", "$42M"]
    assert all(c.properties["contested"] is True for c in claims)


def test_demo_needs_no_live_model(quickstart):
    assert quickstart.stats.fixture_misses == 0
    assert not [e for e in quickstart.log if e.type in ("behavior.failed", "llm.failed", "tool.failed")]


def test_reruns_are_byte_identical(quickstart):
    again, _ = run_quickstart()
    assert dump_log(again.log) == dump_log(quickstart.log)


def test_model_call_cap_halts_at_the_same_seq(pack):
    first = pack.run_demo("capped", budget={"max_model_calls": 1})
    second = pack.run_demo("capped", budget={"max_model_calls": 1})
    assert first.halted is not None
    assert first.halted.payload["dimension"] == "model_calls"
    assert first.halted.seq == second.halted.seq
    assert first.halted.seq < 343


@pytest.mark.parametrize("behavior", find_pack("diligence").behavior_names())
def test_removing_any_behavior_still_completes(behavior, pack, tmp_path, quickstart):
    ablated = pack_without(pack, tmp_path, behavior).run_demo()
    assert ablated.halted is None
    assert ablated.pending() == 0
    assert not [e for e in ablated.log if e.type == "behavior.failed"]
    assert len(ablated.graph.objects) <= len(quickstart.graph.objects)
    assert all(e.actor != behavior for e in ablated.log)


def test_search_finds_the_revenue_passage(pack):
    tools = pack.module("tools")
    hits = tools.search({"query": "Northwind revenue"})
    ids = [h["doc_id"] for h in hits]
    assert "nw-q3-report" in ids
    assert "28% YoY to $42M" in tools.fetch({"doc_id": "nw-q3-report"})["text"]
    assert tools.search({"query": "Northwind revenue"}) == hits


def test_search_is_scoped_to_a_company(pack):
    tools = pack.module("tools")
    hits = tools.search({"query": "revenue customers", "company": "Stellar Logistics"})
    assert hits and all(h["doc_id"].startswith("sl-") for h in hits)


def test_fetch_unknown_document(pack):
    tools = pack.module("tools")
    with pytest.raises(tools.UnknownDocument):
        tools.fetch({"doc_id": "nope"})


def test_corpus_has_three_documents_per_company(pack):
    docs = pack.module("tools").DOCUMENTS
    assert len(docs) == 9
    assert sorted(Counter(d["company"] for d in docs.values()).values()) == [3, 3, 3]


def test_split_overrides():
    config, budget, fixtures = split_overrides({
        "memo_synthesizer.prompt": "p", "budget.max_events": 5, "fixtures.document_researcher.3": {"claims": []},
    })
    assert config == {"memo_synthesizer": {"prompt": "p"}}
    assert budget == {"max_events": 5}
    assert fixtures == {("document_researcher", 3): {"claims": []}}
    for bad in ("nodots", "fixtures.x", "fixtures.x.y"):
        with pytest.raises(PackError):
            split_overrides({bad: 1})


def test_config_override_changes_only_that_behavior(pack):
    rt = pack.run_demo("ov", budget={"max_events": 30})
    before = {b.name: b.config for b in rt.behaviors}
    pack.apply_overrides(rt, {"risk_identifier.min_questions": 5})
    after = {b.name: b.config for b in rt.behaviors}
    assert after["risk_identifier"]["min_questions"] == 5
    assert {k: v for k, v in after.items() if k != "risk_identifier"} == {
        k: v for k, v in before.items() if k != "risk_identifier"}
    with pytest.raises(PackError):
        pack.apply_overrides(rt, {"ghost.key": 1})


def test_fixture_override_replaces_a_scripted_answer(pack):
    provider = pack.provider({"fixtures.question_generator.0": {"questions": []}})
    rt = pack.run_demo("noq", provider=provider)
    assert not [o for o in rt.graph.objects.values() if o.type == "question"]


def test_pack_search_path(monkeypatch, tmp_path, pack):
    copy = tmp_path / "mirror"
    shutil.copytree(pack.root, copy)
    manifest = json.loads((copy / "manifest.json").read_text("utf-8"))
    manifest["name"] = "mirror"
    (copy / "manifest.json").write_bytes(canonicalize(manifest))
    with pytest.raises(PackError):
        find_pack("mirror")
    monkeypatch.setenv(PACK_PATH_ENV, str(tmp_path))
    found = find_pack("mirror")
    assert found.root == copy
    assert find_pack(str(copy)).name == "mirror"


def test_mirror_pack_builds_the_same_graph(tmp_path, pack, quickstart):
    copy = tmp_path / "diligence"
    shutil.copytree(pack.root, copy)
    rt = Pack(copy).run_demo()
    assert export_graph(rt.graph) == export_graph(quickstart.graph)


def test_pattern_naming_undeclared_type_is_rejected(pack, tmp_path):
    root = tmp_path / "broken"
    shutil.copytree(pack.root, root)
    manifest = json.loads((root / "manifest.json").read_text("utf-8"))
    manifest["object_types"] = [t for t in manifest["object_types"] if t != "question"]
    (root / "manifest.json").write_bytes(canonicalize(manifest))
    with pytest.raises(PackError, match="undeclared"):
        Pack(root)


def test_missing_manifest(tmp_path):
    with pytest.raises(PackError):
        Pack(tmp_path)
    with pytest.raises(PackError):
        find_pack("no-such-pack")
