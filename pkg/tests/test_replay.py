import json
import random
from dataclasses import replace

import pytest
from oracles import MISSING, brute_force_diff
from toypack import ToyPack, grade_fixtures, random_scenario, stamper

from eventgraph.canonical import canonicalize, freeze
from eventgraph.errors import CutoffOutOfRange, DivergenceError, MissingBehavior, UnknownTarget, UnrelatedRuns
from eventgraph.graph import export_graph, project
from eventgraph.log import EventId, dump_log, parse_log
from eventgraph.replay import (
    ABSENT,
    ForkSpec,
    compare_events,
    fork,
    lineage,
    replay,
    shared_prefix,
    structural_diff,
)


def reloaded(log):
    return parse_log(dump_log(log))


def tampered(log, seq, mutate):
    """A copy of ``log`` with event ``seq``'s payload rewritten by ``mutate``."""
    lines = dump_log(log).split(b"\n")
    rec = json.loads(lines[seq])
    mutate(rec["payload"])
    lines[seq] = canonicalize(rec)
    return parse_log(b"\n".join(lines))


def diff_ids(d):
    return (
        {o.id for o in d.objects_only_in_a},
        {o.id for o in d.objects_only_in_b},
        {r.id for r in d.relations_only_in_a},
        {r.id for r in d.relations_only_in_b},
        {c.id: {p.path: (p.a, p.b) for p in c.diffs} for c in d.changed_objects},
    )


def oracle(a, b):
    oa, ob, ra, rb, changed = brute_force_diff(project(a), project(b))
    normalized = {oid: {path: tuple(ABSENT if v is MISSING else v for v in pair) for path, pair in diffs.items()}
                  for oid, diffs in changed.items()}
    return oa, ob, ra, rb, normalized


def same_as_oracle(a, b) -> bool:
    mine = diff_ids(structural_diff(a, b))
    theirs = oracle(a, b)
    if mine[:4] != theirs[:4] or set(mine[4]) != set(theirs[4]):
        return False
    return all(set(mine[4][oid]) == set(theirs[4][oid]) for oid in mine[4])


def toy(seeds=1, count=2):
    pack = ToyPack(fixtures=grade_fixtures("ABCDABCD"), config={"spawn": {"count": count}})
    return pack, pack.run("p", seeds=seeds).log


# -- strict replay ---------------------------------------------------------------


def test_strict_replay_of_quickstart_makes_no_calls(quickstart, pack):
    log = reloaded(quickstart.log)
    result = replay(log, "strict", pack)
    assert result.runtime.stats.provider_calls == 0
    assert result.runtime.stats.tool_executions == 0
    assert dump_log(result.runtime.log) == dump_log(log)
    assert export_graph(result.graph) == export_graph(project(log))


def test_strict_replay_pins_a_tampered_claim(quickstart, pack):
    claim = next(e for e in quickstart.log if e.type == "object.created" and e.payload["type"] == "claim")

    def edit(payload):
        payload["properties"]["text"] = "edited"

    bad = tampered(quickstart.log, claim.seq, edit)
    with pytest.raises(DivergenceError) as info:
        replay(bad, "strict", pack)
    assert info.value.seq == claim.seq
    assert [name for name, _, _ in info.value.field_diffs] == ["payload"]


def test_strict_replay_of_a_budget_halted_run_reproduces_the_halt(pack):
    rt = pack.run_demo("capped", budget={"max_events": 40})
    assert rt.halted is not None and rt.halted.seq == 40
    result = replay(reloaded(rt.log), "strict", pack)
    assert result.runtime.halted.seq == 40
    assert dump_log(result.runtime.log) == dump_log(rt.log)


def test_clock_reading_behavior_fails_strict_but_not_permissive():
    pack = ToyPack(behaviors=(stamper,))
    log = pack.run("clocky").log
    first_stamp = next(e for e in log if "stamped_at" in e.payload.get("properties", {})).seq
    with pytest.raises(DivergenceError) as info:
        replay(log, "strict", pack)
    assert info.value.seq == first_stamp

    result = replay(log, "permissive", pack)
    assert result.new_run and result.divergence_seq == first_stamp
    assert result.log.run != log.run
    # the prefix before the divergence is the original's
    assert result.log.events[: first_stamp - 1] == log.events[: first_stamp - 1]


def test_missing_behavior_is_reported_before_anything_runs(quickstart, pack):
    partial = ToyPack(behaviors=())
    partial.name = "diligence"
    with pytest.raises(MissingBehavior, match="planner"):
        replay(quickstart.log, "strict", partial)
    with pytest.raises(MissingBehavior):
        fork(quickstart.log, 10, partial)


def test_replay_without_a_pack_is_a_fold(quickstart):
    result = replay(quickstart.log)
    assert export_graph(result.graph) == export_graph(quickstart.graph)


def test_unknown_mode_rejected(quickstart, pack):
    with pytest.raises(ValueError):
        replay(quickstart.log, "lenient", pack)


def test_compare_events_ignores_timestamps(quickstart):
    event = quickstart.log[5]
    assert compare_events(event, replace(event, timestamp="2030-01-01T00:00:00.000000Z")) == []
    assert [d[0] for d in compare_events(event, replace(event, actor="someone"))] == ["actor"]


# -- permissive replay -----------------------------------------------------------


def test_permissive_replay_of_an_unedited_run_is_a_no_op():
    pack, log = toy()
    result = replay(log, "permissive", pack)
    assert not result.new_run
    assert result.fresh_events == 0
    assert result.provider_calls == 0
    assert result.log is log


def test_permissive_replay_with_an_edited_prompt_only_calls_for_the_edit():
    pack, log = toy(count=2)
    result = replay(log, "permissive", pack, overrides={"grade.prompt": "Rate item {n} ({label})."})
    assert result.new_run
    assert result.log.run.startswith("p-replay-")
    calls = sum(e.type == "llm.requested" for e in log)
    assert result.provider_calls == calls
    first_request = next(e.seq for e in log if e.type == "llm.requested")
    assert result.divergence_seq == first_request
    assert result.log.events[: first_request - 1] == log.events[: first_request - 1]
    # the original run is untouched and the new run strict-replays
    assert log.run == "p"
    replay(reloaded(result.log), "strict", pack)


def test_permissive_replay_with_a_label_change_serves_nothing_stale():
    pack, log = toy(count=1)
    result = replay(log, "permissive", pack, overrides={"spawn.label": "changed"})
    items = [o for o in result.graph.objects.values() if o.type == "item"]
    assert [o.properties["label"] for o in items] == ["changed"]


# -- fork --------------------------------------------------------------------------


def test_fork_at_full_length_has_an_empty_diff(quickstart, pack):
    result = fork(quickstart.log, len(quickstart.log), pack)
    assert result.prefix_provider_calls == 0
    assert result.live_provider_calls == 0
    d = structural_diff(quickstart.log, result.log)
    assert d.is_empty
    assert "no differences" in d.render()


def test_fork_prefix_is_the_parents_bytes(quickstart, pack):
    k = len(quickstart.log) // 2
    result = fork(quickstart.log, k, pack)
    parent_lines = dump_log(quickstart.log).split(b"\n")
    fork_lines = dump_log(result.log).split(b"\n")
    assert fork_lines[1 : k + 1] == parent_lines[1 : k + 1]
    assert result.log.parent == (quickstart.log.run, k)
    assert all(e.id.run == result.log.run for e in result.log.events[k:])


def test_fork_without_overrides_goes_live_for_nothing(quickstart, pack):
    k = int(len(quickstart.log) * 0.75)
    result = fork(quickstart.log, k, pack)
    assert result.prefix_provider_calls == 0 and result.prefix_tool_executions == 0
    assert result.live_provider_calls == 0


def test_fork_with_edited_prompt_only_reissues_affected_calls(quickstart, pack):
    k = int(len(quickstart.log) * 0.75)
    post = [e for e in quickstart.log.events[k:] if e.type == "llm.requested"]
    new_prompt = "Company: {company}\nWrite a short memo.\nClaims:\n{claims}\n\nRisk: {risk}\n"
    result = fork(quickstart.log, ForkSpec(quickstart.log.run, k, {"memo_synthesizer.prompt": new_prompt}), pack,
                  provider=pack.provider())
    memos_after = sum(e.payload["behavior"] == "memo_synthesizer" for e in post)
    assert result.prefix_provider_calls == 0
    assert result.live_provider_calls == memos_after
    assert result.live_provider_calls <= len(post)


def test_fork_at_one_shares_exactly_one_event():
    pack, parent = toy()
    result = fork(parent, ForkSpec("p", 1, {"spawn.count": 1}), pack)
    assert shared_prefix(parent, result.log) == 1
    items = [o for o in result.graph.objects.values() if o.type == "item"]
    assert len(items) == 1


def test_fork_logs_strict_replay_including_fork_of_fork(quickstart, pack):
    first = fork(quickstart.log, 200, pack)
    replay(reloaded(first.log), "strict", pack)
    second = fork(reloaded(first.log), 280, pack)
    assert [f.parent for f in second.log.forks] == [quickstart.log.run, first.log.run]
    replay(reloaded(second.log), "strict", pack)


def test_fork_overrides_survive_strict_replay():
    pack, parent = toy(count=2)
    result = fork(parent, ForkSpec("p", 3, {"spawn.count": 3, "fixtures.grade.2": {"grade": "F"}}), pack)
    grades = sorted(o.properties["grade"] for o in result.graph.objects.values() if o.type == "item")
    assert grades == ["A", "B", "F"]
    again = replay(reloaded(result.log), "strict", pack)
    assert export_graph(again.graph) == export_graph(result.graph)


@pytest.mark.parametrize("k", [0, -1, 10_000])
def test_cutoff_out_of_range(k, quickstart, pack):
    with pytest.raises(CutoffOutOfRange):
        fork(quickstart.log, k, pack)


def test_fork_run_ids_are_deterministic():
    pack, parent = toy()
    a = fork(parent, ForkSpec("p", 5, {"spawn.label": "y"}), pack)
    b = fork(parent, ForkSpec("p", 5, {"spawn.label": "y"}), pack)
    assert a.log.run == b.log.run
    assert dump_log(a.log) == dump_log(b.log)


# -- structural diff ---------------------------------------------------------------


def test_diff_of_a_run_with_itself_is_empty(quickstart):
    assert structural_diff(quickstart.log, quickstart.log).is_empty


def test_diff_of_unrelated_runs_raises():
    pack, a = toy()
    b = pack.run("q").log
    with pytest.raises(UnrelatedRuns):
        structural_diff(a, b)


def test_fixture_swap_removes_the_contradiction(quickstart, pack):
    requests = [e for e in quickstart.log if e.type == "llm.requested"
                and e.payload["behavior"] == "document_researcher"]
    k = requests[1].seq - 1
    spec = ForkSpec(quickstart.log.run, k, {"fixtures.document_researcher.1": {"claims": [
        {"metric": "q3_revenue", "value": "$42M", "text": "Northwind Q3 revenue was $42M per the investor update",
         "quote": "Northwind Q3 revenue was $42M per the investor update"}]}})
    result = fork(quickstart.log, spec, pack)
    d = structural_diff(quickstart.log, result.log)

    types_a = {o.type for o in d.objects_only_in_a}
    types_b = {o.type for o in d.objects_only_in_b}
    assert "contradiction" in types_a and "contradiction" not in types_b
    first_claim = next(o for o in quickstart.graph.objects.values()
                       if o.type == "claim" and o.properties["value"] == "$42M"
                       and o.properties["doc_id"] == "nw-q3-report")
    assert [c.id for c in d.changed_objects] == [first_claim.id]
    (change,) = d.changed_objects
    assert [(p.path, p.a, p.b) for p in change.diffs] == [(("contested",), True, ABSENT)]
    assert same_as_oracle(quickstart.log, result.log)


def test_diff_report_is_canonical_json(quickstart, pack):
    result = fork(quickstart.log, ForkSpec(quickstart.log.run, 150, {"risk_identifier.min_questions": 99}), pack)
    report = structural_diff(quickstart.log, result.log).to_report()
    assert canonicalize(report)
    assert report["shared_prefix"] == 150
    assert not any(o["type"] == "risk" for o in report["objects_only_in_b"])


@pytest.mark.parametrize("seed", range(12))
def test_random_forks_match_the_oracle(seed):
    pack, parent, k, overrides = random_scenario(random.Random(seed))
    result = fork(parent, ForkSpec(parent.run, k, overrides), pack)
    assert same_as_oracle(parent, result.log)
    assert same_as_oracle(result.log, parent)


# -- lineage -----------------------------------------------------------------------


def test_claim_lineage_reaches_the_goal_through_a_model_request(quickstart):
    claim = next(o for o in quickstart.graph.objects.values() if o.type == "claim")
    chain = lineage(quickstart.log, claim.id)
    assert chain.root.type == "object.created"
    goal_event = quickstart.log.by_seq(chain.root.event_id.seq)
    assert goal_event.payload["type"] == "goal"
    assert "llm.requested" in chain.event_types()
    seqs = [s.event_id.seq for s in chain.steps]
    assert seqs == sorted(seqs, reverse=True)
    assert chain.render().splitlines()[1].strip().startswith(f"#{chain.root.event_id.seq}")


def test_lineage_of_the_first_event_is_itself(quickstart):
    chain = lineage(quickstart.log, 1)
    assert [s.type for s in chain.steps] == ["run.started"]
    assert chain.model_request is None


def test_lineage_by_event_id(quickstart):
    event = quickstart.log[30]
    assert lineage(quickstart.log, event.id).steps[0].event_id == event.id
    assert lineage(quickstart.log, EventId(event.id.run, event.seq)).steps[0].type == event.type


@pytest.mark.parametrize("target", ["no-such-object", 0, 10_000, EventId("elsewhere", 3)])
def test_lineage_unknown_target(quickstart, target):
    with pytest.raises(UnknownTarget):
        lineage(quickstart.log, target)


def test_reissued_inputs_land_after_the_cutoff():
    pack = ToyPack(fixtures=grade_fixtures("ABCDABCD"), config={"spawn": {"count": 1}})
    parent = pack.run("p", seeds=2).log
    second_seed = [e for e in parent if e.type == "object.created" and e.payload["type"] == "seed"][1]
    result = fork(parent, second_seed.seq - 1, pack)
    assert result.reissued_inputs == 1
    seeds = [o for o in result.graph.objects.values() if o.type == "seed"]
    assert len(seeds) == 2
    assert freeze(sorted(o.properties["i"] for o in seeds)) == freeze([0, 1])
    alone = fork(parent, ForkSpec("p", second_seed.seq - 1), pack, replay_inputs=False)
    assert len([o for o in alone.graph.objects.values() if o.type == "seed"]) == 1
