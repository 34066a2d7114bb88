"""Diligence behaviors. None of them knows about the others; each reacts to graph shape."""

from eventgraph.runtime import ConfiguredBehavior, Form, behavior, relation_behavior


def _next_company(graph, goal):
    seen = {c.properties["name"] for c in graph.objects("company")}
    for name in goal.properties.get("companies", ()):
        if name not in seen:
            return name
    return None


@behavior("planner", "object.created", predicate="type = 'goal'")
def planner(event, graph, ctx):
    goal = graph.get(event.payload["id"])
    name = _next_company(graph, goal)
    if name is not None:
        ctx.create_object("company", {"name": name})


@behavior("next_company", "object.created", predicate="type = 'memo'")
def next_company(event, graph, ctx):
    # companies are researched one after another, each opened by the previous memo
    for goal in graph.objects("goal"):
        name = _next_company(graph, goal)
        if name is not None:
            ctx.create_object("company", {"name": name})
            return


@behavior("question_generator", "object.created", predicate="type = 'company'", form=Form.LLM_BACKED)
def question_generator(event, graph, ctx):
    company = graph.get(event.payload["id"])
    answer = ctx.ask(company=company.properties["name"])
    for q in answer["questions"]:
        qid = ctx.create_object("question", {"text": q["text"], "topic": q["topic"], "status": "open"},
                                model_request=ctx.last_model_request)
        ctx.create_relation("concerns", qid, company.id)


@behavior(
    "document_researcher",
    "object.created",
    pattern="MATCH (q:question)-[:concerns]->(c:company) ANCHOR q",
    form=Form.LLM_BACKED,
)
def document_researcher(event, graph, ctx):
    binding = ctx.bindings[0]
    question, company = graph.get(binding["q"]), graph.get(binding["c"])
    hits = ctx.call_tool("document_store.search",
                         {"query": question.properties["text"], "company": company.properties["name"]})
    for hit in hits:
        doc = ctx.call_tool("document_store.fetch", {"doc_id": hit["doc_id"]})
        existing = [d for d in graph.objects("document") if d.properties["doc_id"] == doc["id"]]
        doc_oid = existing[0].id if existing else ctx.create_object(
            "document", {"doc_id": doc["id"], "title": doc["title"], "company": doc["company"]})
        answer = ctx.ask(question=question.properties["text"], topic=question.properties["topic"],
                         doc_id=doc["id"], title=doc["title"], text=doc["text"])
        request = ctx.last_model_request
        for claim in answer["claims"]:
            cid = ctx.create_object(
                "claim",
                {"text": claim["text"], "metric": claim["metric"], "value": claim["value"],
                 "topic": question.properties["topic"], "doc_id": doc["id"]},
                model_request=request,
            )
            eid = ctx.create_object("evidence", {"quote": claim["quote"], "doc_id": doc["id"]},
                                    model_request=request)
            ctx.create_relation("derived_from", cid, doc_oid)
            ctx.create_relation("supports", eid, cid)
            ctx.create_relation("addresses", cid, question.id)
    ctx.patch_object(question.id, {"status": "researched"})


@behavior(
    "contradiction_detector",
    "relation.created",
    predicate="type = 'addresses'",
    pattern="MATCH (c1:claim)-[:addresses]->(q:question), (c2:claim)-[:addresses]->(q) ANCHOR c1",
)
def contradiction_detector(event, graph, ctx):
    for binding in ctx.bindings:
        a, b = graph.get(binding["c1"]), graph.get(binding["c2"])
        if a.properties["metric"] != b.properties["metric"] or a.properties["value"] == b.properties["value"]:
            continue
        pair = {a.id, b.id}
        known = any(
            {r.to_id for r in graph.relations("contradicts", from_id=x.id)} == pair
            for x in graph.objects("contradiction")
        )
        if known:
            continue
        first, second = sorted((a, b), key=lambda o: o.created_by_event.seq)
        xid = ctx.create_object("contradiction", {
            "metric": a.properties["metric"],
            "values": [first.properties["value"], second.properties["value"]],
        })
        for claim in (first, second):
            ctx.create_relation("contradicts", xid, claim.id)
            ctx.patch_object(claim.id, {"contested": True})


def _tally(event, graph, ctx):
    claim = event.payload["to"]
    ctx.patch_object(claim, {"support_count": len(graph.relations("supports", to_id=claim))})


support_tally = relation_behavior("support_tally", "supports", _tally)


def _company_claims(graph, company_id):
    claims = []
    for q in graph.query("question", "concerns", to_id=company_id):
        claims.extend(graph.query("claim", "addresses", to_id=q.id))
    return sorted(claims, key=lambda c: c.created_by_event.seq)


def _claim_lines(claims):
    lines = []
    for c in claims:
        flag = " (contested)" if c.properties.get("contested") else ""
        lines.append(f"- {c.properties['metric']}: {c.properties['value']}{flag}")
    return "\n".join(lines) or "- none"


class RiskIdentifier(ConfiguredBehavior):
    """Raises one risk per company once every question about it is researched."""

    event_type = "object.patched"
    pattern = "MATCH (q:question)-[:concerns]->(c:company) WHERE q.status = 'researched' ANCHOR q"
    defaults = {"min_questions": 1}

    def run(self, event, graph, ctx):
        company = graph.get(ctx.bindings[0]["c"])
        questions = graph.query("question", "concerns", to_id=company.id)
        if len(questions) < self.config["min_questions"]:
            return
        if any(q.properties.get("status") != "researched" for q in questions):
            return
        if graph.query("risk", "concerns", to_id=company.id):
            return
        claims = _company_claims(graph, company.id)
        answer = ctx.ask(company=company.properties["name"], claims=_claim_lines(claims))
        risk = answer["risk"]
        rid = ctx.create_object("risk", {"title": risk["title"], "severity": risk["severity"],
                                         "rationale": risk["rationale"]}, model_request=ctx.last_model_request)
        ctx.create_relation("concerns", rid, company.id)


@behavior(
    "memo_synthesizer",
    "object.created",
    predicate="type = 'risk'",
    pattern="MATCH (r:risk)-[:concerns]->(c:company) ANCHOR r",
    form=Form.LLM_BACKED,
)
def memo_synthesizer(event, graph, ctx):
    risk, company = graph.get(ctx.bindings[0]["r"]), graph.get(ctx.bindings[0]["c"])
    claims = _company_claims(graph, company.id)
    answer = ctx.ask(company=company.properties["name"], risk=risk.properties["title"],
                     claims=_claim_lines(claims))
    mid = ctx.create_object("memo", {"title": answer["title"], "summary": answer["summary"],
                                     "company": company.properties["name"]},
                            model_request=ctx.last_model_request)
    ctx.create_relation("concerns", mid, company.id)
    for claim in claims:
        ctx.create_relation("summarizes", mid, claim.id)
