"""Regenerate the diligence pack's fixture files.

Runs the demo against a scripted analyst that answers from the corpus's
annotated facts, records each response under (behavior, call index), and
writes one fixture file per call. Rerun after editing prompts or the corpus.

    python scripts/author_fixtures.py
"""

import re
import shutil
import sys
from pathlib import Path

from eventgraph.effects import ProviderResponse, write_fixture
from eventgraph.pack import find_pack

TOPICS = {
    "revenue": "What revenue did {c} report for the latest period?",
    "customers": "How many enterprise customers does {c} serve and how concentrated are they?",
    "regulatory": "Does {c} face open regulatory actions or safety issues?",
}


def field(prompt, name):
    match = re.search(rf"^{name}: (.*)$", prompt, re.M)
    return match.group(1) if match else None


def claims_block(prompt):
    block = prompt.split("Claims:\n", 1)[1].split("\n\n", 1)[0]
    return [line[2:] for line in block.splitlines() if line.startswith("- ") and line != "- none"]


def analyst(tools, behavior, prompt):
    company = field(prompt, "Company")
    if behavior == "question_generator":
        return {"questions": [{"topic": t, "text": text.format(c=company)} for t, text in TOPICS.items()]}
    if behavior == "document_researcher":
        doc = tools.DOCUMENTS[field(prompt, "Document")]
        topic = field(prompt, "Topic")
        return {"claims": [
            {"text": f["text"], "metric": f["metric"], "value": f["value"], "quote": f["text"]}
            for f in doc["facts"] if f["topic"] == topic
        ]}
    claims = claims_block(prompt)
    contested = [c for c in claims if c.endswith("(contested)")]
    if behavior == "risk_identifier":
        if contested:
            metric = contested[0].split(":")[0]
            return {"risk": {"title": f"Sources disagree on {metric}", "severity": "high",
                             "rationale": f"{len(contested)} claims on {metric} conflict across documents."}}
        return {"risk": {"title": f"Limited evidence base for {company}", "severity": "medium",
                         "rationale": f"{len(claims)} claims, each from a single company-supplied document."}}
    if behavior == "memo_synthesizer":
        risk = field(prompt, "Risk")
        return {"title": f"Diligence memo: {company}",
                "summary": f"{len(claims)} claims reviewed; {len(contested)} contested. Key risk: {risk}."}
    raise ValueError(f"no script for behavior {behavior!r}")


class Recorder:
    def __init__(self, tools):
        self.tools = tools
        self.recorded = []

    def call(self, request, *, behavior, index):
        response = analyst(self.tools, behavior, request.messages[0]["content"])
        self.recorded.append((behavior, index, response))
        return ProviderResponse(response, 0)


def main():
    pack = find_pack("diligence")
    out = pack.fixtures_dir()
    recorder = Recorder(pack.module("tools"))
    rt = pack.run_demo(provider=recorder)
    if rt.halted is not None or any(e.type == "behavior.failed" for e in rt.log):
        sys.exit("demo run did not complete cleanly; fixtures not written")
    shutil.rmtree(out, ignore_errors=True)
    Path(out).mkdir()
    for behavior, index, response in recorder.recorded:
        write_fixture(out, f"{behavior}-{index:03d}", {"behavior": behavior, "index": index}, response)
    print(f"wrote {len(recorder.recorded)} fixtures to {out}")
    print(rt.summary())


if __name__ == "__main__":
    main()
