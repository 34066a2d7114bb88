"""Static document store over the bundled corpus."""

import json
import re
from pathlib import Path

from eventgraph.errors import UnknownDocument

CORPUS = Path(__file__).parent / "corpus"
STOPWORDS = frozenset(
    "a an and are as at by did do does for from has how in is its of on or the to was what which who".split()
)


def _load():
    docs = {}
    for file in sorted(CORPUS.glob("*.json")):
        doc = json.loads(file.read_text("utf-8"))
        docs[doc["id"]] = doc
    return docs


DOCUMENTS = _load()


def tokens(text):
    return {t for t in re.findall(r"[a-z0-9]+", text.lower()) if t not in STOPWORDS}


def search(args):
    """Top two documents of ``company`` by query-token overlap; ties break on id."""
    query = tokens(args["query"])
    scored = []
    for doc_id, doc in DOCUMENTS.items():
        if args.get("company") and doc["company"] != args["company"]:
            continue
        score = len(query & tokens(doc["title"] + " " + doc["text"]))
        scored.append((-score, doc_id))
    return [{"doc_id": doc_id, "score": -neg} for neg, doc_id in sorted(scored)[:2]]


def fetch(args):
    doc = DOCUMENTS.get(args["doc_id"])
    if doc is None:
        raise UnknownDocument(f"no document {args['doc_id']!r}")
    return {key: doc[key] for key in ("id", "company", "title", "text")}
