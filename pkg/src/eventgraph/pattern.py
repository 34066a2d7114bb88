"""Graph-shape subscription patterns: a small Cypher-like subset.

Grammar::

    pattern   := MATCH path ("," path)* [WHERE cond (AND cond)*] [ANCHOR var]
    path      := node ("-[:" RelType "]->" node)*
    node      := "(" var [":" Type] ")"
    cond      := var "." key ("." key)* ("=" | "!=") literal
               | ("exists" | "missing") "(" var "." key ("." key)* ")"
    literal   := 'single quoted' | number | true | false

Keywords are case-insensitive. ``''`` inside a string literal is a quote.
Distinct pattern variables bind distinct objects. A comparison against a
missing property is false for both ``=`` and ``!=``; use ``missing(...)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any

from .errors import ParseError
from .graph import Graph, get_path, has_path

KEYWORDS = {"match", "where", "and", "anchor", "true", "false", "exists", "missing"}


@dataclass(frozen=True)
class NodePattern:
    var: str
    type: str | None = None


@dataclass(frozen=True)
class EdgePattern:
    from_var: str
    rel_type: str
    to_var: str


@dataclass(frozen=True)
class Predicate:
    var: str | None
    path: tuple[str, ...]
    comparator: str  # "=", "!=", "exists", "missing"
    literal: Any = None


@dataclass(frozen=True)
class Pattern:
    nodes: tuple[NodePattern, ...]
    edges: tuple[EdgePattern, ...]
    predicates: tuple[Predicate, ...]
    anchor: str

    @property
    def vars(self) -> tuple[str, ...]:
        return tuple(n.var for n in self.nodes)

    def node(self, var: str) -> NodePattern:
        for n in self.nodes:
            if n.var == var:
                return n
        raise KeyError(var)

    def __str__(self) -> str:
        return format_pattern(self)


# -- lexer ---------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>!=|->|[()\[\]:,.=-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # ident, keyword, string, number, op, eof
    value: Any
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos] == "'":
                raise ParseError(pos, "closing quote", text)
            raise ParseError(pos, "a token", text)
        kind = m.lastgroup
        raw = m.group()
        if kind == "ident" and raw.lower() in KEYWORDS:
            tokens.append(_Token("keyword", raw.lower(), pos))
        elif kind == "string":
            tokens.append(_Token("string", raw[1:-1].replace("''", "'"), pos))
        elif kind == "number":
            tokens.append(_Token("number", float(raw) if "." in raw else int(raw), pos))
        elif kind != "ws":
            tokens.append(_Token(kind, raw, pos))
        pos = m.end()
    tokens.append(_Token("eof", None, len(text)))
    return tokens


# -- parser --------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def fail(self, expected: str):
        raise ParseError(self.tok.offset, expected, self.text)

    def accept(self, kind: str, value=None) -> _Token | None:
        tok = self.tok
        if tok.kind == kind and (value is None or tok.value == value):
            self.i += 1
            return tok
        return None

    def expect(self, kind: str, value=None, what: str | None = None) -> _Token:
        tok = self.accept(kind, value)
        if tok is None:
            self.fail(what or repr(value) if value is not None else what or kind)
        return tok

    def ident(self, what: str) -> str:
        return self.expect("ident", what=what).value

    # pattern

    def pattern(self) -> Pattern:
        self.expect("keyword", "match", "MATCH")
        self.nodes: dict[str, NodePattern] = {}
        self.edges: list[EdgePattern] = []
        self.path()
        while self.accept("op", ","):
            self.path()
        preds: list[Predicate] = []
        if self.accept("keyword", "where"):
            preds.append(self.condition(with_var=True))
            while self.accept("keyword", "and"):
                preds.append(self.condition(with_var=True))
        anchor = next(iter(self.nodes))
        if self.accept("keyword", "anchor"):
            offset = self.tok.offset
            anchor = self.ident("anchor variable")
            if anchor not in self.nodes:
                raise ParseError(offset, "a declared variable", self.text)
        self.expect("eof", what="end of pattern")
        return Pattern(tuple(self.nodes.values()), tuple(self.edges), tuple(preds), anchor)

    def path(self) -> None:
        left = self.node()
        while self.accept("op", "-"):
            self.expect("op", "[", "'['")
            self.expect("op", ":", "':'")
            rel = self.ident("relation type")
            self.expect("op", "]", "']'")
            self.expect("op", "->", "'->'")
            right = self.node()
            self.edges.append(EdgePattern(left, rel, right))
            left = right

    def node(self) -> str:
        self.expect("op", "(", "'('")
        offset = self.tok.offset
        var = self.ident("node variable")
        otype = None
        if self.accept("op", ":"):
            otype = self.ident("object type")
        self.expect("op", ")", "')'")
        prior = self.nodes.get(var)
        if prior is None:
            self.nodes[var] = NodePattern(var, otype)
        elif otype is not None:
            if prior.type is not None and prior.type != otype:
                raise ParseError(offset, f"type {prior.type!r} for {var}", self.text)
            self.nodes[var] = NodePattern(var, otype)
        return var

    # conditions

    def condition(self, with_var: bool) -> Predicate:
        fn = None
        if self.tok.kind == "keyword" and self.tok.value in ("exists", "missing"):
            fn = self.tok.value
            self.i += 1
            self.expect("op", "(", "'('")
        var, path = self.path_ref(with_var)
        if fn:
            self.expect("op", ")", "')'")
            return Predicate(var, path, fn)
        op = self.accept("op", "=") or self.accept("op", "!=")
        if op is None:
            self.fail("'=' or '!='")
        return Predicate(var, path, op.value, self.literal())

    def path_ref(self, with_var: bool) -> tuple[str | None, tuple[str, ...]]:
        offset = self.tok.offset
        var = None
        if with_var:
            var = self.ident("variable")
            if var not in self.nodes:
                raise ParseError(offset, "a declared variable", self.text)
            self.expect("op", ".", "'.'")
        keys = [self.ident("property key")]
        while self.accept("op", "."):
            keys.append(self.ident("property key"))
        return var, tuple(keys)

    def literal(self) -> Any:
        tok = self.tok
        if tok.kind == "string" or tok.kind == "number":
            self.i += 1
            return tok.value
        if tok.kind == "keyword" and tok.value in ("true", "false"):
            self.i += 1
            return tok.value == "true"
        if tok.kind == "op" and tok.value == "-":
            self.i += 1
            num = self.expect("number", what="number")
            return -num.value
        self.fail("literal")


def parse_pattern(text: str) -> Pattern:
    return _Parser(text).pattern()


def parse_predicate(text: str) -> tuple[Predicate, ...]:
    """Parse a var-less condition list (``type = 'goal' AND exists(x.y)``)."""
    p = _Parser(text)
    p.nodes = {}
    preds = [p.condition(with_var=False)]
    while p.accept("keyword", "and"):
        preds.append(p.condition(with_var=False))
    p.expect("eof", what="end of predicate")
    return tuple(preds)


# -- printer -------------------------------------------------------------------


def _format_literal(value: Any) -> str:
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    return repr(value)


def format_predicate(pred: Predicate) -> str:
    ref = ".".join(((pred.var,) if pred.var else ()) + pred.path)
    if pred.comparator in ("exists", "missing"):
        return f"{pred.comparator}({ref})"
    return f"{ref} {pred.comparator} {_format_literal(pred.literal)}"


def format_pattern(pattern: Pattern) -> str:
    atoms = [f"({n.var}:{n.type})" if n.type else f"({n.var})" for n in pattern.nodes]
    atoms += [f"({e.from_var})-[:{e.rel_type}]->({e.to_var})" for e in pattern.edges]
    text = "MATCH " + ", ".join(atoms)
    if pattern.predicates:
        text += " WHERE " + " AND ".join(format_predicate(p) for p in pattern.predicates)
    return text + f" ANCHOR {pattern.anchor}"


# -- evaluation ----------------------------------------------------------------


def values_equal(a: Any, b: Any) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    num = (int, float)
    if isinstance(a, num) and isinstance(b, num):
        return a == b
    if isinstance(a, num) or isinstance(b, num):
        return False
    return a == b


def predicate_holds(pred: Predicate, properties: Any) -> bool:
    if pred.comparator == "exists":
        return has_path(properties, pred.path)
    if pred.comparator == "missing":
        return not has_path(properties, pred.path)
    if not has_path(properties, pred.path):
        return False
    equal = values_equal(get_path(properties, pred.path), pred.literal)
    return equal if pred.comparator == "=" else not equal


def evaluate_predicate(preds, value: Any) -> bool:
    return all(predicate_holds(p, value) for p in preds)


# -- matching ------------------------------------------------------------------


def _search_order(pattern: Pattern) -> list[str]:
    order = [pattern.anchor]
    remaining = [v for v in pattern.vars if v != pattern.anchor]
    while remaining:
        for var in remaining:
            if any(
                (e.from_var == var and e.to_var in order) or (e.to_var == var and e.from_var in order)
                for e in pattern.edges
            ):
                break
        else:
            var = remaining[0]
        order.append(var)
        remaining.remove(var)
    return order


def _edge_exists(graph: Graph, src: str, rel_type: str, dst: str) -> bool:
    for rid in graph.outgoing.get(src, ()):
        rel = graph.relations[rid]
        if rel.type == rel_type and rel.to_id == dst:
            return True
    return False


def match_pattern(graph: Graph, pattern: Pattern, anchor_object: str) -> list[dict[str, str]]:
    """All bindings with the anchor variable bound to ``anchor_object``.

    Ordered lexicographically by the bound ids taken in pattern variable order.
    """
    if isinstance(pattern, str):
        pattern = parse_pattern(pattern)
    if anchor_object not in graph.objects:
        return []
    order = _search_order(pattern)
    types = {n.var: n.type for n in pattern.nodes}
    preds: dict[str, list[Predicate]] = {}
    for p in pattern.predicates:
        preds.setdefault(p.var, []).append(p)

    def node_ok(var: str, oid: str) -> bool:
        obj = graph.objects[oid]
        if types[var] is not None and obj.type != types[var]:
            return False
        return all(predicate_holds(p, obj.properties) for p in preds.get(var, ()))

    def candidates(var: str, binding: dict[str, str]) -> list[str]:
        if var == pattern.anchor:
            return [anchor_object]
        found: set[str] | None = None
        for e in pattern.edges:
            if e.to_var == var and e.from_var in binding:
                ends = {graph.relations[r].to_id for r in graph.outgoing.get(binding[e.from_var], ())
                        if graph.relations[r].type == e.rel_type}
            elif e.from_var == var and e.to_var in binding:
                ends = {graph.relations[r].from_id for r in graph.incoming.get(binding[e.to_var], ())
                        if graph.relations[r].type == e.rel_type}
            else:
                continue
            found = ends if found is None else found & ends
        if found is not None:
            return sorted(found)
        if types[var] is not None:
            return sorted(graph.objects_by_type.get(types[var], ()))
        return sorted(graph.objects)

    results: list[dict[str, str]] = []

    def extend(i: int, binding: dict[str, str]) -> None:
        if i == len(order):
            results.append(dict(binding))
            return
        var = order[i]
        used = set(binding.values())
        for oid in candidates(var, binding):
            if oid in used or not node_ok(var, oid):
                continue
            binding[var] = oid
            if all(
                _edge_exists(graph, binding[e.from_var], e.rel_type, binding[e.to_var])
                for e in pattern.edges
                if var in (e.from_var, e.to_var) and e.from_var in binding and e.to_var in binding
            ):
                extend(i + 1, binding)
            del binding[var]

    extend(0, {})
    results.sort(key=lambda b: tuple(b[v] for v in pattern.vars))
    return results
