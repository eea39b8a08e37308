"""Path-expression subset for navigating resource bundles.

Grammar (also documented in the README):

    expr     = root , { "." , step } ;
    root     = identifier ;                      (* a resource type *)
    step     = filter | first | identifier ;
    filter   = "where" , "(" , identifier , "=" , literal , ")" ;
    first    = "first" , "(" , ")" ;
    literal  = "'" , { character - "'" } , "'" | number ;

Evaluation returns every match in bundle order; ``first()`` truncates to at
most one; filters compare a field against a literal (coded fields by their
code, quantities by their numeric value). Parsed trees print back to a
canonical source form, which is also the normalization used when comparing
expressions across stations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

from .cdf import IsoDate
from .profiles import Coded, Quantity, ResourceBundle

KNOWN_ROOTS = ("Patient", "Observation", "Condition")


class PathSyntaxError(Exception):
    """Unparseable expression text; carries the column offset."""

    def __init__(self, message: str, column: int):
        super().__init__(f"column {column}: {message}")
        self.column = column


class PathSemanticError(Exception):
    """Parseable but meaningless, e.g. an unknown root resource type."""


@dataclass(frozen=True)
class FieldStep:
    name: str


@dataclass(frozen=True)
class WhereStep:
    field: str
    literal: Union[str, int, float]


@dataclass(frozen=True)
class FirstStep:
    pass


@dataclass(frozen=True)
class PathExpr:
    """Parsed expression: resource-type root plus navigation steps."""

    root: str
    steps: Tuple[object, ...]

    def __str__(self) -> str:
        return print_path(self)


_TOKEN_RE = re.compile(
    r"""
    (?P<ident>[A-Za-z_][A-Za-z0-9_-]*)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<string>'[^']*')
  | (?P<punct>[().=])
  | (?P<ws>\s+)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> List[Tuple[str, str, int]]:
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind == "ws":
            continue
        if kind == "bad":
            raise PathSyntaxError(f"unexpected character {m.group()!r}", m.start())
        tokens.append((kind, m.group(), m.start()))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, "", len(self.text))

    def take(self, kind=None, value=None):
        tok_kind, tok_value, col = self.peek()
        if tok_kind is None:
            raise PathSyntaxError("unexpected end of expression", col)
        if kind is not None and tok_kind != kind:
            raise PathSyntaxError(f"expected {kind}, got {tok_value!r}", col)
        if value is not None and tok_value != value:
            raise PathSyntaxError(f"expected {value!r}, got {tok_value!r}", col)
        self.pos += 1
        return tok_value, col

    def parse(self) -> PathExpr:
        root, col = self.take("ident")
        if root not in KNOWN_ROOTS:
            raise PathSemanticError(f"unknown root resource type {root!r}")
        steps = []
        while self.peek()[0] is not None:
            self.take("punct", ".")
            steps.append(self._step())
        return PathExpr(root=root, steps=tuple(steps))

    def _step(self):
        kind, value, col = self.peek()
        if kind != "ident":
            raise PathSyntaxError("expected a step name", col)
        self.take("ident")
        if self.peek()[0] == "punct" and self.peek()[1] == "(":
            if value == "where":
                self.take("punct", "(")
                field, _ = self.take("ident")
                self.take("punct", "=")
                literal = self._literal()
                self.take("punct", ")")
                return WhereStep(field=field, literal=literal)
            if value == "first":
                self.take("punct", "(")
                self.take("punct", ")")
                return FirstStep()
            raise PathSyntaxError(f"unknown function {value!r}", col)
        return FieldStep(name=value)

    def _literal(self):
        kind, value, col = self.peek()
        if kind == "string":
            self.take("string")
            return value[1:-1]
        if kind == "number":
            self.take("number")
            return float(value) if "." in value else int(value)
        raise PathSyntaxError("expected a quoted string or number literal", col)


def parse_path(text: str) -> PathExpr:
    """Parse expression text; syntax errors carry a column offset."""
    return _Parser(text).parse()


def _print_literal(lit) -> str:
    if isinstance(lit, str):
        return f"'{lit}'"
    return repr(lit)


def print_path(expr: PathExpr) -> str:
    """Canonical source form; ``parse_path(print_path(e)) == e``."""
    parts = [expr.root]
    for step in expr.steps:
        if isinstance(step, FieldStep):
            parts.append(step.name)
        elif isinstance(step, WhereStep):
            parts.append(f"where({step.field} = {_print_literal(step.literal)})")
        elif isinstance(step, FirstStep):
            parts.append("first()")
    return ".".join(parts)


def normalize_path(text: str) -> str:
    """Whitespace-insensitive canonical text, for allow-list comparison."""
    return print_path(parse_path(text))


# -- evaluation -----------------------------------------------------------------


def _field_value_for_compare(node):
    if isinstance(node, Coded):
        return node.code
    if isinstance(node, Quantity):
        return node.value
    if isinstance(node, IsoDate):
        return str(node)
    return node


def _matches(node, step: WhereStep) -> bool:
    if not isinstance(node, dict):
        return False
    present = node.get(step.field)
    if present is None:
        return False
    value = _field_value_for_compare(present)
    if isinstance(value, (int, float)) and isinstance(step.literal, (int, float)):
        return float(value) == float(step.literal)
    return value == step.literal


def _navigate(node, name: str):
    if isinstance(node, dict):
        v = node.get(name)
        return [] if v is None else [v]
    if isinstance(node, Quantity):
        if name == "value":
            return [node.value]
        if name == "unit":
            return [node.unit]
        return []
    if isinstance(node, Coded):
        if name == "code":
            return [node.code]
        if name == "system":
            return [node.system]
        return []
    return []


def _unwrap(node):
    if isinstance(node, Quantity):
        return node.value
    if isinstance(node, Coded):
        return node.code
    return node


def eval_path(expr: PathExpr, bundle: ResourceBundle) -> list:
    """All matches of the expression in bundle order; empty when nothing matches.

    Terminal quantity and coded nodes unwrap to their numeric value / code
    string, so results are always plain scalar values.
    """
    nodes = [r.body for r in bundle.resources if r.resource_type == expr.root]
    for step in expr.steps:
        if isinstance(step, FieldStep):
            next_nodes = []
            for node in nodes:
                for v in _navigate(node, step.name):
                    if isinstance(v, list):
                        next_nodes.extend(v)
                    else:
                        next_nodes.append(v)
            nodes = next_nodes
        elif isinstance(step, WhereStep):
            nodes = [n for n in nodes if _matches(n, step)]
        elif isinstance(step, FirstStep):
            nodes = nodes[:1]
    return [_unwrap(n) for n in nodes]


def eval_path_first(expr: PathExpr, bundle: ResourceBundle):
    out = eval_path(expr, bundle)
    return out[0] if out else None
