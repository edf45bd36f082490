"""Probabilistic scenario programs: the semantic parameter space as text.

A scenario program is a short line-oriented script declaring named
parameters with distributions, derived parameters computed from earlier
names, hard ``require`` constraints enforced by rejection sampling, and
free-form ``meta`` entries.  Parameters marked ``External`` are not drawn
here at all: their values come from an outside search algorithm (see the
samplers module), which is how falsification search plugs into an otherwise
self-contained distribution over environments.

Example::

    # where the taxi run begins
    start_s    = Uniform(0, 2000)
    raining    = Options({0: 2, 1: 1})
    clouds     = Options({clear: 3, cirrus: 1, overcast: 1})
    rain_level = Uniform(0.25, 1.0)
    rain       = rain_level if raining == 1 else 0.0
    require start_s < 2500
    meta duration = 30.0

Sampling is deterministic given the program, the external values and the
random generator.  When constraints fail, internal draws are retried with
the SAME external values; if no attempt passes, the distinguished
``REJECTED`` value is returned so active samplers can see the rejection.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence, Union

import numpy as np

from .rejection import REJECTED, Rejected

__all__ = [
    "ScenarioError",
    "ScenarioSyntaxError",
    "EvalError",
    "ExternalDomainViolation",
    "ContinuousDomain",
    "FiniteDomain",
    "Uniform",
    "Options",
    "Constant",
    "External",
    "ScenarioProgram",
    "Provenance",
    "FeatureVector",
    "parse_scenario",
    "parse_scenario_file",
    "sample",
]

Value = Union[float, str]


class ScenarioError(ValueError):
    """Base class for scenario parsing and evaluation failures."""


class ScenarioSyntaxError(ScenarioError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class EvalError(ScenarioError):
    """Raised when a derived expression cannot be evaluated (bad types, division by zero)."""


class ExternalDomainViolation(ScenarioError):
    """Raised when an external sampler supplies a value outside its declared domain."""


# ---------------------------------------------------------------------------
# Domains and distributions


@dataclass(frozen=True)
class ContinuousDomain:
    lo: float
    hi: float

    def contains(self, value: object) -> bool:
        try:
            v = float(value)  # type: ignore[arg-type]
        except (TypeError, ValueError):
            return False
        return math.isfinite(v) and self.lo <= v <= self.hi


@dataclass(frozen=True)
class FiniteDomain:
    values: tuple[Value, ...]

    def contains(self, value: object) -> bool:
        return value in self.values


Domain = Union[ContinuousDomain, FiniteDomain]


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float


@dataclass(frozen=True)
class Options:
    """Weighted choice; an entry value may be a scalar or an (a, b) range
    that is drawn from uniformly once the entry is picked."""

    entries: tuple[tuple[Union[Value, tuple[float, float]], float], ...]

    def total_weight(self) -> float:
        return sum(w for _, w in self.entries)


@dataclass(frozen=True)
class Constant:
    value: Value


@dataclass(frozen=True)
class External:
    """Placeholder filled by an external sampler; carries the declared domain."""

    param_id: str
    domain: Domain


Distribution = Union[Uniform, Options, Constant, External]


def _draw(dist: Distribution, rng: np.random.Generator) -> Value:
    if isinstance(dist, Constant):
        return dist.value
    if isinstance(dist, Uniform):
        return dist.lo + (dist.hi - dist.lo) * rng.random()
    if isinstance(dist, Options):
        r = rng.random() * dist.total_weight()
        acc = 0.0
        chosen = dist.entries[-1][0]
        for value, weight in dist.entries:
            acc += weight
            if r < acc:
                chosen = value
                break
        if isinstance(chosen, tuple):
            a, b = chosen
            return a + (b - a) * rng.random()
        return chosen
    raise AssertionError(f"externals are not drawn internally: {dist!r}")


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Arith:
    op: str  # + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Negate:
    operand: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str  # < <= > >= == !=
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class BoolOp:
    op: str  # and | or
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class NotOp:
    operand: "Expr"


@dataclass(frozen=True)
class IfExpr:
    then: "Expr"
    cond: "Expr"
    other: "Expr"


Expr = Union[Num, Str, Ref, Arith, Negate, Compare, BoolOp, NotOp, IfExpr]

_NUMERIC_CMP = {"<", "<=", ">", ">="}


def _as_number(v: Value, what: str) -> float:
    if isinstance(v, str):
        raise EvalError(f"{what} needs a number, got tag {v!r}")
    return v


def _eval(expr: Expr, env: Mapping[str, Value]) -> Value:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Str):
        return expr.value
    if isinstance(expr, Ref):
        return env[expr.name]
    if isinstance(expr, Negate):
        return -_as_number(_eval(expr.operand, env), "unary minus")
    if isinstance(expr, Arith):
        left = _as_number(_eval(expr.left, env), f"operator {expr.op!r}")
        right = _as_number(_eval(expr.right, env), f"operator {expr.op!r}")
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if right == 0.0:
            raise EvalError("division by zero in derived expression")
        return left / right
    if isinstance(expr, Compare):
        left = _eval(expr.left, env)
        right = _eval(expr.right, env)
        if expr.op in _NUMERIC_CMP:
            lnum = _as_number(left, f"comparison {expr.op!r}")
            rnum = _as_number(right, f"comparison {expr.op!r}")
            return {"<": lnum < rnum, "<=": lnum <= rnum, ">": lnum > rnum, ">=": lnum >= rnum}[expr.op]
        return (left == right) if expr.op == "==" else (left != right)
    if isinstance(expr, BoolOp):
        left = _eval(expr.left, env)
        if expr.op == "and":
            return _eval(expr.right, env) if left else left
        return left if left else _eval(expr.right, env)
    if isinstance(expr, NotOp):
        return not _eval(expr.operand, env)
    if isinstance(expr, IfExpr):
        return _eval(expr.then, env) if _eval(expr.cond, env) else _eval(expr.other, env)
    raise AssertionError(f"unhandled expression node {expr!r}")


def _references(expr: Expr) -> Iterator[str]:
    if isinstance(expr, Ref):
        yield expr.name
    elif isinstance(expr, (Negate, NotOp)):
        yield from _references(expr.operand)
    elif isinstance(expr, (Arith, Compare, BoolOp)):
        yield from _references(expr.left)
        yield from _references(expr.right)
    elif isinstance(expr, IfExpr):
        yield from _references(expr.then)
        yield from _references(expr.cond)
        yield from _references(expr.other)


# ---------------------------------------------------------------------------
# Program


@dataclass(frozen=True)
class Provenance:
    sampler: str
    index: int
    seed: object = None


@dataclass(frozen=True)
class FeatureVector:
    """One concrete assignment of every parameter and derived name.

    Behaves as a read-only ordered mapping; provenance records which sampler
    produced the external point, at what sequence index, under what seed.
    """

    values: Mapping[str, Value]
    provenance: Union[Provenance, None] = None

    def __getitem__(self, name: str) -> Value:
        return self.values[name]

    def __contains__(self, name: object) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def get(self, name: str, default=None):
        return self.values.get(name, default)

    def keys(self):
        return self.values.keys()

    def items(self):
        return self.values.items()


@dataclass(frozen=True)
class ScenarioProgram:
    params: tuple[tuple[str, Distribution], ...]
    derived: tuple[tuple[str, Expr], ...] = ()
    requires: tuple[Expr, ...] = ()
    metadata: Mapping[str, Value] = field(default_factory=dict)

    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.params) + tuple(n for n, _ in self.derived)

    def externals(self) -> tuple[tuple[str, Domain], ...]:
        """External parameter ids with their declared domains, in declaration order."""
        return tuple((d.param_id, d.domain) for _, d in self.params if isinstance(d, External))


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>[ \t]+)
    | (?P<comment>\#[^\n]*)
    | (?P<newline>\n)
    | (?P<number>\d+\.\d*|\.\d+|\d+)
    | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
    | (?P<string>"[^"\n]*")
    | (?P<op><=|>=|==|!=|[=(){},:+\-*/<>])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"require", "meta", "if", "else", "and", "or", "not"}
_DIST_NAMES = {"Uniform", "Options", "Constant", "External"}


@dataclass(frozen=True)
class _Token:
    kind: str  # number | name | string | op | newline | end
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    pos = 0
    depth = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ScenarioSyntaxError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "newline":
            # Newlines inside brackets are just whitespace, so a long
            # Options table can span several lines.
            if depth == 0:
                tokens.append(_Token("newline", "\n", line, col))
            line += 1
            col = 1
            pos = m.end()
            continue
        if kind not in ("ws", "comment"):
            if text in "({":
                depth += 1
            elif text in ")}":
                depth = max(0, depth - 1)
            tokens.append(_Token(kind, text, line, col))
        col += m.end() - pos
        pos = m.end()
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0
        self.declared: set[str] = set()

    # -- token plumbing ---------------------------------------------------

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "end":
            self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise ScenarioSyntaxError(f"expected {text!r}, got {tok.text or 'end of input'!r}", tok.line, tok.col)
        return tok

    def fail(self, message: str) -> ScenarioSyntaxError:
        tok = self.peek()
        return ScenarioSyntaxError(message, tok.line, tok.col)

    def skip_newlines(self) -> None:
        while self.peek().kind == "newline":
            self.next()

    def end_of_statement(self) -> None:
        tok = self.next()
        if tok.kind not in ("newline", "end"):
            raise ScenarioSyntaxError(f"unexpected {tok.text!r} after statement", tok.line, tok.col)

    # -- grammar ----------------------------------------------------------

    def program(self) -> ScenarioProgram:
        params: list[tuple[str, Distribution]] = []
        derived: list[tuple[str, Expr]] = []
        requires: list[Expr] = []
        metadata: dict[str, Value] = {}
        self.skip_newlines()
        while self.peek().kind != "end":
            tok = self.peek()
            if tok.text == "require":
                self.next()
                expr = self.expression()
                self.check_references(expr, tok)
                requires.append(expr)
            elif tok.text == "meta":
                self.next()
                key = self.next()
                if key.kind != "name":
                    raise ScenarioSyntaxError("meta needs a name", key.line, key.col)
                self.expect("=")
                metadata[key.text] = self.literal_value()
            elif tok.kind == "name":
                name = self.next().text
                if name in _KEYWORDS:
                    raise ScenarioSyntaxError(f"{name!r} cannot start a declaration", tok.line, tok.col)
                if name in self.declared:
                    raise ScenarioSyntaxError(f"duplicate name {name!r}", tok.line, tok.col)
                self.expect("=")
                if self.peek().text in _DIST_NAMES:
                    params.append((name, self.distribution(name)))
                else:
                    expr = self.expression()
                    self.check_references(expr, tok)
                    derived.append((name, expr))
                self.declared.add(name)
            else:
                raise self.fail(f"unexpected {tok.text!r}")
            self.end_of_statement()
            self.skip_newlines()
        return ScenarioProgram(
            params=tuple(params), derived=tuple(derived), requires=tuple(requires), metadata=metadata
        )

    def check_references(self, expr: Expr, at: _Token) -> None:
        for name in _references(expr):
            if name not in self.declared:
                raise ScenarioSyntaxError(f"reference to undeclared name {name!r}", at.line, at.col)

    def literal_value(self) -> Value:
        tok = self.next()
        if tok.kind == "number":
            return float(tok.text)
        if tok.text == "-" and self.peek().kind == "number":
            return -float(self.next().text)
        if tok.kind == "string":
            return tok.text[1:-1]
        if tok.kind == "name" and tok.text not in _KEYWORDS:
            return tok.text
        raise ScenarioSyntaxError(f"expected a literal value, got {tok.text!r}", tok.line, tok.col)

    def number(self) -> float:
        tok = self.next()
        if tok.text == "-":
            return -self.number()
        if tok.kind != "number":
            raise ScenarioSyntaxError(f"expected a number, got {tok.text!r}", tok.line, tok.col)
        return float(tok.text)

    # Distributions -------------------------------------------------------

    def distribution(self, name: str) -> Distribution:
        head = self.next()
        self.expect("(")
        if head.text == "Uniform":
            lo = self.number()
            self.expect(",")
            hi = self.number()
            if lo > hi:
                raise ScenarioSyntaxError(f"Uniform bounds inverted: ({lo}, {hi})", head.line, head.col)
            dist: Distribution = Uniform(lo, hi)
        elif head.text == "Constant":
            dist = Constant(self.literal_value())
        elif head.text == "Options":
            dist = Options(self.options_entries(head))
        else:
            dist = External(name, self.external_domain(head))
        self.expect(")")
        return dist

    def options_entries(self, head: _Token) -> tuple:
        self.expect("{")
        entries = []
        while True:
            value = self.option_key()
            self.expect(":")
            weight = self.number()
            if weight < 0:
                raise ScenarioSyntaxError(f"negative weight {weight}", head.line, head.col)
            entries.append((value, weight))
            if self.peek().text == ",":
                self.next()
                continue
            break
        self.expect("}")
        if not entries:
            raise ScenarioSyntaxError("Options needs at least one entry", head.line, head.col)
        if sum(w for _, w in entries) <= 0:
            raise ScenarioSyntaxError("Options total weight must be positive", head.line, head.col)
        return tuple(entries)

    def option_key(self) -> Union[Value, tuple[float, float]]:
        if self.peek().text == "(":
            opener = self.next()
            a = self.number()
            self.expect(",")
            b = self.number()
            self.expect(")")
            if a > b:
                raise ScenarioSyntaxError(f"range bounds inverted: ({a}, {b})", opener.line, opener.col)
            return (a, b)
        return self.literal_value()

    def external_domain(self, head: _Token) -> Domain:
        if self.peek().text == "{":
            self.next()
            values = [self.literal_value()]
            while self.peek().text == ",":
                self.next()
                values.append(self.literal_value())
            self.expect("}")
            return FiniteDomain(tuple(values))
        lo = self.number()
        self.expect(",")
        hi = self.number()
        if lo >= hi:
            raise ScenarioSyntaxError(f"External interval must have lo < hi, got ({lo}, {hi})", head.line, head.col)
        return ContinuousDomain(lo, hi)

    # Expressions ---------------------------------------------------------
    #
    # expression := or_expr ["if" or_expr "else" expression]
    # or_expr    := and_expr ("or" and_expr)*
    # and_expr   := not_expr ("and" not_expr)*
    # not_expr   := "not" not_expr | comparison
    # comparison := arith [(< | <= | > | >= | == | !=) arith]
    # arith      := term (("+" | "-") term)*
    # term       := unary (("*" | "/") unary)*
    # unary      := "-" unary | atom
    # atom       := NUMBER | STRING | NAME | "(" expression ")"

    def expression(self) -> Expr:
        value = self.or_expr()
        if self.peek().text == "if":
            self.next()
            cond = self.or_expr()
            self.expect("else")
            other = self.expression()
            return IfExpr(then=value, cond=cond, other=other)
        return value

    def or_expr(self) -> Expr:
        left = self.and_expr()
        while self.peek().text == "or":
            self.next()
            left = BoolOp("or", left, self.and_expr())
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self.peek().text == "and":
            self.next()
            left = BoolOp("and", left, self.not_expr())
        return left

    def not_expr(self) -> Expr:
        if self.peek().text == "not":
            self.next()
            return NotOp(self.not_expr())
        return self.comparison()

    def comparison(self) -> Expr:
        left = self.arith()
        if self.peek().text in ("<", "<=", ">", ">=", "==", "!="):
            op = self.next().text
            return Compare(op, left, self.arith())
        return left

    def arith(self) -> Expr:
        left = self.term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            left = Arith(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            left = Arith(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.peek().text == "-":
            self.next()
            return Negate(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.next()
        if tok.kind == "number":
            return Num(float(tok.text))
        if tok.kind == "string":
            return Str(tok.text[1:-1])
        if tok.kind == "name" and tok.text not in _KEYWORDS:
            return Ref(tok.text)
        if tok.text == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        raise ScenarioSyntaxError(f"unexpected {tok.text or 'end of input'!r} in expression", tok.line, tok.col)


def parse_scenario(source: str) -> ScenarioProgram:
    return _Parser(_tokenize(source)).program()


def parse_scenario_file(path: Union[str, Path]) -> ScenarioProgram:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Sampling


def _coerce(value: object) -> Value:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool):
        return float(value)
    raise ExternalDomainViolation(f"external value {value!r} is neither a number nor a tag")


def sample(
    program: ScenarioProgram,
    external: Union[Mapping[str, object], Callable[[tuple[str, ...]], Mapping[str, object]], None] = None,
    rng: Union[np.random.Generator, None] = None,
    max_rejects: int = 1000,
    provenance: Union[Provenance, None] = None,
) -> Union[FeatureVector, Rejected]:
    """Draw one FeatureVector, or ``REJECTED`` if the constraints never pass.

    External parameters are resolved first, from a mapping of values or a
    callable queried once with the external ids; those values are held fixed
    while internal draws are retried up to ``max_rejects`` times against the
    ``require`` constraints.
    """
    if max_rejects < 1:
        raise ValueError("max_rejects must be at least 1")
    if rng is None:
        rng = np.random.default_rng()

    ids = tuple(name for name, _ in program.externals())
    if callable(external):
        supplied = external(ids)
    else:
        supplied = external or {}
    fixed: dict[str, Value] = {}
    for name, domain in program.externals():
        if name not in supplied:
            raise ExternalDomainViolation(f"no external value supplied for {name!r}")
        value = _coerce(supplied[name])
        if not domain.contains(value):
            raise ExternalDomainViolation(f"external value {value!r} for {name!r} is outside its domain")
        fixed[name] = value

    for _ in range(max_rejects):
        env: dict[str, Value] = {}
        for name, dist in program.params:
            env[name] = fixed[name] if isinstance(dist, External) else _draw(dist, rng)
        for name, expr in program.derived:
            env[name] = _eval(expr, env)
        if all(_eval(req, env) for req in program.requires):
            return FeatureVector(values=env, provenance=provenance)
    return REJECTED
