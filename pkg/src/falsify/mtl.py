"""Quantitative monitoring of bounded metric temporal logic over sampled traces.

Formulas are evaluated pointwise at the sample instants of a finite trace;
nothing is interpolated between samples.  ``robustness`` returns the usual
min/max robustness degree: positive means the property holds with margin,
negative measures how badly it fails, and the sign agrees with the boolean
semantics of ``satisfied`` away from the zero boundary.

A temporal window that reaches past the end of the trace contributes the
sentinel magnitude ``EMPTY_WINDOW_BOUND`` (vacuous ``always`` is +B, hopeless
``eventually`` is -B).
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "EMPTY_WINDOW_BOUND",
    "MtlError",
    "SpecSyntaxError",
    "UnknownSignalError",
    "EmptyTraceError",
    "Trace",
    "Const",
    "Signal",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Neg",
    "Abs",
    "Min",
    "Max",
    "Atom",
    "Not",
    "And",
    "Or",
    "Always",
    "Eventually",
    "Until",
    "parse_spec",
    "parse_spec_file",
    "robustness",
    "robustness_series",
    "satisfied",
    "hold_within",
    "reach_and_hold",
]

# Robustness magnitude standing in for an empty temporal window.
EMPTY_WINDOW_BOUND = 1e9


class MtlError(Exception):
    """Base class for monitor errors."""


class SpecSyntaxError(MtlError):
    """Raised when a formula source string does not parse."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at column {position + 1})"
        super().__init__(message)
        self.position = position


class UnknownSignalError(MtlError):
    """A formula refers to a signal the trace does not carry."""


class EmptyTraceError(MtlError):
    """Monitoring needs at least one sample."""


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


class Trace:
    """Immutable time series of named real-valued signals.

    Timestamps must strictly increase and every sample carries the same
    signal set; values must be finite.
    """

    __slots__ = ("times", "_signals")

    def __init__(self, times: Sequence[float], signals: Mapping[str, Sequence[float]]):
        t = np.asarray(times, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise EmptyTraceError("a trace needs at least one sample")
        if not np.all(np.isfinite(t)):
            raise ValueError("timestamps must be finite")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not signals:
            raise ValueError("a trace needs at least one signal")
        sig: dict[str, np.ndarray] = {}
        for name, values in signals.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != t.shape:
                raise ValueError(
                    f"signal {name!r} has {arr.size} samples, expected {t.size}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"signal {name!r} contains non-finite values")
            arr = arr.copy()
            arr.setflags(write=False)
            sig[str(name)] = arr
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "_signals", sig)

    def __setattr__(self, name, value):  # pragma: no cover - defensive
        raise AttributeError("Trace is immutable")

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._signals)

    def signal(self, name: str) -> np.ndarray:
        try:
            return self._signals[name]
        except KeyError:
            raise UnknownSignalError(
                f"trace has no signal {name!r}; it carries {sorted(self._signals)}"
            ) from None

    def sample(self, i: int) -> tuple[float, dict[str, float]]:
        return float(self.times[i]), {k: float(v[i]) for k, v in self._signals.items()}

    def steps(self) -> Iterator[tuple[float, dict[str, float]]]:
        for i in range(len(self)):
            yield self.sample(i)

    def equals(self, other: "Trace") -> bool:
        """Bitwise equality of times and signals."""
        if self.names != other.names:
            return False
        if not np.array_equal(self.times, other.times):
            return False
        return all(
            np.array_equal(self._signals[n], other._signals[n]) for n in self.names
        )

    @classmethod
    def from_steps(cls, steps: Iterable[tuple[float, Mapping[str, float]]]) -> "Trace":
        steps = list(steps)
        if not steps:
            raise EmptyTraceError("a trace needs at least one sample")
        names = list(steps[0][1])
        times = []
        columns: dict[str, list[float]] = {n: [] for n in names}
        for t, values in steps:
            if set(values) != set(names):
                raise ValueError("every sample must carry the same signal set")
            times.append(float(t))
            for n in names:
                columns[n].append(float(values[n]))
        return cls(times, columns)

    # -- persistence --------------------------------------------------------

    def to_csv(self, path: str | Path) -> Path:
        """Write ``t,name1,name2,...`` rows."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", *self.names])
            for i in range(len(self)):
                t, values = self.sample(i)
                writer.writerow([repr(t), *[repr(values[n]) for n in self.names]])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trace":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "t":
                raise ValueError("trace CSV must start with a 't,<signals...>' header")
            names = header[1:]
            times = []
            columns: dict[str, list[float]] = {n: [] for n in names}
            for row in reader:
                if not row:
                    continue
                times.append(float(row[0]))
                for n, cell in zip(names, row[1:]):
                    columns[n].append(float(cell))
        return cls(times, columns)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "Trace":
        """Read the ``step`` records of a JSON-lines protocol transcript."""
        steps = []
        with Path(path).open() as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if record.get("type") == "step":
                    steps.append((record["t"], record["signals"]))
        return cls.from_steps(steps)


# ---------------------------------------------------------------------------
# Margin expressions (the quantitative payload of atoms)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Signal:
    name: str


@dataclass(frozen=True)
class Add:
    left: "MarginExpr"
    right: "MarginExpr"


@dataclass(frozen=True)
class Sub:
    left: "MarginExpr"
    right: "MarginExpr"


@dataclass(frozen=True)
class Mul:
    left: "MarginExpr"
    right: "MarginExpr"


@dataclass(frozen=True)
class Div:
    left: "MarginExpr"
    right: "MarginExpr"


@dataclass(frozen=True)
class Neg:
    operand: "MarginExpr"


@dataclass(frozen=True)
class Abs:
    operand: "MarginExpr"


@dataclass(frozen=True)
class Min:
    operands: tuple["MarginExpr", ...]


@dataclass(frozen=True)
class Max:
    operands: tuple["MarginExpr", ...]


MarginExpr = Union[Const, Signal, Add, Sub, Mul, Div, Neg, Abs, Min, Max]


def _margin_array(expr: MarginExpr, trace: Trace) -> np.ndarray:
    """Evaluate a margin expression over every sample of the trace."""
    if isinstance(expr, Const):
        return np.full(len(trace), expr.value)
    if isinstance(expr, Signal):
        return trace.signal(expr.name)
    if isinstance(expr, Add):
        return _margin_array(expr.left, trace) + _margin_array(expr.right, trace)
    if isinstance(expr, Sub):
        return _margin_array(expr.left, trace) - _margin_array(expr.right, trace)
    if isinstance(expr, Mul):
        return _margin_array(expr.left, trace) * _margin_array(expr.right, trace)
    if isinstance(expr, Div):
        denom = _margin_array(expr.right, trace)
        with np.errstate(divide="raise", invalid="raise"):
            try:
                return _margin_array(expr.left, trace) / denom
            except FloatingPointError:
                raise MtlError("division by zero while evaluating an atom") from None
    if isinstance(expr, Neg):
        return -_margin_array(expr.operand, trace)
    if isinstance(expr, Abs):
        return np.abs(_margin_array(expr.operand, trace))
    if isinstance(expr, Min):
        return np.minimum.reduce([_margin_array(e, trace) for e in expr.operands])
    if isinstance(expr, Max):
        return np.maximum.reduce([_margin_array(e, trace) for e in expr.operands])
    raise TypeError(f"not a margin expression: {expr!r}")


def _margin_at(expr: MarginExpr, trace: Trace, i: int) -> float:
    """Scalar evaluation used by the boolean oracle; kept independent of
    the vectorized path on purpose."""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Signal):
        return float(trace.signal(expr.name)[i])
    if isinstance(expr, Add):
        return _margin_at(expr.left, trace, i) + _margin_at(expr.right, trace, i)
    if isinstance(expr, Sub):
        return _margin_at(expr.left, trace, i) - _margin_at(expr.right, trace, i)
    if isinstance(expr, Mul):
        return _margin_at(expr.left, trace, i) * _margin_at(expr.right, trace, i)
    if isinstance(expr, Div):
        d = _margin_at(expr.right, trace, i)
        if d == 0.0:
            raise MtlError("division by zero while evaluating an atom")
        return _margin_at(expr.left, trace, i) / d
    if isinstance(expr, Neg):
        return -_margin_at(expr.operand, trace, i)
    if isinstance(expr, Abs):
        return abs(_margin_at(expr.operand, trace, i))
    if isinstance(expr, Min):
        return min(_margin_at(e, trace, i) for e in expr.operands)
    if isinstance(expr, Max):
        return max(_margin_at(e, trace, i) for e in expr.operands)
    raise TypeError(f"not a margin expression: {expr!r}")


# ---------------------------------------------------------------------------
# Formula AST
# ---------------------------------------------------------------------------


def _check_interval(lo: float, hi: float | None) -> None:
    if lo < 0:
        raise ValueError("temporal interval bound must be nonnegative")
    if hi is not None and hi < lo:
        raise ValueError("temporal interval must satisfy lo <= hi")


@dataclass(frozen=True)
class Atom:
    """True wherever the margin expression is nonnegative."""

    margin: MarginExpr


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Always:
    operand: "Formula"
    lo: float = 0.0
    hi: float | None = None  # None means unbounded

    def __post_init__(self):
        _check_interval(self.lo, self.hi)


@dataclass(frozen=True)
class Eventually:
    operand: "Formula"
    lo: float = 0.0
    hi: float | None = None

    def __post_init__(self):
        _check_interval(self.lo, self.hi)


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"
    lo: float = 0.0
    hi: float | None = None

    def __post_init__(self):
        _check_interval(self.lo, self.hi)


Formula = Union[Atom, Not, And, Or, Always, Eventually, Until]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|!=|<|>|\(|\)|\[|\]|,|\+|-|\*|/)
    """,
    re.VERBOSE,
)

_KEYWORDS = {"always", "eventually", "until", "and", "or", "not", "abs", "min", "max"}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            kind = m.lastgroup
            value = m.group()
            if kind == "name" and value in _KEYWORDS:
                kind = value
            tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _SpecParser:
    """Recursive-descent parser for the formula grammar.

    Precedence, loosest first: ``or``, ``and``, ``until``, then the unary
    operators (``always``, ``eventually``, ``not``), then atoms.
    """

    def __init__(self, text: str):
        self._text = text
        self._tokens = _tokenize(text)
        self._pos = 0

    def parse(self) -> Formula:
        formula = self._parse_or()
        self._expect("end")
        return formula

    # -- token plumbing ------------------------------------------------------

    def _peek(self) -> tuple[str, str, int]:
        return self._tokens[self._pos]

    def _next(self) -> tuple[str, str, int]:
        token = self._tokens[self._pos]
        self._pos += 1
        return token

    def _accept(self, kind: str) -> bool:
        if self._peek()[0] == kind:
            self._pos += 1
            return True
        return False

    def _expect(self, kind: str, what: str | None = None) -> tuple[str, str, int]:
        token = self._peek()
        if token[0] != kind and not (kind == "op" and token[1] == what):
            label = what or kind
            raise SpecSyntaxError(
                f"expected {label}, found {token[1]!r}" if token[1] else f"expected {label}",
                token[2],
            )
        return self._next()

    def _expect_op(self, symbol: str) -> None:
        token = self._peek()
        if token[0] == "op" and token[1] == symbol:
            self._pos += 1
            return
        raise SpecSyntaxError(f"expected {symbol!r}", token[2])

    def _at_op(self, symbol: str) -> bool:
        token = self._peek()
        return token[0] == "op" and token[1] == symbol

    # -- formula levels ------------------------------------------------------

    def _parse_or(self) -> Formula:
        left = self._parse_and()
        while self._accept("or"):
            left = Or(left, self._parse_and())
        return left

    def _parse_and(self) -> Formula:
        left = self._parse_until()
        while self._accept("and"):
            left = And(left, self._parse_until())
        return left

    def _parse_until(self) -> Formula:
        left = self._parse_unary()
        while self._accept("until"):
            lo, hi = self._parse_interval()
            left = Until(left, self._parse_unary(), lo, hi)
        return left

    def _parse_unary(self) -> Formula:
        token = self._peek()
        if token[0] == "always":
            self._next()
            lo, hi = self._parse_interval()
            return Always(self._parse_unary(), lo, hi)
        if token[0] == "eventually":
            self._next()
            lo, hi = self._parse_interval()
            return Eventually(self._parse_unary(), lo, hi)
        if token[0] == "not":
            self._next()
            return Not(self._parse_unary())
        return self._parse_primary()

    def _parse_interval(self) -> tuple[float, float | None]:
        if not self._at_op("["):
            return 0.0, None
        self._next()
        lo_token = self._expect("number")
        self._expect_op(",")
        hi_token = self._expect("number")
        self._expect_op("]")
        lo, hi = float(lo_token[1]), float(hi_token[1])
        if hi < lo:
            raise SpecSyntaxError("inverted temporal interval", lo_token[2])
        return lo, hi

    def _parse_primary(self) -> Formula:
        if self._at_op("("):
            # Could be a parenthesized formula or a parenthesized arithmetic
            # expression starting an atom; try the formula reading first.
            saved = self._pos
            self._next()
            try:
                inner = self._parse_or()
                self._expect_op(")")
                return inner
            except SpecSyntaxError:
                self._pos = saved
        return self._parse_atom()

    def _parse_atom(self) -> Formula:
        left = self._parse_sum()
        token = self._peek()
        if token[0] != "op" or token[1] not in ("<=", ">=", "<", ">", "==", "!="):
            raise SpecSyntaxError("expected a comparison operator", token[2])
        op = token[1]
        if op in ("==", "!="):
            raise SpecSyntaxError(f"unknown operator {op!r} (use <=, >=, <, >)", token[2])
        self._next()
        right = self._parse_sum()
        # 'x <= c' has margin c - x; 'x >= c' has margin x - c.  Strict
        # comparisons share the non-strict margins (the robustness degree
        # does not distinguish them).
        if op in ("<=", "<"):
            return Atom(Sub(right, left))
        return Atom(Sub(left, right))

    # -- arithmetic ----------------------------------------------------------

    def _parse_sum(self) -> MarginExpr:
        left = self._parse_term()
        while True:
            if self._at_op("+"):
                self._next()
                left = Add(left, self._parse_term())
            elif self._at_op("-"):
                self._next()
                left = Sub(left, self._parse_term())
            else:
                return left

    def _parse_term(self) -> MarginExpr:
        left = self._parse_factor()
        while True:
            if self._at_op("*"):
                self._next()
                left = Mul(left, self._parse_factor())
            elif self._at_op("/"):
                self._next()
                left = Div(left, self._parse_factor())
            else:
                return left

    def _parse_factor(self) -> MarginExpr:
        token = self._peek()
        if self._at_op("-"):
            self._next()
            return Neg(self._parse_factor())
        if token[0] == "number":
            self._next()
            return Const(float(token[1]))
        if token[0] == "abs":
            self._next()
            self._expect_op("(")
            inner = self._parse_sum()
            self._expect_op(")")
            return Abs(inner)
        if token[0] in ("min", "max"):
            self._next()
            self._expect_op("(")
            operands = [self._parse_sum()]
            while self._at_op(","):
                self._next()
                operands.append(self._parse_sum())
            self._expect_op(")")
            node = Min if token[0] == "min" else Max
            return node(tuple(operands))
        if token[0] == "name":
            self._next()
            return Signal(token[1])
        if self._at_op("("):
            self._next()
            inner = self._parse_sum()
            self._expect_op(")")
            return inner
        raise SpecSyntaxError(
            f"expected a signal, number, or expression, found {token[1]!r}"
            if token[1]
            else "unexpected end of formula",
            token[2],
        )


def parse_spec(text: str) -> Formula:
    """Parse a formula string, e.g. ``eventually[0,10] always (abs(cte) <= 1.5)``.

    Atoms are inequalities between affine/abs/min/max expressions over signal
    names and constants; ``x <= c`` becomes an atom with margin ``c - x``.
    """
    text = text.strip()
    if not text:
        raise SpecSyntaxError("empty formula")
    return _SpecParser(text).parse()


def parse_spec_file(path: str | Path) -> Formula:
    """Parse a ``.mtl`` file: ``#`` comments and blank lines are ignored and
    the remaining lines form one formula."""
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return parse_spec(" ".join(lines))


# ---------------------------------------------------------------------------
# Robustness
# ---------------------------------------------------------------------------


def _window(times: np.ndarray, i: int, lo: float, hi: float | None) -> tuple[int, int]:
    start = times[i] + lo
    j_lo = int(np.searchsorted(times, start, side="left"))
    if hi is None:
        j_hi = len(times)
    else:
        j_hi = int(np.searchsorted(times, times[i] + hi, side="right"))
    return j_lo, j_hi


def _rho_series(formula: Formula, trace: Trace) -> np.ndarray:
    times = trace.times
    n = len(trace)
    if isinstance(formula, Atom):
        return np.asarray(_margin_array(formula.margin, trace), dtype=float)
    if isinstance(formula, Not):
        return -_rho_series(formula.operand, trace)
    if isinstance(formula, And):
        return np.minimum(
            _rho_series(formula.left, trace), _rho_series(formula.right, trace)
        )
    if isinstance(formula, Or):
        return np.maximum(
            _rho_series(formula.left, trace), _rho_series(formula.right, trace)
        )
    if isinstance(formula, (Always, Eventually)):
        child = _rho_series(formula.operand, trace)
        empty = EMPTY_WINDOW_BOUND if isinstance(formula, Always) else -EMPTY_WINDOW_BOUND
        out = np.empty(n)
        for i in range(n):
            j_lo, j_hi = _window(times, i, formula.lo, formula.hi)
            if j_lo >= j_hi:
                out[i] = empty
            elif isinstance(formula, Always):
                out[i] = child[j_lo:j_hi].min()
            else:
                out[i] = child[j_lo:j_hi].max()
        return out
    if isinstance(formula, Until):
        left = _rho_series(formula.left, trace)
        right = _rho_series(formula.right, trace)
        out = np.empty(n)
        for i in range(n):
            j_lo, j_hi = _window(times, i, formula.lo, formula.hi)
            best = -EMPTY_WINDOW_BOUND
            prefix = EMPTY_WINDOW_BOUND  # min of left over [i, j), empty at j == i
            for j in range(i, j_hi):
                if j >= j_lo:
                    candidate = min(float(right[j]), prefix)
                    if candidate > best:
                        best = candidate
                prefix = min(prefix, float(left[j]))
            out[i] = best
        return out
    raise TypeError(f"not a formula: {formula!r}")


def robustness_series(formula: Formula, trace: Trace) -> np.ndarray:
    """Robustness of ``formula`` anchored at every sample instant."""
    return _rho_series(formula, trace)


def robustness(formula: Formula, trace: Trace) -> float:
    """Robustness of ``formula`` at the first sample time of ``trace``."""
    return float(_rho_series(formula, trace)[0])


# ---------------------------------------------------------------------------
# Boolean semantics (the oracle for sign-consistency checks)
# ---------------------------------------------------------------------------


def satisfied(formula: Formula, trace: Trace) -> bool:
    """Classical boolean MTL over the same pointwise semantics.

    Implemented as a direct recursive evaluator, deliberately separate from
    the robustness computation, so the two can be checked against each other.
    """
    times = trace.times
    memo: dict[tuple[int, int], bool] = {}

    def sat(f: Formula, i: int) -> bool:
        key = (id(f), i)
        if key in memo:
            return memo[key]
        if isinstance(f, Atom):
            result = _margin_at(f.margin, trace, i) >= 0.0
        elif isinstance(f, Not):
            result = not sat(f.operand, i)
        elif isinstance(f, And):
            result = sat(f.left, i) and sat(f.right, i)
        elif isinstance(f, Or):
            result = sat(f.left, i) or sat(f.right, i)
        elif isinstance(f, Always):
            j_lo, j_hi = _window(times, i, f.lo, f.hi)
            result = all(sat(f.operand, j) for j in range(j_lo, j_hi))
        elif isinstance(f, Eventually):
            j_lo, j_hi = _window(times, i, f.lo, f.hi)
            result = any(sat(f.operand, j) for j in range(j_lo, j_hi))
        elif isinstance(f, Until):
            j_lo, j_hi = _window(times, i, f.lo, f.hi)
            result = False
            for j in range(max(i, j_lo), j_hi):
                if sat(f.right, j) and all(sat(f.left, k) for k in range(i, j)):
                    result = True
                    break
        else:
            raise TypeError(f"not a formula: {f!r}")
        memo[key] = result
        return result

    return sat(formula, 0)


# ---------------------------------------------------------------------------
# Named requirement presets
# ---------------------------------------------------------------------------


def hold_within(limit: float = 1.5, signal: str = "cte") -> Formula:
    """``always (abs(signal) <= limit)``: stay within ``limit`` of center."""
    return Always(Atom(Sub(Const(limit), Abs(Signal(signal)))))


def reach_and_hold(
    deadline: float = 10.0, limit: float = 1.5, signal: str = "cte"
) -> Formula:
    """``eventually[0,deadline] always (abs(signal) <= limit)``: recover to
    within ``limit`` before the deadline and stay there."""
    return Eventually(hold_within(limit, signal), 0.0, deadline)
