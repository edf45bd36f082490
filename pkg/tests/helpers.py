"""Shared generators for randomized monitor checks.

The formula generator covers every AST node; the trace generator produces
short traces with irregular (but strictly increasing) timestamps so window
edge cases get exercised.
"""

from __future__ import annotations

import numpy as np

from falsify import mtl


def random_margin(rng: np.random.Generator, names: list[str], depth: int) -> mtl.MarginExpr:
    if depth <= 0:
        if rng.random() < 0.5:
            return mtl.Signal(str(rng.choice(names)))
        return mtl.Const(float(rng.uniform(-4, 4)))
    kind = rng.integers(0, 6)
    if kind == 0:
        return mtl.Add(random_margin(rng, names, depth - 1), random_margin(rng, names, depth - 1))
    if kind == 1:
        return mtl.Sub(random_margin(rng, names, depth - 1), random_margin(rng, names, depth - 1))
    if kind == 2:
        return mtl.Mul(mtl.Const(float(rng.uniform(-2, 2))), random_margin(rng, names, depth - 1))
    if kind == 3:
        return mtl.Abs(random_margin(rng, names, depth - 1))
    if kind == 4:
        return mtl.Min((random_margin(rng, names, depth - 1), random_margin(rng, names, depth - 1)))
    return mtl.Max((random_margin(rng, names, depth - 1), random_margin(rng, names, depth - 1)))


def _random_interval(rng: np.random.Generator) -> tuple[float, float | None]:
    if rng.random() < 0.3:
        return 0.0, None
    lo = float(rng.uniform(0, 3))
    return lo, lo + float(rng.uniform(0, 4))


def random_formula(
    rng: np.random.Generator,
    names: list[str],
    depth: int,
    allow_not: bool = True,
) -> mtl.Formula:
    if depth <= 0:
        return mtl.Atom(random_margin(rng, names, int(rng.integers(0, 2))))
    kind = int(rng.integers(0, 7))
    if kind == 0 and allow_not:
        return mtl.Not(random_formula(rng, names, depth - 1, allow_not))
    if kind == 1:
        return mtl.And(
            random_formula(rng, names, depth - 1, allow_not),
            random_formula(rng, names, depth - 1, allow_not),
        )
    if kind == 2:
        return mtl.Or(
            random_formula(rng, names, depth - 1, allow_not),
            random_formula(rng, names, depth - 1, allow_not),
        )
    if kind == 3:
        lo, hi = _random_interval(rng)
        return mtl.Always(random_formula(rng, names, depth - 1, allow_not), lo, hi)
    if kind == 4:
        lo, hi = _random_interval(rng)
        return mtl.Eventually(random_formula(rng, names, depth - 1, allow_not), lo, hi)
    if kind == 5:
        lo, hi = _random_interval(rng)
        return mtl.Until(
            random_formula(rng, names, depth - 1, allow_not),
            random_formula(rng, names, depth - 1, allow_not),
            lo,
            hi,
        )
    return mtl.Atom(random_margin(rng, names, 1))


def random_trace(
    rng: np.random.Generator, names: list[str], max_len: int = 8
) -> mtl.Trace:
    n = int(rng.integers(1, max_len + 1))
    times = np.cumsum(rng.uniform(0.2, 1.5, size=n))
    signals = {name: rng.uniform(-5, 5, size=n) for name in names}
    return mtl.Trace(times, signals)
