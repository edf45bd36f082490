"""Point generators over the external-parameter domain.

Three samplers share one small interface: ``next_point()`` yields a point in
the domain and ``record_feedback(point, feedback)`` reports the episode
outcome back.  Uniform and Halton ignore feedback entirely (documented
no-ops); the cross-entropy sampler buffers a batch and then reweights its
per-dimension categorical distributions toward the elite (lowest-robustness)
points, which is how the engine learns where failures live.

Feedback is either a ``Robustness`` value or the ``REJECTED`` sentinel from
scenario sampling.  Rejections count toward the batch but never join the
elite set.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .rejection import REJECTED, Rejected

__all__ = [
    "NotAdaptiveError",
    "Continuous",
    "Discrete",
    "DomainSpec",
    "Robustness",
    "Feedback",
    "UniformSampler",
    "HaltonSampler",
    "CrossEntropyState",
    "CrossEntropySampler",
    "ce_update",
    "distribution_report",
    "DistributionReport",
    "radical_inverse",
    "star_discrepancy",
]


class NotAdaptiveError(TypeError):
    """Raised when an adaptive-only operation is applied to a stateless sampler."""


# ---------------------------------------------------------------------------
# Domains


@dataclass(frozen=True)
class Continuous:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"continuous dimension needs lo < hi, got ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class Discrete:
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.tags:
            raise ValueError("discrete dimension needs at least one tag")


Dim = Union[Continuous, Discrete]


@dataclass(frozen=True)
class DomainSpec:
    dims: tuple[Dim, ...]
    names: Union[tuple[str, ...], None] = None

    def __post_init__(self) -> None:
        if not self.dims:
            raise ValueError("domain needs at least one dimension")
        if self.names is not None and len(self.names) != len(self.dims):
            raise ValueError("names and dims disagree in length")

    def dim_names(self) -> tuple[str, ...]:
        if self.names is not None:
            return self.names
        return tuple(f"dim{i}" for i in range(len(self.dims)))


@dataclass(frozen=True)
class Robustness:
    value: float


Feedback = Union[Robustness, Rejected]


def _rho_of(feedback: object) -> Union[float, Rejected]:
    if feedback is REJECTED:
        return REJECTED
    if isinstance(feedback, Robustness):
        return feedback.value
    if isinstance(feedback, (int, float)) and not isinstance(feedback, bool):
        return float(feedback)
    raise TypeError(f"feedback must be Robustness, a number, or REJECTED, got {feedback!r}")


# ---------------------------------------------------------------------------
# Stateless samplers


class UniformSampler:
    """Independent uniform draws in every dimension."""

    def __init__(self, domain: DomainSpec, seed: int = 0):
        self.domain = domain
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def next_point(self) -> tuple:
        with self._lock:
            point = []
            for dim in self.domain.dims:
                if isinstance(dim, Continuous):
                    point.append(dim.lo + (dim.hi - dim.lo) * self._rng.random())
                else:
                    point.append(dim.tags[int(self._rng.integers(len(dim.tags)))])
        return tuple(point)

    def record_feedback(self, point: tuple, feedback: object) -> None:
        """No-op: uniform sampling is not adaptive."""
        _rho_of(feedback)


def _primes(count: int) -> list[int]:
    primes: list[int] = []
    candidate = 2
    while len(primes) < count:
        if all(candidate % p for p in primes):
            primes.append(candidate)
        candidate += 1
    return primes


def radical_inverse(index: int, base: int, permutation: Union[Sequence[int], None] = None) -> float:
    """Van der Corput radical inverse of ``index`` in ``base``.

    The optional digit permutation must fix 0 so that the implicit trailing
    zeros of the digit expansion stay zero.
    """
    if index < 1:
        raise ValueError("radical inverse indices start at 1")
    value = 0.0
    scale = 1.0 / base
    while index > 0:
        index, digit = divmod(index, base)
        if permutation is not None:
            digit = permutation[digit]
        value += digit * scale
        scale /= base
    return value


class HaltonSampler:
    """Low-discrepancy sequence: dimension i uses the i-th prime as its base.

    Indexing starts at 1 (base 2 yields 0.5, 0.25, 0.75, ...).  Points are
    deterministic regardless of feedback; an optional digit scrambling
    (seeded, zero-fixing permutations) decorrelates dimensions in high dim
    counts without giving up determinism.
    """

    def __init__(self, domain: DomainSpec, scramble: bool = False, seed: int = 0):
        self.domain = domain
        self._bases = _primes(len(domain.dims))
        self._index = 1
        self._lock = threading.Lock()
        self._perms: Union[list[list[int]], None] = None
        if scramble:
            rng = np.random.default_rng(seed)
            self._perms = []
            for base in self._bases:
                perm = [0] + list(1 + rng.permutation(base - 1))
                self._perms.append(perm)

    def next_point(self) -> tuple:
        with self._lock:
            index = self._index
            self._index += 1
        point = []
        for d, (dim, base) in enumerate(zip(self.domain.dims, self._bases)):
            u = radical_inverse(index, base, None if self._perms is None else self._perms[d])
            if isinstance(dim, Continuous):
                point.append(dim.lo + (dim.hi - dim.lo) * u)
            else:
                point.append(dim.tags[min(int(u * len(dim.tags)), len(dim.tags) - 1)])
        return tuple(point)

    def record_feedback(self, point: tuple, feedback: object) -> None:
        """No-op: the sequence is fixed in advance."""
        _rho_of(feedback)


# ---------------------------------------------------------------------------
# Cross-entropy


@dataclass(frozen=True)
class CrossEntropyState:
    """Per-dimension categorical distributions plus the in-flight batch.

    Continuous dimensions are discretized into ``buckets`` equal-width
    buckets; discrete dimensions keep one probability per tag.
    """

    domain: DomainSpec
    probs: tuple[tuple[float, ...], ...]
    buffer: tuple[tuple[tuple, Union[float, Rejected]], ...] = ()
    buckets: int = 10
    batch_size: int = 50
    elite_fraction: float = 0.2
    smoothing: float = 0.9
    threshold: float = 0.0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ValueError("elite_fraction must be in (0, 1]")
        if not 0.0 <= self.smoothing <= 1.0:
            raise ValueError("smoothing must be in [0, 1]")
        if self.buckets < 1:
            raise ValueError("buckets must be at least 1")
        if len(self.probs) != len(self.domain.dims):
            raise ValueError("probability table and domain disagree in dimension count")
        for dim, p in zip(self.domain.dims, self.probs):
            expected = self.buckets if isinstance(dim, Continuous) else len(dim.tags)
            if len(p) != expected:
                raise ValueError(f"wrong category count for {dim!r}: {len(p)}")
            if any(q < 0 for q in p) or abs(sum(p) - 1.0) > 1e-9:
                raise ValueError(f"probabilities must be nonnegative and sum to 1, got {p!r}")

    @classmethod
    def initial(cls, domain: DomainSpec, **hyper) -> "CrossEntropyState":
        buckets = hyper.get("buckets", 10)
        probs = tuple(
            tuple([1.0 / buckets] * buckets)
            if isinstance(dim, Continuous)
            else tuple([1.0 / len(dim.tags)] * len(dim.tags))
            for dim in domain.dims
        )
        return cls(domain=domain, probs=probs, **hyper)

    def category_of(self, dim_index: int, value: Union[float, str]) -> int:
        dim = self.domain.dims[dim_index]
        if isinstance(dim, Discrete):
            return dim.tags.index(value)  # type: ignore[arg-type]
        width = (dim.hi - dim.lo) / self.buckets
        k = int((float(value) - dim.lo) / width)
        return min(max(k, 0), self.buckets - 1)

    def to_dict(self) -> dict:
        return {
            "dims": [
                {"kind": "continuous", "lo": d.lo, "hi": d.hi}
                if isinstance(d, Continuous)
                else {"kind": "discrete", "tags": list(d.tags)}
                for d in self.domain.dims
            ],
            "names": list(self.domain.dim_names()),
            "probs": [list(p) for p in self.probs],
            "buckets": self.buckets,
            "batch_size": self.batch_size,
            "elite_fraction": self.elite_fraction,
            "smoothing": self.smoothing,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CrossEntropyState":
        dims: list[Dim] = []
        for d in obj["dims"]:
            if d["kind"] == "continuous":
                dims.append(Continuous(float(d["lo"]), float(d["hi"])))
            else:
                dims.append(Discrete(tuple(d["tags"])))
        domain = DomainSpec(tuple(dims), tuple(obj["names"]))
        return cls(
            domain=domain,
            probs=tuple(tuple(float(q) for q in p) for p in obj["probs"]),
            buckets=int(obj["buckets"]),
            batch_size=int(obj["batch_size"]),
            elite_fraction=float(obj["elite_fraction"]),
            smoothing=float(obj["smoothing"]),
            threshold=float(obj["threshold"]),
        )


def ce_update(state: CrossEntropyState, batch: Sequence[tuple[tuple, object]]) -> CrossEntropyState:
    """One elite reweighting step; pure, returns the new state.

    The elite set is every non-rejected point with rho <= threshold, or the
    ceil(elite_fraction * batch_size) lowest-rho points when none reach the
    threshold.  A batch with no scored points at all leaves the state
    unchanged.
    """
    if len(batch) != state.batch_size:
        raise ValueError(f"batch must hold exactly {state.batch_size} entries, got {len(batch)}")
    scored = [(point, _rho_of(fb)) for point, fb in batch]
    scored = [(point, rho) for point, rho in scored if rho is not REJECTED]
    if not scored:
        return replace(state, buffer=())
    elites = [point for point, rho in scored if rho <= state.threshold]
    if not elites:
        count = math.ceil(state.elite_fraction * state.batch_size)
        scored.sort(key=lambda pr: pr[1])
        elites = [point for point, _ in scored[:count]]
    new_probs = []
    for d, old in enumerate(state.probs):
        counts = [0] * len(old)
        for point in elites:
            counts[state.category_of(d, point[d])] += 1
        freq = [c / len(elites) for c in counts]
        mixed = [state.smoothing * f + (1.0 - state.smoothing) * p for f, p in zip(freq, old)]
        total = sum(mixed)
        new_probs.append(tuple(m / total for m in mixed))
    return replace(state, probs=tuple(new_probs), buffer=())


class CrossEntropySampler:
    """Adaptive sampler; callers must serialize next_point/record_feedback."""

    def __init__(
        self,
        domain: DomainSpec,
        seed: int = 0,
        buckets: int = 10,
        batch_size: int = 50,
        elite_fraction: float = 0.2,
        smoothing: float = 0.9,
        threshold: float = 0.0,
    ):
        self.domain = domain
        self._rng = np.random.default_rng(seed)
        self._state = CrossEntropyState.initial(
            domain,
            buckets=buckets,
            batch_size=batch_size,
            elite_fraction=elite_fraction,
            smoothing=smoothing,
            threshold=threshold,
        )

    @property
    def state(self) -> CrossEntropyState:
        return self._state

    def next_point(self) -> tuple:
        point = []
        for dim, p in zip(self.domain.dims, self._state.probs):
            k = int(self._rng.choice(len(p), p=np.asarray(p) / sum(p)))
            if isinstance(dim, Continuous):
                width = (dim.hi - dim.lo) / self._state.buckets
                point.append(dim.lo + (k + self._rng.random()) * width)
            else:
                point.append(dim.tags[k])
        return tuple(point)

    def record_feedback(self, point: tuple, feedback: object) -> None:
        buffer = self._state.buffer + ((point, _rho_of(feedback)),)
        if len(buffer) == self._state.batch_size:
            self._state = ce_update(replace(self._state, buffer=()), buffer)
        else:
            self._state = replace(self._state, buffer=buffer)

    def to_json(self) -> str:
        return json.dumps(self._state.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str, seed: int = 0) -> "CrossEntropySampler":
        state = CrossEntropyState.from_dict(json.loads(text))
        sampler = cls.__new__(cls)
        sampler.domain = state.domain
        sampler._rng = np.random.default_rng(seed)
        sampler._state = state
        return sampler


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class DistributionReport:
    """Rows of (dimension, bucket_lo, bucket_hi, probability); discrete
    dimensions repeat the tag in both bound columns."""

    rows: tuple[tuple[str, Union[float, str], Union[float, str], float], ...]

    def to_csv(self) -> str:
        lines = ["dimension,bucket_lo,bucket_hi,probability"]
        for dim, lo, hi, p in self.rows:
            lines.append(f"{dim},{lo},{hi},{p!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            [{"dimension": d, "bucket_lo": lo, "bucket_hi": hi, "probability": p} for d, lo, hi, p in self.rows]
        )


def distribution_report(sampler) -> DistributionReport:
    """Current learned distribution of an adaptive sampler."""
    if not isinstance(sampler, CrossEntropySampler):
        raise NotAdaptiveError(f"{type(sampler).__name__} has no learned distribution")
    state = sampler.state
    rows: list[tuple[str, Union[float, str], Union[float, str], float]] = []
    for name, dim, probs in zip(state.domain.dim_names(), state.domain.dims, state.probs):
        if isinstance(dim, Continuous):
            width = (dim.hi - dim.lo) / state.buckets
            for k, p in enumerate(probs):
                rows.append((name, dim.lo + k * width, dim.lo + (k + 1) * width, p))
        else:
            for tag, p in zip(dim.tags, probs):
                rows.append((name, tag, tag, p))
    return DistributionReport(tuple(rows))


# ---------------------------------------------------------------------------
# Spread measurement


def star_discrepancy(points: Sequence[float]) -> float:
    """Exact star discrepancy of a 1-D point set against uniform on [0, 1]."""
    xs = sorted(float(x) for x in points)
    if not xs:
        raise ValueError("discrepancy of an empty point set is undefined")
    if xs[0] < 0.0 or xs[-1] > 1.0:
        raise ValueError("points must lie in [0, 1]")
    n = len(xs)
    worst = 0.0
    for i, x in enumerate(xs, start=1):
        worst = max(worst, i / n - x, x - (i - 1) / n)
    return worst
