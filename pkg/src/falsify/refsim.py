"""Reference taxiing simulator: kinematic plant, steering controller, perception stub.

The plant is a unicycle rolling down a straight runway at constant ground
speed.  A proportional controller steers toward the centerline from whatever
cross-track and heading estimates perception hands it.  In ``GroundTruth``
mode those estimates are exact; in ``Stub`` mode a :class:`FaultProfile`
injects region-dependent biases and Gaussian estimate noise, which is where
all the interesting failures in the bundled scenarios come from.

Episodes are deterministic given the test config and the noise seed carried
in the config's mode flags.  Traces always record the true ``cte``, ``he``
and ``s`` signals (plus an ``off_runway`` indicator), never the perceived
ones: specifications are judged against where the plane actually is.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .mtl import Trace

__all__ = [
    "TAXI_SPEED",
    "TURN_GAIN",
    "HEADING_LIMIT",
    "RUNWAY_LENGTH",
    "OFF_RUNWAY_CTE",
    "ProfileError",
    "PlantState",
    "ControllerGains",
    "control",
    "step",
    "ConstantBias",
    "SineBias",
    "BiasRule",
    "FaultProfile",
    "default_profile",
    "GroundTruth",
    "Stub",
    "perceive",
    "mode_from_modes",
    "run_episode",
    "make_runner",
]

# Plant constants.  Speed and tick mirror a slow taxi sampled at 10 Hz; the
# runway length and off-runway threshold bound the world.
TAXI_SPEED = 5.0
TURN_GAIN = 1.0
HEADING_LIMIT = 90.0
RUNWAY_LENGTH = 2866.0
OFF_RUNWAY_CTE = 30.0

# Names resolved against the plant state in guards and sine clocks; anything
# else is looked up in the episode's feature vector.
_STATE_KEYS = ("s", "cte", "he")


class ProfileError(ValueError):
    """Raised for malformed fault profiles or guards referencing unknown names."""


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


@dataclass(frozen=True)
class PlantState:
    s: float = 0.0
    cte: float = 0.0
    he: float = 0.0
    v: float = TAXI_SPEED


@dataclass(frozen=True)
class ControllerGains:
    """Steering gains, calibrated so ground-truth perception recovers the
    whole start envelope (|cte| <= 8 m, |he| <= 30 deg) to within 1.5 m of
    the centerline inside 10 s and holds it there."""

    k_p: float = 1.4
    k_h: float = 0.45
    u_max: float = 25.0


def control(cte_est: float, he_est: float, gains: ControllerGains = ControllerGains()) -> float:
    """Steering command in degrees per second, saturated at ``u_max``."""
    u = -gains.k_p * cte_est - gains.k_h * he_est
    return _clamp(u, -gains.u_max, gains.u_max)


def step(state: PlantState, steering: float, dt: float) -> PlantState:
    """Advance the plant one tick under a fixed steering command.

    Heading integrates first and is clamped to +/-90 degrees, then position
    advances along the new heading.  Distance along the runway saturates at
    the runway ends.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    he = _clamp(state.he + steering * dt * TURN_GAIN, -HEADING_LIMIT, HEADING_LIMIT)
    rad = math.radians(he)
    cte = state.cte + state.v * math.sin(rad) * dt
    s = _clamp(state.s + state.v * math.cos(rad) * dt, 0.0, RUNWAY_LENGTH)
    return PlantState(s=s, cte=cte, he=he, v=state.v)


# ---------------------------------------------------------------------------
# Fault profiles


@dataclass(frozen=True)
class ConstantBias:
    value: float = 0.0

    def value_at(self, state: PlantState, features: Mapping[str, object]) -> float:
        return self.value


@dataclass(frozen=True)
class SineBias:
    """Sinusoidal bias driven by a clock variable.

    ``over`` names the clock: ``"s"`` for distance along the runway, or any
    numeric feature (e.g. ``time_of_day``).  The bias is
    ``amplitude * sin(2*pi*(x - phase)/period)`` where ``x`` is the clock
    value.
    """

    amplitude: float
    period: float
    over: str = "s"
    phase: float = 0.0

    def value_at(self, state: PlantState, features: Mapping[str, object]) -> float:
        if self.over in _STATE_KEYS:
            x = getattr(state, self.over)
        else:
            try:
                x = float(features[self.over])  # type: ignore[arg-type]
            except KeyError:
                raise ProfileError(f"sine bias clock references unknown feature {self.over!r}") from None
        return self.amplitude * math.sin(2.0 * math.pi * (x - self.phase) / self.period)


Bias = Union[ConstantBias, SineBias]

_NO_BIAS = ConstantBias(0.0)


def _bias_from_json(obj: object, where: str) -> Bias:
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return ConstantBias(float(obj))
    if isinstance(obj, dict):
        kind = obj.get("kind", "sine")
        if kind != "sine":
            raise ProfileError(f"{where}: unknown bias kind {kind!r}")
        try:
            amplitude = float(obj["amplitude"])
            period = float(obj["period"])
        except KeyError as missing:
            raise ProfileError(f"{where}: sine bias missing {missing}") from None
        if not period > 0:
            raise ProfileError(f"{where}: sine period must be positive, got {period!r}")
        return SineBias(
            amplitude=amplitude,
            period=period,
            over=str(obj.get("over", "s")),
            phase=float(obj.get("phase", 0.0)),
        )
    raise ProfileError(f"{where}: bias must be a number or a sine object, got {obj!r}")


def _bias_to_json(bias: Bias) -> object:
    if isinstance(bias, ConstantBias):
        return bias.value
    return {
        "kind": "sine",
        "amplitude": bias.amplitude,
        "period": bias.period,
        "over": bias.over,
        "phase": bias.phase,
    }


@dataclass(frozen=True)
class BiasRule:
    """One guarded perception fault.

    The guard maps names to conditions: an ``(lo, hi)`` interval (closed on
    both ends) for numeric values or a set of tags for discrete ones.  Names
    ``s``, ``cte`` and ``he`` test the current plant state; all other names
    test the episode's feature vector, so a rule can key on where the plane
    is, where it started, the weather, or the time of day.
    """

    name: str
    guard: Mapping[str, object] = field(default_factory=dict)
    cte_bias: Bias = _NO_BIAS
    he_bias: Bias = _NO_BIAS

    def active(self, state: PlantState, features: Mapping[str, object]) -> bool:
        for key, cond in self.guard.items():
            if key in _STATE_KEYS:
                value: object = getattr(state, key)
            elif key in features:
                value = features[key]
            else:
                raise ProfileError(f"rule {self.name!r} guard references unknown feature {key!r}")
            if isinstance(cond, frozenset):
                if str(value) not in cond:
                    return False
            else:
                lo, hi = cond  # type: ignore[misc]
                try:
                    v = float(value)  # type: ignore[arg-type]
                except (TypeError, ValueError):
                    raise ProfileError(
                        f"rule {self.name!r} guard on {key!r} is numeric but value is {value!r}"
                    ) from None
                if not (lo <= v <= hi):
                    return False
        return True


def _guard_from_json(name: str, obj: object) -> Mapping[str, object]:
    if not isinstance(obj, dict):
        raise ProfileError(f"rule {name!r}: guard must be an object, got {obj!r}")
    guard: dict[str, object] = {}
    for key, cond in obj.items():
        if (
            isinstance(cond, list)
            and len(cond) == 2
            and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in cond)
        ):
            lo, hi = float(cond[0]), float(cond[1])
            if lo > hi:
                raise ProfileError(f"rule {name!r}: guard interval on {key!r} is inverted")
            guard[key] = (lo, hi)
        elif isinstance(cond, list) and cond and all(isinstance(c, str) for c in cond):
            guard[key] = frozenset(cond)
        else:
            raise ProfileError(
                f"rule {name!r}: guard on {key!r} must be [lo, hi] or a list of tags, got {cond!r}"
            )
    return guard


@dataclass(frozen=True)
class FaultProfile:
    """A set of bias rules plus per-estimate Gaussian noise levels."""

    rules: tuple[BiasRule, ...] = ()
    cte_noise: float = 0.0
    he_noise: float = 0.0

    def __post_init__(self) -> None:
        if self.cte_noise < 0 or self.he_noise < 0:
            raise ProfileError("noise levels must be nonnegative")
        names = [r.name for r in self.rules]
        if len(set(names)) != len(names):
            raise ProfileError(f"duplicate rule names: {names}")
        for rule in self.rules:
            for bias in (rule.cte_bias, rule.he_bias):
                v = bias.amplitude if isinstance(bias, SineBias) else bias.value
                if not math.isfinite(v):
                    raise ProfileError(f"rule {rule.name!r} has non-finite bias")

    def without_rules(self, names: Sequence[str]) -> "FaultProfile":
        """Copy of this profile with the named rules removed (unknown names ignored)."""
        dropped = set(names)
        return FaultProfile(
            rules=tuple(r for r in self.rules if r.name not in dropped),
            cte_noise=self.cte_noise,
            he_noise=self.he_noise,
        )

    @classmethod
    def from_dict(cls, obj: Mapping[str, object]) -> "FaultProfile":
        rules = []
        raw_rules = obj.get("rules", [])
        if not isinstance(raw_rules, list):
            raise ProfileError(f"rules must be a list, got {raw_rules!r}")
        for i, raw in enumerate(raw_rules):
            if not isinstance(raw, dict):
                raise ProfileError(f"rule #{i} must be an object, got {raw!r}")
            name = str(raw.get("name", f"rule{i}"))
            rules.append(
                BiasRule(
                    name=name,
                    guard=_guard_from_json(name, raw.get("guard", {})),
                    cte_bias=_bias_from_json(raw.get("cte_bias", 0.0), f"rule {name!r} cte_bias"),
                    he_bias=_bias_from_json(raw.get("he_bias", 0.0), f"rule {name!r} he_bias"),
                )
            )
        return cls(
            rules=tuple(rules),
            cte_noise=float(obj.get("cte_noise", 0.0)),  # type: ignore[arg-type]
            he_noise=float(obj.get("he_noise", 0.0)),  # type: ignore[arg-type]
        )

    def to_dict(self) -> dict:
        return {
            "cte_noise": self.cte_noise,
            "he_noise": self.he_noise,
            "rules": [
                {
                    "name": r.name,
                    "guard": {
                        k: (sorted(c) if isinstance(c, frozenset) else [c[0], c[1]])  # type: ignore[index]
                        for k, c in r.guard.items()
                    },
                    "cte_bias": _bias_to_json(r.cte_bias),
                    "he_bias": _bias_to_json(r.he_bias),
                }
                for r in self.rules
            ],
        }

    @classmethod
    def from_json(cls, text: str) -> "FaultProfile":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as err:
            raise ProfileError(f"profile is not valid JSON: {err}") from None
        if not isinstance(obj, dict):
            raise ProfileError("profile JSON must be an object")
        return cls.from_dict(obj)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FaultProfile":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def default_profile() -> FaultProfile:
    """The bundled fault profile (see data/default_profile.json).

    Three rules: a strong constant bias at the runway intersection for
    episodes that also start inside it, a mild early-morning bias, and a
    clear-sky afternoon shadow bias that sweeps sinusoidally with the time
    of day.
    """
    text = resources.files("falsify").joinpath("data/default_profile.json").read_text("utf-8")
    return FaultProfile.from_json(text)


# ---------------------------------------------------------------------------
# Perception


@dataclass(frozen=True)
class GroundTruth:
    pass


@dataclass(frozen=True)
class Stub:
    profile: FaultProfile


PerceptionMode = Union[GroundTruth, Stub]


def perceive(
    mode: PerceptionMode,
    state: PlantState,
    features: Mapping[str, object],
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Estimate (cte, he) from the true state.

    Ground truth is the identity and consumes no randomness.  The stub draws
    its two noise samples every call, whether or not any rule fires, so the
    random stream consumed by an episode does not depend on the profile's
    guard structure; disabling a rule changes biases only.
    """
    if isinstance(mode, GroundTruth):
        return state.cte, state.he
    noise = rng.standard_normal(2)
    cte_est = state.cte + mode.profile.cte_noise * noise[0]
    he_est = state.he + mode.profile.he_noise * noise[1]
    for rule in mode.profile.rules:
        if rule.active(state, features):
            cte_est += rule.cte_bias.value_at(state, features)
            he_est += rule.he_bias.value_at(state, features)
    return cte_est, he_est


def mode_from_modes(modes: Mapping[str, object], profile: Union[FaultProfile, None] = None) -> PerceptionMode:
    """Build the perception mode requested by a test config's mode flags.

    Recognized flags: ``perception`` ("stub" or "ground-truth", default
    stub) and ``disable_rules`` (list of rule names to drop from the
    profile).  ``profile`` defaults to the bundled one.
    """
    kind = str(modes.get("perception", "stub"))
    if kind == "ground-truth":
        return GroundTruth()
    if kind != "stub":
        raise ValueError(f"unknown perception mode {kind!r}")
    prof = default_profile() if profile is None else profile
    disabled = modes.get("disable_rules", ())
    if isinstance(disabled, str):
        disabled = [d for d in disabled.split(",") if d]
    prof = prof.without_rules([str(d) for d in disabled])  # type: ignore[union-attr]
    return Stub(prof)


# ---------------------------------------------------------------------------
# Episodes


def _episode_seed(modes: Mapping[str, object]) -> int:
    seed = modes.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValueError(f"mode flag 'seed' must be an integer, got {seed!r}")
    return seed


def run_episode(config, mode: PerceptionMode, gains: ControllerGains = ControllerGains()) -> Trace:
    """Integrate one closed-loop episode and return its trace.

    ``config`` is a simbridge TestConfig (anything with ``features``,
    ``duration``, ``period`` and ``modes`` attributes works).  Start pose is
    read from the ``start_s``, ``start_cte`` and ``start_he`` features,
    each defaulting to 0.  The trace samples t = 0, period, ..., duration
    and records the true state; perception noise is seeded from the
    ``seed`` mode flag.
    """
    features = config.features
    state = PlantState(
        s=_clamp(float(features.get("start_s", 0.0)), 0.0, RUNWAY_LENGTH),
        cte=float(features.get("start_cte", 0.0)),
        he=_clamp(float(features.get("start_he", 0.0)), -HEADING_LIMIT, HEADING_LIMIT),
    )
    rng = np.random.default_rng(_episode_seed(config.modes))
    n = int(round(config.duration / config.period))
    times = np.empty(n + 1)
    signals = {name: np.empty(n + 1) for name in ("cte", "he", "s", "off_runway")}

    def record(k: int, t: float) -> None:
        times[k] = t
        signals["cte"][k] = state.cte
        signals["he"][k] = state.he
        signals["s"][k] = state.s
        signals["off_runway"][k] = 1.0 if abs(state.cte) > OFF_RUNWAY_CTE else 0.0

    record(0, 0.0)
    for k in range(1, n + 1):
        cte_est, he_est = perceive(mode, state, features, rng)
        u = control(cte_est, he_est, gains)
        state = step(state, u, config.period)
        # Timestamps come from the tick index, not accumulation, so window
        # boundaries in specs land exactly on samples.
        record(k, round(k * config.period, 9))
    return Trace(times, signals)


def make_runner(profile: Union[FaultProfile, None] = None, gains: ControllerGains = ControllerGains()):
    """Episode runner with a fixed profile: TestConfig -> Trace.

    The returned callable interprets each config's mode flags itself, so one
    runner serves mixed stub/ground-truth campaigns.
    """

    def runner(config) -> Trace:
        return run_episode(config, mode_from_modes(config.modes, profile), gains)

    return runner
