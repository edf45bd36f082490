"""Campaign orchestration: sample, simulate, monitor, record, feed back.

A campaign repeatedly asks a sampler for a point in the external-parameter
domain, completes it into a full environment configuration by sampling the
scenario program, runs one episode on the chosen simulator, scores the
resulting trace against the specification, and appends a row to the results
table.  Non-rejected robustness values are fed back to the sampler so
adaptive search can steer.  On top of the table this module provides the
analysis operations: binned statistics, counterexample extraction, replay
under intervention overrides, training-configuration export, and CSV/SVG
export.

The JSON-lines table written during a campaign deliberately excludes wall
times so that a rerun with the same seed reproduces the file byte for byte;
the CSV export carries wall times and is the lossy-free interchange format
for row data (see ResultTable.to_csv / from_csv).
"""

from __future__ import annotations

import json
import math
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .mtl import Formula, Trace, parse_spec, parse_spec_file, robustness
from .protocol import ProtocolError, SimulatorError, SimulatorServer, TestConfig, run_in_process
from .refsim import ControllerGains, FaultProfile, default_profile, make_runner
from .rejection import REJECTED
from .samplers import (
    Continuous,
    CrossEntropySampler,
    Discrete,
    DomainSpec,
    HaltonSampler,
    Robustness,
    UniformSampler,
)
from .scenario import (
    ContinuousDomain,
    FeatureVector,
    Provenance,
    ScenarioProgram,
    parse_scenario_file,
)
from .scenario import sample as sample_scenario

__all__ = [
    "Verdict",
    "ResultRow",
    "ResultTable",
    "TableWriter",
    "CampaignConfig",
    "BinStat",
    "run_campaign",
    "binned_stats",
    "filter_counterexamples",
    "replay",
    "export_training_configs",
    "export_table",
    "rho_scatter_svg",
    "same_rows",
]


class Verdict(str, Enum):
    SATISFIED = "Satisfied"
    FALSIFIED = "Falsified"
    REJECTED = "Rejected"
    TIMEOUT = "Timeout"
    ERROR = "Error"


_SCORED = (Verdict.SATISFIED, Verdict.FALSIFIED)


@dataclass(frozen=True)
class ResultRow:
    """One episode: what was sampled, how it scored, how it was judged.

    ``seed`` is the per-episode noise seed that was handed to the simulator,
    which is what makes bit-exact replay possible.  Rows without a verdict
    from the monitor (Rejected, Timeout, Error) carry no robustness value.
    """

    episode_id: int
    features: Mapping[str, Union[float, str]]
    rho: Union[float, None]
    verdict: Verdict
    seed: int
    wall_ms: Union[float, None] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        clean = {}
        for name, value in self.features.items():
            clean[str(name)] = value if isinstance(value, str) else float(value)
        object.__setattr__(self, "features", clean)
        if self.rho is not None:
            object.__setattr__(self, "rho", float(self.rho))
        if self.verdict in _SCORED:
            if self.rho is None:
                raise ValueError(f"{self.verdict.value} row needs a robustness value")
            if (self.verdict is Verdict.FALSIFIED) != (self.rho <= 0):
                raise ValueError(f"verdict {self.verdict.value} inconsistent with rho {self.rho}")
        elif self.rho is not None:
            raise ValueError(f"{self.verdict.value} row must not carry a robustness value")

    def to_json_obj(self) -> dict:
        return {
            "type": "row",
            "episode": self.episode_id,
            "features": dict(self.features),
            "rho": self.rho,
            "verdict": self.verdict.value,
            "seed": self.seed,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "ResultRow":
        return cls(
            episode_id=obj["episode"],
            features=obj["features"],
            rho=obj.get("rho"),
            verdict=Verdict(obj["verdict"]),
            seed=obj["seed"],
        )


def _row_line(row: ResultRow) -> str:
    return json.dumps(row.to_json_obj(), allow_nan=False, separators=(",", ":")) + "\n"


def _meta_line(meta: Mapping) -> str:
    return json.dumps({"type": "campaign", **meta}, allow_nan=False, separators=(",", ":")) + "\n"


class ResultTable:
    """Ordered collection of ResultRows plus campaign metadata.

    Metadata records what produced the rows (scenario, spec, sampler, seed,
    episode duration/period, base mode flags) so that replay can rebuild
    episode configurations without re-sampling.  Two tables are equal when
    their declared parameter order and their rows agree; metadata and wall
    times recorded in rows do count for row equality, so load paths that
    drop wall times (JSONL) compare equal only to tables without them.
    """

    def __init__(self, meta: Union[Mapping, None] = None, rows: Sequence[ResultRow] = ()):
        self.meta = dict(meta or {})
        self.rows: list[ResultRow] = list(rows)

    @property
    def parameters(self) -> tuple[str, ...]:
        declared = self.meta.get("parameters")
        if declared:
            return tuple(declared)
        seen: dict[str, None] = {}
        for row in self.rows:
            for name in row.features:
                seen.setdefault(name)
        return tuple(seen)

    def append(self, row: ResultRow) -> None:
        self.rows.append(row)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for row in self.rows:
            out[row.verdict.value] = out.get(row.verdict.value, 0) + 1
        return out

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ResultTable):
            return NotImplemented
        return self.parameters == other.parameters and self.rows == other.rows

    # -- JSONL (the store format; no wall times, byte-stable) ----------------

    def to_jsonl(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_meta_line(self.meta))
            for row in self.rows:
                fh.write(_row_line(row))

    @classmethod
    def from_jsonl(cls, path: Union[str, Path]) -> "ResultTable":
        meta: dict = {}
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                kind = obj.get("type")
                if kind == "campaign":
                    meta = {k: v for k, v in obj.items() if k != "type"}
                elif kind == "row":
                    rows.append(ResultRow.from_json_obj(obj))
                else:
                    raise ValueError(f"unexpected record type {kind!r} in table file")
        return cls(meta, rows)

    # -- CSV (the interchange format; carries wall times) --------------------

    def to_csv(self, path: Union[str, Path]) -> None:
        import csv

        params = self.parameters
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", *params, "rho", "verdict", "seed", "wall_ms"])
            for row in self.rows:
                cells: list[str] = [str(row.episode_id)]
                for name in params:
                    value = row.features.get(name)
                    if value is None:
                        cells.append("")
                    elif isinstance(value, str):
                        cells.append(value)
                    else:
                        cells.append(repr(value))
                cells.append("" if row.rho is None else repr(row.rho))
                cells.append(row.verdict.value)
                cells.append(str(row.seed))
                cells.append("" if row.wall_ms is None else repr(row.wall_ms))
                writer.writerow(cells)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "ResultTable":
        import csv

        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if len(header) < 5 or header[0] != "episode" or header[-4:] != ["rho", "verdict", "seed", "wall_ms"]:
                raise ValueError("not a results-table CSV")
            params = header[1:-4]
            rows = []
            for cells in reader:
                features: dict[str, Union[float, str]] = {}
                for name, cell in zip(params, cells[1 : 1 + len(params)]):
                    if cell == "":
                        continue
                    features[name] = _cell_value(cell)
                rho_cell, verdict, seed, wall = cells[1 + len(params) :]
                rows.append(
                    ResultRow(
                        episode_id=int(cells[0]),
                        features=features,
                        rho=None if rho_cell == "" else float(rho_cell),
                        verdict=Verdict(verdict),
                        seed=int(seed),
                        wall_ms=None if wall == "" else float(wall),
                    )
                )
        return cls({"parameters": list(params)}, rows)


def _cell_value(cell: str) -> Union[float, str]:
    try:
        value = float(cell)
    except ValueError:
        return cell
    # Tags are stored verbatim, so a cell like "inf" is a tag, not a float.
    return value if math.isfinite(value) else cell


def same_rows(a: ResultTable, b: ResultTable) -> bool:
    """Row-set equality ignoring wall times and ordering."""

    def key(row: ResultRow):
        return (row.episode_id, tuple(sorted(row.features.items())), row.rho, row.verdict, row.seed)

    return sorted(map(key, a.rows)) == sorted(map(key, b.rows))


class TableWriter:
    """Incremental JSONL persistence: one flushed line per completed episode,
    so a crashed campaign leaves a readable table prefix behind."""

    def __init__(self, path: Union[str, Path], meta: Mapping):
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(_meta_line(meta))
        self._fh.flush()

    def append(self, row: ResultRow) -> None:
        self._fh.write(_row_line(row))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TableWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Campaigns


_SAMPLERS = ("uniform", "halton", "ce")


@dataclass(frozen=True)
class CampaignConfig:
    scenario: Union[str, Path]
    spec: Union[str, Path]
    sampler: str = "uniform"
    episodes: int = 100
    seed: int = 0
    stop_on_falsify: bool = False
    parallelism: int = 1
    sim: str = "builtin"
    perception: str = "stub"
    disable_rules: tuple[str, ...] = ()
    profile: Union[str, Path, None] = None
    gains: Union[ControllerGains, None] = None
    duration: Union[float, None] = None
    period: Union[float, None] = None
    sampler_options: Mapping[str, object] = field(default_factory=dict)
    episode_timeout: float = 60.0
    keep_alive: bool = False
    max_rejects: int = 1000
    table_path: Union[str, Path, None] = None
    sampler_state_out: Union[str, Path, None] = None

    def __post_init__(self) -> None:
        if self.sampler_state_out is not None and self.sampler != "ce":
            raise ValueError("sampler_state_out only makes sense for the cross-entropy sampler")
        if self.sampler not in _SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}, expected one of {_SAMPLERS}")
        if self.episodes < 1:
            raise ValueError("episodes must be at least 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if self.perception not in ("stub", "ground-truth"):
            raise ValueError(f"unknown perception mode {self.perception!r}")
        _parse_sim(self.sim)
        object.__setattr__(self, "disable_rules", tuple(self.disable_rules))
        object.__setattr__(self, "sampler_options", dict(self.sampler_options))


def _parse_sim(target: str):
    if target == "builtin":
        return ("builtin", None, None)
    if target.startswith("tcp:"):
        rest = target[len("tcp:") :]
        host, sep, port = rest.rpartition(":")
        if not sep or not host:
            raise ValueError(f"simulator target {target!r} is not tcp:HOST:PORT")
        return ("tcp", host, int(port))
    raise ValueError(f"unknown simulator target {target!r}, expected 'builtin' or 'tcp:HOST:PORT'")


def _domain_of(program: ScenarioProgram) -> Union[DomainSpec, None]:
    externals = program.externals()
    if not externals:
        return None
    dims = []
    for _, domain in externals:
        if isinstance(domain, ContinuousDomain):
            dims.append(Continuous(domain.lo, domain.hi))
        else:
            dims.append(Discrete(domain.values))
    return DomainSpec(tuple(dims), names=tuple(name for name, _ in externals))


def _make_sampler(config: CampaignConfig, domain: DomainSpec):
    options = dict(config.sampler_options)
    if config.sampler == "uniform":
        return UniformSampler(domain, seed=config.seed)
    if config.sampler == "halton":
        return HaltonSampler(domain, scramble=bool(options.get("scramble", False)), seed=config.seed)
    return CrossEntropySampler(
        domain,
        seed=config.seed,
        buckets=int(options.get("buckets", 10)),
        batch_size=int(options.get("batch_size", 50)),
        elite_fraction=float(options.get("elite_fraction", 0.2)),
        smoothing=float(options.get("smoothing", 0.9)),
        threshold=float(options.get("threshold", 0.0)),
    )


def _episode_noise_seed(campaign_seed: int, index: int) -> int:
    return campaign_seed * 1_000_003 + index


class _Campaign:
    """Everything one campaign needs, wired once up front."""

    def __init__(self, config: CampaignConfig):
        self.config = config
        self.program = parse_scenario_file(config.scenario)
        self.formula = parse_spec_file(config.spec)
        self.duration = config.duration if config.duration is not None else float(self.program.metadata.get("duration", 30.0))
        self.period = config.period if config.period is not None else float(self.program.metadata.get("period", 0.1))
        self.domain = _domain_of(self.program)
        self.sampler = _make_sampler(config, self.domain) if self.domain is not None else None
        self.adaptive = isinstance(self.sampler, CrossEntropySampler)
        if self.adaptive and config.parallelism != 1:
            raise ValueError("adaptive (cross-entropy) campaigns must run with parallelism 1")
        self.ext_names = self.domain.dim_names() if self.domain is not None else ()
        self.base_modes: dict[str, object] = {"perception": config.perception}
        if config.disable_rules:
            self.base_modes["disable_rules"] = list(config.disable_rules)
        self.sampler_name = config.sampler if self.sampler is not None else "scenario"
        # Off-runway episodes are only countable while traces are in hand,
        # so the campaign tallies them as it scores.
        self._off_lock = threading.Lock()
        self.off_runway_seen = 0
        self.off_runway_count = 0
        self.meta = {
            "sampler": self.sampler_name,
            "seed": config.seed,
            "parameters": list(self.program.names()),
            "duration": self.duration,
            "period": self.period,
            "modes": dict(self.base_modes),
            "scenario": str(config.scenario),
            "spec": str(config.spec),
            "profile": None if config.profile is None else str(config.profile),
        }
        kind, host, port = _parse_sim(config.sim)
        self.server: Union[SimulatorServer, None] = None
        if kind == "builtin":
            profile = default_profile() if config.profile is None else FaultProfile.load(config.profile)
            gains = config.gains if config.gains is not None else ControllerGains()
            self.runner = make_runner(profile, gains)
        else:
            self.server = SimulatorServer(
                host=host,
                port=port,
                episode_timeout=config.episode_timeout,
                keep_alive=config.keep_alive,
            )

    def close(self) -> None:
        if self.server is not None:
            self.server.close()

    def simulate(self, tc: TestConfig) -> tuple[str, Union[Trace, None], Union[str, None]]:
        if self.server is not None:
            result = self.server.run_episode(tc)
            return result.outcome, result.trace, result.error
        try:
            return "done", run_in_process(tc, self.runner), None
        except (SimulatorError, ProtocolError) as err:
            return "error", None, str(err)

    def run_one(self, index: int, point: Union[tuple, None]):
        """One full episode; returns (row, feedback-for-sampler)."""
        t0 = time.perf_counter()
        config = self.config
        ep_seed = _episode_noise_seed(config.seed, index)
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, index)))
        external = dict(zip(self.ext_names, point)) if point is not None else None
        vector = sample_scenario(
            self.program,
            external=external,
            rng=rng,
            max_rejects=config.max_rejects,
            provenance=Provenance(self.sampler_name, index, config.seed),
        )
        if vector is REJECTED:
            wall = (time.perf_counter() - t0) * 1000.0
            row = ResultRow(index, dict(external or {}), None, Verdict.REJECTED, ep_seed, wall)
            return row, REJECTED
        modes = dict(self.base_modes)
        modes["seed"] = ep_seed
        tc = TestConfig(
            episode_id=index,
            features=dict(vector),
            duration=self.duration,
            period=self.period,
            modes=modes,
        )
        outcome, trace, _ = self.simulate(tc)
        if outcome == "done":
            rho = robustness(self.formula, trace)
            verdict = Verdict.FALSIFIED if rho <= 0 else Verdict.SATISFIED
            if "off_runway" in trace.names:
                left = bool(np.max(trace.signal("off_runway")) > 0.0)
                with self._off_lock:
                    self.off_runway_seen += 1
                    self.off_runway_count += int(left)
            wall = (time.perf_counter() - t0) * 1000.0
            return ResultRow(index, dict(vector), rho, verdict, ep_seed, wall), Robustness(rho)
        verdict = Verdict.TIMEOUT if outcome == "timeout" else Verdict.ERROR
        wall = (time.perf_counter() - t0) * 1000.0
        # No robustness value exists, so the sampler sees a rejection.
        return ResultRow(index, dict(vector), None, verdict, ep_seed, wall), REJECTED


def run_campaign(config: CampaignConfig) -> ResultTable:
    """Run a full campaign and return (and optionally persist) its table.

    Episodes are numbered from 0; with ``stop_on_falsify`` the loop ends at
    the first Falsified row.  Feedback reaches the sampler exactly once per
    episode, in episode order.  With ``parallelism`` > 1 (feedback-free
    samplers only) episodes run in a thread pool and rows are appended as
    they complete, so file order may differ from episode order.
    """
    campaign = _Campaign(config)
    table = ResultTable(campaign.meta)
    writer = TableWriter(config.table_path, campaign.meta) if config.table_path else None
    try:
        if config.parallelism == 1:
            _run_sequential(campaign, table, writer)
        else:
            _run_parallel(campaign, table, writer)
        if config.sampler_state_out is not None and campaign.adaptive:
            Path(config.sampler_state_out).write_text(campaign.sampler.to_json())
    finally:
        if writer is not None:
            writer.close()
        campaign.close()
    if campaign.off_runway_seen:
        # Only meaningful when the simulator emits the signal; recorded on
        # the returned table, not in the streamed file, whose header is
        # written before any episode runs.
        table.meta["off_runway_episodes"] = campaign.off_runway_count
    return table


def _run_sequential(campaign: _Campaign, table: ResultTable, writer: Union[TableWriter, None]) -> None:
    config = campaign.config
    for index in range(config.episodes):
        point = campaign.sampler.next_point() if campaign.sampler is not None else None
        row, feedback = campaign.run_one(index, point)
        table.append(row)
        if writer is not None:
            writer.append(row)
        if campaign.sampler is not None:
            campaign.sampler.record_feedback(point, feedback)
        if config.stop_on_falsify and row.verdict is Verdict.FALSIFIED:
            return


def _run_parallel(campaign: _Campaign, table: ResultTable, writer: Union[TableWriter, None]) -> None:
    config = campaign.config
    points = [
        campaign.sampler.next_point() if campaign.sampler is not None else None
        for _ in range(config.episodes)
    ]
    feedbacks: dict[int, object] = {}
    stop = False
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        pending = {pool.submit(campaign.run_one, i, points[i]): i for i in range(config.episodes)}
        while pending:
            done, _ = wait(pending, return_when=FIRST_COMPLETED)
            for future in done:
                index = pending.pop(future)
                if future.cancelled():
                    continue
                row, feedback = future.result()
                table.append(row)
                if writer is not None:
                    writer.append(row)
                feedbacks[index] = feedback
                if config.stop_on_falsify and row.verdict is Verdict.FALSIFIED:
                    stop = True
            if stop:
                for future in list(pending):
                    if future.cancel():
                        pending.pop(future)
    if campaign.sampler is not None:
        for index in sorted(feedbacks):
            campaign.sampler.record_feedback(points[index], feedbacks[index])


# ---------------------------------------------------------------------------
# Analysis


@dataclass(frozen=True)
class BinStat:
    lo: float
    hi: float
    count: int
    median: Union[float, None]
    q25: Union[float, None]
    q75: Union[float, None]


def _median(ordered: Sequence[float]) -> float:
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def binned_stats(table: ResultTable, parameter: str, width: float) -> list[BinStat]:
    """Group scored rows by floor(value / width) and summarize robustness.

    Medians use the midpoint-of-two rule for even counts; quartiles are the
    medians of the lower and upper halves (the middle element belongs to
    both halves when the count is odd).  Interior empty bins are reported
    with count 0 and no statistics.
    """
    if width <= 0 or not math.isfinite(width):
        raise ValueError("bin width must be positive and finite")
    if parameter not in table.parameters:
        raise ValueError(f"unknown parameter {parameter!r}")
    pairs = []
    for row in table.rows:
        if row.rho is None or parameter not in row.features:
            continue
        value = row.features[parameter]
        if isinstance(value, str):
            raise ValueError(f"parameter {parameter!r} is not numeric; no bin ordering exists")
        pairs.append((value, row.rho))
    if not pairs:
        return []
    groups: dict[int, list[float]] = {}
    for value, rho in pairs:
        groups.setdefault(math.floor(value / width), []).append(rho)
    lo_idx = min(groups)
    hi_idx = max(groups)
    out = []
    for idx in range(lo_idx, hi_idx + 1):
        rhos = sorted(groups.get(idx, ()))
        if rhos:
            n = len(rhos)
            lower = rhos[: (n + 1) // 2]
            upper = rhos[n // 2 :]
            stat = BinStat(idx * width, (idx + 1) * width, n, _median(rhos), _median(lower), _median(upper))
        else:
            stat = BinStat(idx * width, (idx + 1) * width, 0, None, None, None)
        out.append(stat)
    return out


def filter_counterexamples(table: ResultTable) -> list[FeatureVector]:
    """Falsified rows as FeatureVectors, worst (lowest robustness) first."""
    fal = [row for row in table.rows if row.verdict is Verdict.FALSIFIED]
    fal.sort(key=lambda row: row.rho)
    sampler_name = str(table.meta.get("sampler", "unknown"))
    seed = int(table.meta.get("seed", 0))
    return [
        FeatureVector(dict(row.features), Provenance(sampler_name, row.episode_id, seed))
        for row in fal
    ]


_OVERRIDES = (None, "ground-truth", "no-shadow")


def replay(
    table: ResultTable,
    override: Union[str, None] = None,
    rows: Union[Sequence[ResultRow], None] = None,
    profile: Union[str, Path, FaultProfile, None] = None,
    gains: Union[ControllerGains, None] = None,
    table_path: Union[str, Path, None] = None,
) -> ResultTable:
    """Re-run recorded episodes (by default the counterexamples) exactly.

    No re-sampling happens: each selected row's features and noise seed are
    reused verbatim, so a replay without an override reproduces the original
    robustness values bit for bit.  ``override`` is either ``ground-truth``
    (swap perception for the oracle) or ``no-shadow`` (drop the rule named
    ``shadow`` from the fault profile).  Runs on the built-in simulator.
    """
    if override not in _OVERRIDES:
        raise ValueError(f"unknown override {override!r}, expected one of {_OVERRIDES[1:]}")
    meta = table.meta
    if "duration" not in meta or "period" not in meta:
        raise ValueError("table metadata lacks episode duration/period; cannot replay")
    duration = float(meta["duration"])
    period = float(meta["period"])
    base_modes = dict(meta.get("modes", {"perception": "stub"}))
    if override == "ground-truth":
        base_modes["perception"] = "ground-truth"
    elif override == "no-shadow":
        disabled = set(base_modes.get("disable_rules", ()))
        disabled.add("shadow")
        base_modes["disable_rules"] = sorted(disabled)
    if isinstance(profile, FaultProfile):
        loaded = profile
    elif profile is not None:
        loaded = FaultProfile.load(profile)
    elif meta.get("profile"):
        loaded = FaultProfile.load(meta["profile"])
    else:
        loaded = default_profile()
    runner = make_runner(loaded, gains if gains is not None else ControllerGains())
    formula = _formula_from_meta(meta)
    selected = list(rows) if rows is not None else [r for r in table.rows if r.verdict is Verdict.FALSIFIED]
    out_meta = dict(meta)
    out_meta["modes"] = dict(base_modes)
    out_meta["replayed_from"] = meta.get("scenario")
    out_meta["override"] = override
    out = ResultTable(out_meta)
    writer = TableWriter(table_path, out_meta) if table_path else None
    try:
        for row in selected:
            t0 = time.perf_counter()
            modes = dict(base_modes)
            modes["seed"] = row.seed
            tc = TestConfig(
                episode_id=row.episode_id,
                features=dict(row.features),
                duration=duration,
                period=period,
                modes=modes,
            )
            try:
                trace = run_in_process(tc, runner)
            except (SimulatorError, ProtocolError):
                wall = (time.perf_counter() - t0) * 1000.0
                out_row = ResultRow(row.episode_id, dict(row.features), None, Verdict.ERROR, row.seed, wall)
            else:
                rho = robustness(formula, trace)
                verdict = Verdict.FALSIFIED if rho <= 0 else Verdict.SATISFIED
                wall = (time.perf_counter() - t0) * 1000.0
                out_row = ResultRow(row.episode_id, dict(row.features), rho, verdict, row.seed, wall)
            out.append(out_row)
            if writer is not None:
                writer.append(out_row)
    finally:
        if writer is not None:
            writer.close()
    return out


def _formula_from_meta(meta: Mapping) -> Formula:
    spec = meta.get("spec")
    if not spec:
        raise ValueError("table metadata lacks the specification; cannot score a replay")
    path = Path(str(spec))
    if path.exists():
        return parse_spec_file(path)
    return parse_spec(str(spec))


# ---------------------------------------------------------------------------
# Export


def export_training_configs(
    program: ScenarioProgram,
    n: int,
    seed: int = 0,
    out_path: Union[str, Path, None] = None,
    distribution: Union[CrossEntropySampler, None] = None,
    max_rejects: int = 1000,
) -> list[FeatureVector]:
    """Draw n full configurations for a training-data hand-off.

    External parameters come from the learned cross-entropy distribution
    when one is given, otherwise uniformly from their declared domains; the
    scenario's own distributions fill in the rest.  Aborts when almost
    everything (>99%) is rejected, since the output would no longer
    represent the scenario.
    """
    if n < 1:
        raise ValueError("need at least one configuration")
    rng = np.random.default_rng(seed)
    externals = program.externals()
    sampler_name = "scenario"
    if distribution is not None:
        sampler_name = "ce"
        if len(distribution.domain.dims) != len(externals):
            raise ValueError("distribution dimensionality does not match the scenario's externals")
    vectors: list[FeatureVector] = []
    attempts = 0
    rejects = 0
    limit = max(1000, 100 * n)
    while len(vectors) < n:
        attempts += 1
        if attempts > limit or (attempts >= 100 and rejects / attempts > 0.99):
            raise RuntimeError(
                f"aborting export: {rejects} of {attempts} draws rejected; "
                "the scenario's constraints are (nearly) unsatisfiable"
            )
        external = None
        if externals:
            if distribution is not None:
                point = distribution.next_point()
                external = dict(zip([name for name, _ in externals], point))
            else:
                external = {}
                for name, domain in externals:
                    if isinstance(domain, ContinuousDomain):
                        external[name] = domain.lo + (domain.hi - domain.lo) * rng.random()
                    else:
                        external[name] = domain.values[int(rng.integers(len(domain.values)))]
        vector = sample_scenario(
            program,
            external=external,
            rng=rng,
            max_rejects=max_rejects,
            provenance=Provenance(sampler_name, len(vectors), seed),
        )
        if vector is REJECTED:
            rejects += 1
            continue
        vectors.append(vector)
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            for vector in vectors:
                prov = vector.provenance
                fh.write(
                    json.dumps(
                        {
                            "features": dict(vector),
                            "provenance": {"sampler": prov.sampler, "index": prov.index, "seed": prov.seed},
                        },
                        allow_nan=False,
                        separators=(",", ":"),
                    )
                    + "\n"
                )
    return vectors


def export_table(table: ResultTable, format: str, path: Union[str, Path]) -> None:
    if format == "csv":
        table.to_csv(path)
    elif format == "jsonl":
        table.to_jsonl(path)
    else:
        raise ValueError(f"unknown export format {format!r}, expected 'csv' or 'jsonl'")


# ---------------------------------------------------------------------------
# Plotting


def rho_scatter_svg(
    tables: Union[ResultTable, Sequence[tuple[str, ResultTable]]],
    parameter: str,
    bin_width: float,
    width: int = 640,
    height: int = 400,
) -> str:
    """Robustness against one parameter: scatter dots plus one median
    polyline per table.  Returns the SVG document as a string."""
    if isinstance(tables, ResultTable):
        series = [("campaign", tables)]
    else:
        series = list(tables)
    if not series:
        raise ValueError("nothing to plot")
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"]
    points = []
    for _, table in series:
        for row in table.rows:
            if row.rho is None or parameter not in row.features:
                continue
            value = row.features[parameter]
            if isinstance(value, str):
                raise ValueError(f"parameter {parameter!r} is not numeric")
            points.append((value, row.rho))
    if not points:
        raise ValueError("no scored rows to plot")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys + [0.0]), max(ys + [0.0])
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    margin = 40.0

    def sx(x: float) -> float:
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(y: float) -> float:
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{sy(0.0):.2f}" x2="{width - margin}" y2="{sy(0.0):.2f}" '
        'stroke="#999" stroke-dasharray="4 3"/>',
    ]
    for k, (label, table) in enumerate(series):
        color = palette[k % len(palette)]
        for row in table.rows:
            if row.rho is None or parameter not in row.features:
                continue
            parts.append(
                f'<circle cx="{sx(row.features[parameter]):.2f}" cy="{sy(row.rho):.2f}" '
                f'r="2" fill="{color}" fill-opacity="0.35"/>'
            )
        stats = [b for b in binned_stats(table, parameter, bin_width) if b.median is not None]
        if stats:
            coords = " ".join(
                f"{sx((b.lo + b.hi) / 2.0):.2f},{sy(b.median):.2f}" for b in stats
            )
            parts.append(
                f'<polyline class="median" points="{coords}" fill="none" '
                f'stroke="{color}" stroke-width="2"><title>{label}</title></polyline>'
            )
    parts.append(
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{parameter}</text>'
    )
    parts.append(
        f'<text x="12" y="{height / 2:.0f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 12 {height / 2:.0f})">robustness</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts)
