"""Command-line front end.

Subcommands mirror the library operations: ``run`` executes a campaign,
``analyze`` bins a stored table, ``replay`` re-runs counterexamples under an
intervention, ``export-configs`` draws training configurations, and
``report-distribution`` dumps a learned cross-entropy distribution.

Exit codes: 0 the command completed (and, for run/replay, nothing was
falsified), 2 at least one episode falsified the specification (useful for
CI gating), 1 anything went wrong.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .engine import (
    CampaignConfig,
    ResultTable,
    Verdict,
    binned_stats,
    export_training_configs,
    replay,
    rho_scatter_svg,
    run_campaign,
)
from .samplers import CrossEntropySampler, distribution_report
from .scenario import parse_scenario_file

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FALSIFIED = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; 2 means 'falsified' here, so
    route usage problems to the generic error code instead."""

    def error(self, message):
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _env_timeout() -> float:
    raw = os.environ.get("FALSIFY_EPISODE_TIMEOUT")
    return float(raw) if raw else 60.0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="falsify", description="Simulation-driven falsification toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run_p = sub.add_parser("run", help="run a falsification campaign")
    run_p.add_argument("--scenario", required=True, help="scenario program (.scn)")
    run_p.add_argument("--spec", required=True, help="specification file (.mtl)")
    run_p.add_argument("--sampler", choices=("uniform", "halton", "ce"), default="uniform")
    run_p.add_argument("--episodes", type=int, default=100)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--stop-on-falsify", action="store_true")
    run_p.add_argument(
        "--sim",
        default="builtin",
        help="'builtin', 'tcp:HOST:PORT' to listen for an external simulator, "
        "or bare 'tcp' to take the bind address from $FALSIFY_BIND",
    )
    run_p.add_argument("--parallel", type=int, default=1, metavar="K")
    run_p.add_argument("--table", default="results.jsonl", help="where to write the JSONL table")
    run_p.add_argument("--perception", choices=("stub", "ground-truth"), default="stub")
    run_p.add_argument(
        "--disable-rule",
        action="append",
        default=[],
        metavar="NAME",
        help="disable a fault-profile rule for the whole campaign (repeatable)",
    )
    run_p.add_argument("--profile", help="fault profile JSON (default: bundled profile)")
    run_p.add_argument("--duration", type=float, help="override the scenario's episode duration")
    run_p.add_argument("--period", type=float, help="override the scenario's sample period")
    run_p.add_argument("--scramble", action="store_true", help="scrambled Halton")
    run_p.add_argument("--ce-buckets", type=int, metavar="B")
    run_p.add_argument("--ce-batch", type=int, metavar="N")
    run_p.add_argument("--ce-elite", type=float, metavar="G")
    run_p.add_argument("--ce-smoothing", type=float, metavar="A")
    run_p.add_argument(
        "--sampler-state",
        metavar="PATH",
        help="where to save the learned distribution (ce only; "
        "default: <table>.sampler.json)",
    )
    run_p.add_argument(
        "--timeout",
        type=float,
        default=None,
        help="per-episode wall-clock budget in seconds "
        "(default: $FALSIFY_EPISODE_TIMEOUT or 60)",
    )
    run_p.add_argument(
        "--keep-alive",
        action="store_true",
        default=os.environ.get("FALSIFY_KEEP_ALIVE") == "1",
        help="reuse one simulator connection for many episodes",
    )
    run_p.set_defaults(func=cmd_run)

    an_p = sub.add_parser("analyze", help="binned robustness statistics from a stored table")
    an_p.add_argument("--table", required=True)
    an_p.add_argument("--bin-by", required=True, metavar="PARAM")
    an_p.add_argument("--width", required=True, type=float)
    an_p.add_argument("--svg", metavar="PATH", help="also write a scatter/median plot")
    an_p.set_defaults(func=cmd_analyze)

    re_p = sub.add_parser("replay", help="re-run a table's counterexamples")
    re_p.add_argument("--table", required=True)
    re_p.add_argument("--override", choices=("ground-truth", "no-shadow"), default=None)
    re_p.add_argument("--out", metavar="PATH", help="write the replay table here (JSONL)")
    re_p.add_argument("--profile", help="fault profile JSON (default: the table's)")
    re_p.set_defaults(func=cmd_replay)

    ex_p = sub.add_parser("export-configs", help="draw training configurations from a scenario")
    ex_p.add_argument("--scenario", required=True)
    ex_p.add_argument("-n", "--count", required=True, type=int, dest="count")
    ex_p.add_argument("--seed", type=int, default=0)
    ex_p.add_argument("--out", required=True)
    ex_p.add_argument(
        "--from-distribution",
        metavar="STATE",
        help="draw external parameters from a saved cross-entropy state "
        "instead of uniformly",
    )
    ex_p.set_defaults(func=cmd_export_configs)

    rd_p = sub.add_parser("report-distribution", help="dump a learned sampler distribution")
    rd_p.add_argument("--sampler-state", required=True, metavar="STATE")
    rd_p.add_argument("--format", choices=("csv", "json"), default="csv")
    rd_p.add_argument("--out", metavar="PATH", help="write here instead of stdout")
    rd_p.set_defaults(func=cmd_report_distribution)

    return parser


def cmd_run(args) -> int:
    sim = args.sim
    if sim == "tcp":
        bind = os.environ.get("FALSIFY_BIND")
        if not bind:
            raise ValueError("--sim tcp needs $FALSIFY_BIND=HOST:PORT (or use --sim tcp:HOST:PORT)")
        sim = f"tcp:{bind}"
    options: dict[str, object] = {}
    if args.scramble:
        options["scramble"] = True
    for key, value in (
        ("buckets", args.ce_buckets),
        ("batch_size", args.ce_batch),
        ("elite_fraction", args.ce_elite),
        ("smoothing", args.ce_smoothing),
    ):
        if value is not None:
            options[key] = value
    state_out = None
    if args.sampler == "ce":
        state_out = args.sampler_state or str(Path(args.table).with_suffix(".sampler.json"))
    elif args.sampler_state:
        raise ValueError("--sampler-state only applies to --sampler ce")
    config = CampaignConfig(
        scenario=args.scenario,
        spec=args.spec,
        sampler=args.sampler,
        episodes=args.episodes,
        seed=args.seed,
        stop_on_falsify=args.stop_on_falsify,
        parallelism=args.parallel,
        sim=sim,
        perception=args.perception,
        disable_rules=tuple(args.disable_rule),
        profile=args.profile,
        duration=args.duration,
        period=args.period,
        sampler_options=options,
        episode_timeout=args.timeout if args.timeout is not None else _env_timeout(),
        keep_alive=args.keep_alive,
        table_path=args.table,
        sampler_state_out=state_out,
    )
    table = run_campaign(config)
    counts = table.counts()
    print(f"episodes: {len(table)}")
    for verdict in Verdict:
        if counts.get(verdict.value):
            print(f"  {verdict.value}: {counts[verdict.value]}")
    scored = [row for row in table.rows if row.rho is not None]
    if scored:
        worst = min(scored, key=lambda row: row.rho)
        print(f"worst robustness: {worst.rho:.6g} (episode {worst.episode_id})")
    left = table.meta.get("off_runway_episodes")
    if left is not None and scored:
        print(f"off runway: {left}/{len(scored)} ({left / len(scored):.1%})")
    print(f"table: {args.table}")
    if state_out and Path(state_out).exists():
        print(f"sampler state: {state_out}")
    return EXIT_FALSIFIED if counts.get("Falsified") else EXIT_OK


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.4g}"


def cmd_analyze(args) -> int:
    table = ResultTable.from_jsonl(args.table)
    stats = binned_stats(table, args.bin_by, args.width)
    print(f"{len(table)} rows; binned by {args.bin_by}, width {args.width:g}")
    print(f"{'bin':>22}  {'count':>5}  {'median':>10}  {'q25':>10}  {'q75':>10}")
    for stat in stats:
        span = f"[{stat.lo:g}, {stat.hi:g})"
        print(f"{span:>22}  {stat.count:>5}  {_fmt(stat.median):>10}  {_fmt(stat.q25):>10}  {_fmt(stat.q75):>10}")
    if args.svg:
        Path(args.svg).write_text(rho_scatter_svg(table, args.bin_by, args.width))
        print(f"plot: {args.svg}")
    return EXIT_OK


def cmd_replay(args) -> int:
    table = ResultTable.from_jsonl(args.table)
    replayed = replay(table, args.override, profile=args.profile, table_path=args.out)
    before = [row for row in table.rows if row.verdict is Verdict.FALSIFIED]
    print(f"replayed {len(replayed.rows)} counterexamples"
          + (f" with override {args.override}" if args.override else " without override"))
    counts = replayed.counts()
    for verdict in Verdict:
        if counts.get(verdict.value):
            print(f"  {verdict.value}: {counts[verdict.value]}")
    if before and replayed.rows:
        med_before = _median_of(sorted(row.rho for row in before))
        scored = sorted(row.rho for row in replayed.rows if row.rho is not None)
        if scored:
            print(f"median robustness: {med_before:.6g} -> {_median_of(scored):.6g}")
    if args.out:
        print(f"table: {args.out}")
    return EXIT_FALSIFIED if counts.get("Falsified") else EXIT_OK


def _median_of(ordered):
    n = len(ordered)
    if n % 2:
        return ordered[n // 2]
    return (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0


def cmd_export_configs(args) -> int:
    program = parse_scenario_file(args.scenario)
    distribution = None
    if args.from_distribution:
        distribution = CrossEntropySampler.from_json(Path(args.from_distribution).read_text(), seed=args.seed)
    export_training_configs(
        program,
        args.count,
        seed=args.seed,
        out_path=args.out,
        distribution=distribution,
    )
    print(f"wrote {args.count} configurations to {args.out}")
    return EXIT_OK


def cmd_report_distribution(args) -> int:
    sampler = CrossEntropySampler.from_json(Path(args.sampler_state).read_text())
    report = distribution_report(sampler)
    text = report.to_csv() if args.format == "csv" else report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"report: {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_ERROR
    except Exception as err:  # surfaced as a message, not a traceback
        print(f"falsify: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
