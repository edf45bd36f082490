"""Subcommand behavior and exit codes via main() called in-process."""

import json
from pathlib import Path

import pytest

from falsify.cli import main
from falsify.engine import ResultTable, Verdict

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def run_cli(*argv):
    return main([str(a) for a in argv])


def base_run_args(tmp_path, **kw):
    args = [
        "run",
        "--scenario", SCENARIOS / "falsification.scn",
        "--spec", SCENARIOS / "reach_and_hold.mtl",
        "--episodes", "40",
        "--seed", "3",
        "--table", tmp_path / "t.jsonl",
    ]
    for key, value in kw.items():
        args.append(f"--{key.replace('_', '-')}")
        if value is not True:
            args.append(value)
    return args


class TestRun:
    def test_falsifying_campaign_exits_two(self, tmp_path, capsys):
        code = run_cli(*base_run_args(tmp_path, episodes="200"))
        assert code == 2
        out = capsys.readouterr().out
        assert "Falsified" in out
        assert (tmp_path / "t.jsonl").exists()

    def test_clean_campaign_exits_zero(self, tmp_path, capsys):
        code = run_cli(*base_run_args(tmp_path, perception="ground-truth"))
        assert code == 0
        out = capsys.readouterr().out
        assert "Satisfied: 40" in out
        assert "off runway: 0/40" in out

    def test_table_is_loadable(self, tmp_path):
        run_cli(*base_run_args(tmp_path))
        table = ResultTable.from_jsonl(tmp_path / "t.jsonl")
        assert len(table) == 40
        assert table.meta["seed"] == 3

    def test_missing_scenario_exits_one(self, tmp_path, capsys):
        code = run_cli(
            "run",
            "--scenario", tmp_path / "nope.scn",
            "--spec", SCENARIOS / "reach_and_hold.mtl",
        )
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_usage_error_exits_one_not_two(self, capsys):
        code = run_cli("run", "--scenario")
        assert code == 1

    def test_unknown_subcommand_exits_one(self, capsys):
        assert run_cli("prove") == 1

    def test_ce_run_saves_sampler_state(self, tmp_path, capsys):
        code = run_cli(
            *base_run_args(tmp_path, sampler="ce", episodes="100"),
            "--ce-batch", "25",
            "--sampler-state", tmp_path / "dist.json",
        )
        assert code in (0, 2)
        state = json.loads((tmp_path / "dist.json").read_text())
        assert "probs" in state

    def test_sampler_state_without_ce_is_an_error(self, tmp_path, capsys):
        code = run_cli(*base_run_args(tmp_path), "--sampler-state", tmp_path / "x.json")
        assert code == 1

    def test_stop_on_falsify_stops_early(self, tmp_path, capsys):
        scn = tmp_path / "pinned.scn"
        scn.write_text(
            "start_s = Uniform(1400, 1480)\nstart_cte = Constant(0.0)\n"
            "start_he = Constant(0.0)\ntime_of_day = Constant(9.0)\n"
            "clouds = Constant(scattered)\nrain = Constant(0.0)\n"
            "meta duration = 30.0\nmeta period = 0.1\n"
        )
        code = run_cli(
            "run",
            "--scenario", scn,
            "--spec", SCENARIOS / "reach_and_hold.mtl",
            "--episodes", "50",
            "--stop-on-falsify",
            "--table", tmp_path / "t.jsonl",
        )
        assert code == 2
        table = ResultTable.from_jsonl(tmp_path / "t.jsonl")
        assert len(table) < 50
        assert table.rows[-1].verdict is Verdict.FALSIFIED


class TestAnalyze:
    def test_prints_bins(self, tmp_path, capsys):
        run_cli(*base_run_args(tmp_path, episodes="150"))
        capsys.readouterr()
        code = run_cli("analyze", "--table", tmp_path / "t.jsonl", "--bin-by", "start_s", "--width", "500")
        assert code == 0
        out = capsys.readouterr().out
        assert "median" in out
        assert "[0, 500)" in out

    def test_svg_written(self, tmp_path, capsys):
        run_cli(*base_run_args(tmp_path, episodes="60"))
        svg = tmp_path / "plot.svg"
        code = run_cli(
            "analyze", "--table", tmp_path / "t.jsonl",
            "--bin-by", "start_s", "--width", "500", "--svg", svg,
        )
        assert code == 0
        assert svg.read_text().count("<polyline") == 1

    def test_unknown_parameter_exits_one(self, tmp_path, capsys):
        run_cli(*base_run_args(tmp_path))
        assert run_cli("analyze", "--table", tmp_path / "t.jsonl", "--bin-by", "zz", "--width", "1") == 1


class TestReplay:
    def test_ground_truth_override_clears_everything(self, tmp_path, capsys):
        run_cli(*base_run_args(tmp_path, episodes="200"))
        capsys.readouterr()
        out_table = tmp_path / "replay.jsonl"
        code = run_cli(
            "replay", "--table", tmp_path / "t.jsonl",
            "--override", "ground-truth", "--out", out_table,
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "Satisfied" in text
        replayed = ResultTable.from_jsonl(out_table)
        assert replayed.rows
        assert all(row.verdict is Verdict.SATISFIED for row in replayed.rows)

    def test_exact_replay_still_falsifies(self, tmp_path, capsys):
        run_cli(*base_run_args(tmp_path, episodes="200"))
        code = run_cli("replay", "--table", tmp_path / "t.jsonl")
        assert code == 2

    def test_bad_override_exits_one(self, tmp_path, capsys):
        run_cli(*base_run_args(tmp_path))
        assert run_cli("replay", "--table", tmp_path / "t.jsonl", "--override", "no-gravity") == 1


class TestExportConfigs:
    def test_writes_requested_count(self, tmp_path, capsys):
        out = tmp_path / "configs.jsonl"
        code = run_cli(
            "export-configs", "--scenario", SCENARIOS / "specialized.scn",
            "-n", "50", "--seed", "4", "--out", out,
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 50
        assert "start_s" in json.loads(lines[0])["features"]

    def test_from_distribution(self, tmp_path, capsys):
        run_cli(
            *base_run_args(tmp_path, sampler="ce", episodes="100"),
            "--ce-batch", "25",
            "--sampler-state", tmp_path / "dist.json",
        )
        out = tmp_path / "configs.jsonl"
        code = run_cli(
            "export-configs", "--scenario", SCENARIOS / "falsification.scn",
            "-n", "20", "--out", out,
            "--from-distribution", tmp_path / "dist.json",
        )
        assert code == 0
        assert len(out.read_text().splitlines()) == 20


class TestReportDistribution:
    def test_csv_report(self, tmp_path, capsys):
        run_cli(
            *base_run_args(tmp_path, sampler="ce", episodes="50"),
            "--ce-batch", "25",
            "--sampler-state", tmp_path / "dist.json",
        )
        capsys.readouterr()
        code = run_cli("report-distribution", "--sampler-state", tmp_path / "dist.json")
        assert code == 0
        out = capsys.readouterr().out
        assert out.startswith("dimension,bucket_lo,bucket_hi,probability")
        assert "start_s" in out

    def test_json_report_to_file(self, tmp_path, capsys):
        run_cli(
            *base_run_args(tmp_path, sampler="ce", episodes="50"),
            "--ce-batch", "25",
            "--sampler-state", tmp_path / "dist.json",
        )
        out = tmp_path / "report.json"
        code = run_cli(
            "report-distribution", "--sampler-state", tmp_path / "dist.json",
            "--format", "json", "--out", out,
        )
        assert code == 0
        rows = json.loads(out.read_text())
        assert any(r["dimension"] == "time_of_day" for r in rows)

    def test_missing_state_exits_one(self, tmp_path, capsys):
        assert run_cli("report-distribution", "--sampler-state", tmp_path / "none.json") == 1
