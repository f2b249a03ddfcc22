import csv
import json

import lanecraft.cli as cli
from lanecraft.scenarios import load_scenario
from lanecraft.simulation import InvariantBreach


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestGen:
    def test_writes_parseable_spec(self, tmp_path, capsys):
        out = tmp_path / "scenario.json"
        code, _, _ = run_cli(capsys, "gen", "--kind", "straight", "--seed", "1", "--out", str(out))
        assert code == 0
        spec = load_scenario(out)
        assert spec.kind == "straight" and spec.seed == 1

    def test_same_seed_byte_identical(self, tmp_path, capsys):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        run_cli(capsys, "gen", "--kind", "curve", "--seed", "5", "--out", str(p1))
        run_cli(capsys, "gen", "--kind", "curve", "--seed", "5", "--out", str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_unknown_kind_exits_2(self, capsys):
        code, _, _ = run_cli(capsys, "gen", "--kind", "warp_zone", "--out", "x.json")
        assert code == 2

    def test_unwritable_path_exits_2(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "gen", "--kind", "straight", "--out", str(tmp_path / "no" / "dir" / "x.json"))
        assert code == 2


class TestRun:
    def test_oracle_straight_reaches_full_route(self, capsys):
        code, out, _ = run_cli(capsys, "run", "--kind", "straight", "--seed", "1", "--mode", "oracle")
        assert code == 0
        record = json.loads(out.strip())
        assert record["rc"] == 1.0
        assert record["infractions"] == []

    def test_seed_batching(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys, "run", "--kind", "straight", "--seeds", "1..3", "--out", str(tmp_path)
        )
        assert code == 0
        records = [json.loads(line) for line in out.strip().splitlines()]
        assert [r["seed"] for r in records] == [1, 2, 3]
        assert (tmp_path / "straight_2_oracle.trace.jsonl").exists()

    def test_no_dlf_blocked_lane_records_infractions(self, capsys):
        code, out, _ = run_cli(capsys, "run", "--kind", "blocked_lane", "--seed", "1", "--no-dlf")
        assert code == 0
        record = json.loads(out.strip())
        assert record["infractions"]

    def test_config_file_defaults(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"kind": "straight", "seeds": "2", "timeout": 30.0}), encoding="utf-8")
        code, out, _ = run_cli(capsys, "run", "--config", str(cfg))
        assert code == 0
        assert json.loads(out.strip())["seed"] == 2

    def test_env_seed_override(self, capsys, monkeypatch):
        monkeypatch.setenv("LANECRAFT_SEED", "9")
        code, out, _ = run_cli(capsys, "run", "--kind", "straight", "--seeds", "1..3")
        assert code == 0
        records = [json.loads(line) for line in out.strip().splitlines()]
        assert [r["seed"] for r in records] == [9]

    def test_invariant_breach_exits_3(self, capsys, monkeypatch):
        def explode(*args, **kwargs):
            raise InvariantBreach("synthetic failure")

        monkeypatch.setattr(cli, "run_episode", explode)
        code, _, err = run_cli(capsys, "run", "--kind", "straight", "--seed", "1")
        assert code == 3
        assert "invariant breach" in err


class TestCheck:
    def test_grad_check_passes(self, capsys):
        code, out, _ = run_cli(capsys, "check", "grad", "--trials", "3")
        assert code == 0
        report = json.loads(out.strip())
        assert report["pass"] is True
        assert {entry["loss"] for entry in report["losses"]} == set(
            ("lane", "point", "edge_bev", "plan", "focal", "smooth_l1", "signal")
        )

    def test_match_check_passes(self, capsys):
        code, out, _ = run_cli(capsys, "check", "match", "--trials", "20")
        assert code == 0
        report = json.loads(out.strip())
        assert report["agreements"] == 20

    def test_fusion_check_passes(self, capsys):
        code, out, _ = run_cli(capsys, "check", "fusion", "--trials", "5")
        assert code == 0
        assert json.loads(out.strip())["max_abs_diff"] < 1e-9

    def test_failure_exits_1_with_case(self, capsys, monkeypatch):
        monkeypatch.setattr(cli, "GRAD_TOLERANCE", 1e-30)
        code, out, _ = run_cli(capsys, "check", "grad", "--trials", "2")
        assert code == 1
        report = json.loads(out.strip())
        assert report["pass"] is False
        assert "failure" in report and "instance" in report["failure"]


class TestBench:
    def test_small_preset_schema(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys, "bench", "--preset", "small", "--ticks", "5", "--out", str(tmp_path)
        )
        assert code == 0
        report = json.loads(out.strip())
        for key in ("median_ms", "p95_ms", "fps", "ticks", "config"):
            assert key in report
        assert report["ticks"] == 5
        assert (tmp_path / "bench.json").exists()
        assert (tmp_path / "bench.csv").exists()
        assert (tmp_path / "latency_hist.png").exists()

    def test_medians_stable_across_runs(self, capsys):
        _, out1, _ = run_cli(capsys, "bench", "--preset", "small", "--ticks", "20")
        _, out2, _ = run_cli(capsys, "bench", "--preset", "small", "--ticks", "20")
        m1 = json.loads(out1.strip())["median_ms"]
        m2 = json.loads(out2.strip())["median_ms"]
        assert abs(m1 - m2) / max(m1, m2) < 0.3


class TestReport:
    def test_writes_csv_and_figures(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys,
            "report",
            "--out",
            str(tmp_path),
            "--kinds",
            "straight,blocked_lane",
            "--seeds",
            "0",
        )
        assert code == 0
        with (tmp_path / "episodes.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert [row["kind"] for row in rows] == ["straight", "blocked_lane"]
        assert float(rows[0]["rc"]) == 1.0
        assert (tmp_path / "episode_straight_0.png").exists()
        assert (tmp_path / "episode_blocked_lane_0.png").exists()
        assert (tmp_path / "summary.png").exists()
        assert json.loads((tmp_path / "summary.json").read_text())["episodes"] == 2

    def test_unknown_kind_exits_2(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "report", "--out", str(tmp_path), "--kinds", "nope")
        assert code == 2


class TestParser:
    def test_missing_subcommand_exits_2(self, capsys):
        assert cli.main([]) == 2

    def test_trajectory_json_contract(self, capsys):
        # stdout of run is line-delimited JSON parseable by stdlib json
        code, out, _ = run_cli(capsys, "run", "--kind", "straight", "--seed", "1", "--timeout", "5")
        assert code == 0
        assert json.loads(out.strip())["kind"] == "straight"
