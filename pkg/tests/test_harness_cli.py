import csv
import json
import math

import pytest

from lostsales import cli, harness
from lostsales.harness import (
    ROW_FIELDS,
    Cell,
    Settings,
    cell_hash,
    derive_seed,
    read_rows,
    run_cells,
    suite_cells,
    table_cells,
)
from lostsales.policies import BaseStock, CappedBaseStock, FixedP3

FAST = Settings(seed=7, opt_horizon=800, eval_horizon=2000, policies=("BS", "CO"))


def _cells():
    return [Cell("t", "poisson", 5.0, math.nan, 9, 1.0, 2),
            Cell("t", "continuous", 10.0, 0.5, 4, 1.0, 1)]


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSuites:
    def test_cell_counts(self):
        assert len(suite_cells("zipkin")) == 32
        assert len(suite_cells("xin")) == 24
        assert len(suite_cells("grid", "desk")) == 48
        assert len(suite_cells("grid", "full")) == 336
        assert len(suite_cells("sensitivity")) == 12
        assert len(table_cells()) == 144
        with pytest.raises(ValueError):
            suite_cells("nope")

    def test_seeds_and_hashes(self):
        c = _cells()[0]
        assert derive_seed(1, "a") == derive_seed(1, "a") != derive_seed(2, "a")
        assert cell_hash(c, FAST) == cell_hash(c, Settings(**{**FAST.__dict__, "workers": 4}))
        assert cell_hash(c, FAST) != cell_hash(c, Settings(**{**FAST.__dict__, "seed": 8}))


class TestRunner:
    def test_rows_and_manifest(self, tmp_path):
        out = tmp_path / "r.csv"
        summary = run_cells(_cells(), FAST, str(out))
        assert summary == dict(cells=2, skipped=0, ran=2, failed=0)
        rows = _read(out)
        assert len(rows) == 4
        assert list(rows[0]) == ROW_FIELDS
        assert all(r["status"] == "ok" for r in rows)
        # both policies of a cell share the evaluation path
        assert len({r["eval_seed"] for r in rows[:2]}) == 1
        man = json.loads((tmp_path / "r.manifest.json").read_text())
        assert man["n_cells"] == 2 and man["summary"]["ran"] == 2

    def test_resume_and_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cells(_cells(), FAST, str(a))
        first = a.read_text()
        again = run_cells(_cells(), FAST, str(a))
        assert again["skipped"] == 2 and again["ran"] == 0
        assert a.read_text() == first
        run_cells(_cells(), FAST, str(b))
        assert b.read_text() == first

    def test_failed_cells_are_recorded_and_retried(self, tmp_path):
        out = tmp_path / "f.csv"
        bad = Cell("t", "continuous", 10.0, 3.0, 4, 1.0, 1, ("SE",))
        summary = run_cells([bad], FAST, str(out))
        assert summary["failed"] == 1
        rows = _read(out)
        assert rows[0]["status"] == "error" and "InfeasibleFit" in rows[0]["error"]
        assert run_cells([bad], FAST, str(out))["ran"] == 1

    def test_family_spread(self, tmp_path):
        out = tmp_path / "s.csv"
        cell = Cell("t", "continuous", 10.0, 0.5, 4, 1.0, 1, ("SE", "ME"))
        run_cells([cell], FAST, str(out))
        rows = read_rows(str(out))
        assert len(rows) == 4
        assert {r["family"] for r in rows} == {"SE", "ME"}
        assert all(r["cost_spread"] >= 0 for r in rows)

    def test_schema_mismatch(self, tmp_path):
        out = tmp_path / "x.csv"
        out.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            run_cells(_cells(), FAST, str(out))


class TestCli:
    def test_parse_policy(self):
        assert cli.parse_policy("bs:12") == BaseStock(12.0)
        assert cli.parse_policy("CBS:12:3") == CappedBaseStock(12.0, 3.0)
        assert cli.parse_policy("FP3:0.9") == FixedP3(0.9)
        with pytest.raises(Exception):
            cli.parse_policy("CBS:1")

    def test_config(self, tmp_path):
        f = tmp_path / "run.ini"
        f.write_text("[run]\nseed = 5\nhorizon = 3000 ; eval\npolicies = BS,CO\n")
        assert cli.load_config(str(f)) == {"seed": 5, "horizon": 3000, "policies": "BS,CO"}
        f.write_text("[run]\ncolour = red\n")
        with pytest.raises(SystemExit):
            cli.load_config(str(f))

    def test_fit_and_eval(self, capsys):
        assert cli.main(["fit", "--mean", "10", "--cv", "0.5", "--demand", "SE"]) == 0
        assert json.loads(capsys.readouterr().out)["family"] == "ShiftedExponential"
        assert cli.main(["eval", "--mean", "10", "--cv", "0.5", "--policy", "CO:8.85",
                         "--horizon", "2000", "--warmup", "100"]) == 0
        stats = json.loads(capsys.readouterr().out)["stats"]
        assert stats["periods"] == 2000

    def test_optimize(self, capsys):
        assert cli.main(["optimize", "--demand", "poisson", "--mean", "5", "--policy", "bs",
                         "--horizon", "1000", "--opt-horizon", "500", "--warmup", "100"]) == 0
        assert "BaseStock" in json.loads(capsys.readouterr().out)["policy"]

    def test_suite_exit_codes(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[run]\nhorizon = 500\nopt_horizon = 300\npolicies = BS\n")
        out = tmp_path / "z.csv"
        assert cli.main(["--config", str(cfg), "suite", "zipkin", "--out", str(out)]) == 0
        rows = _read(out)
        assert len(rows) == 32 and {r["policy"] for r in rows} == {"BS"}
        assert rows[0]["eval_horizon"] == "500"
        monkeypatch.setattr(cli, "run_suite", lambda *a, **k: dict(failed=1))
        assert cli.main(["suite", "xin", "--out", str(out)]) == 2

    def test_unknown_policy_subset(self):
        with pytest.raises(SystemExit):
            cli.main(["suite", "zipkin", "--policies", "XYZ"])

    def test_table(self, tmp_path, monkeypatch):
        out = tmp_path / "t.csv"
        monkeypatch.setattr(harness, "optimize_fp3", lambda opt, **k: (0.8, None))
        rc = cli.main(["table", "--cvs", "0.5", "--ps", "4", "--Ls", "1", "--horizon", "500",
                       "--opt-horizon", "300", "--out", str(out)])
        assert rc == 0
        rows = _read(out)
        assert len(rows) == 1 and float(rows[0]["P3*"]) == 0.8
