import csv
import json
from pathlib import Path

import pytest

from coopra.cli import METRIC_COLUMNS, SWEEP_HEADER, main, parse_values
from coopra.model import ConfigError

DEFAULT = str(Path(__file__).resolve().parents[1] / "configs" / "default.cfg")
FAST = ["--set", "slots=1500"]


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2
    assert "config not found" in capsys.readouterr().err


def test_invalid_value_is_usage_error(tmp_path, capsys):
    assert main(["run", "--config", DEFAULT, "--set", "p=1.5", "--out", str(tmp_path)]) == 2
    assert "p" in capsys.readouterr().err
    assert main(["run", "--config", DEFAULT, "--set", "novalue", "--out", str(tmp_path)]) == 2


def test_run_default_config(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", DEFAULT, *FAST, "--out", str(out), "--dump-topology", "--trace", "--events"]) == 0
    payload = json.loads((out / "metrics.json").read_text())
    assert payload["policy"] == "coalition"
    assert set(payload["metrics"]) >= {"fail_ratio", "energy_per_mtd", "mean_queue", "utility"}
    members = sorted(m for g in payload["partition"] for m in g)
    assert members == list(range(payload["config"]["M"]))
    for name in ("topology.csv", "trace.csv", "events.csv"):
        assert (out / name).stat().st_size > 0


def test_overrides_round_trip_into_echoed_config(tmp_path):
    out = tmp_path / "o"
    args = ["run", "--config", DEFAULT, *FAST, "--set", "M=50", "--set", "mode=selfish", "--seed", "7",
            "--out", str(out)]
    assert main(args) == 0
    cfg = json.loads((out / "metrics.json").read_text())["config"]
    assert cfg["M"] == 50 and cfg["mode"] == "selfish" and cfg["rng_seed"] == 7


def test_run_is_byte_identical_on_rerun(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--config", DEFAULT, *FAST, "--set", "M=40", "--trace", "--out", str(tmp_path / name)]) == 0
    for f in ("metrics.json", "trace.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_fixed_policy_from_assignment_file(tmp_path):
    part = tmp_path / "part.csv"
    part.write_text("mtd,coalition\n0,0\n1,0\n2,1\n3,1\n4,2\n")
    out = tmp_path / "f"
    assert main(["run", "--config", DEFAULT, *FAST, "--set", "M=5", "--set", "policy=fixed",
                 "--assignment", str(part), "--out", str(out)]) == 0
    assert json.loads((out / "metrics.json").read_text())["partition"] == [[0, 1], [2, 3], [4]]


def test_sweep_rows_units_and_determinism(tmp_path):
    args = ["sweep", "--config", DEFAULT, *FAST, "--param", "M", "--values", "20,40,60", "--seeds", "3",
            "--policies", "noncooperative,coalition"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    rows = list(csv.reader(open(tmp_path / "a" / "sweep.csv")))
    assert rows[0] == SWEEP_HEADER
    assert len(rows) == 1 + 3 * 3 * 2
    assert all(r[4] == "ok" for r in rows[1:])
    assert all("[" in h and h.endswith("]") for h in METRIC_COLUMNS.values())
    assert {(r[1], r[3]) for r in rows[1:]} == {(m, p) for m in ("20", "40", "60")
                                                for p in ("noncooperative", "coalition")}
    assert main([*args, "--jobs", "2", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_preference_sweep(tmp_path):
    assert main(["sweep", "--config", DEFAULT, *FAST, "--set", "M=30", "--param", "alpha,beta",
                 "--values", "0.9:0.1,0.1:0.9", "--policies", "coalition", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert [r["value"] for r in rows] == ["0.9:0.1", "0.1:0.9"]
    assert all(float(r["mean_coalition_size [devices]"]) >= 1.0 for r in rows)


def test_sweep_with_optimal_reports_price_of_anarchy(tmp_path):
    assert main(["sweep", "--config", DEFAULT, *FAST, "--set", "M=6", "--param", "delta", "--values", "0.5",
                 "--policies", "coalition,optimal", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    coal = next(r for r in rows if r["policy"] == "coalition")
    assert float(coal["price_of_anarchy [1]"]) > 0


def test_sweep_bad_values(tmp_path):
    assert main(["sweep", "--config", DEFAULT, "--param", "alpha,beta", "--values", "0.5",
                 "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--config", DEFAULT, "--param", "M", "--values", "10", "--policies", "bogus",
                 "--out", str(tmp_path)]) == 2


def test_parse_values():
    assert parse_values("M", "1,2") == [{"M": "1"}, {"M": "2"}]
    assert parse_values("alpha,beta", "0.9:0.1") == [{"alpha": "0.9", "beta": "0.1"}]
    with pytest.raises(ConfigError):
        parse_values("alpha,beta", "0.9")
