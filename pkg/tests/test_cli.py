import csv
import json
import subprocess
import sys

import pytest

from couplinglab.cli import ConfigError, apply_overrides, main


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def small(*extra):
    return ["--set", "lattice.side=16", "--set", "plan.replicas=2", "--set", "plan.horizon=12", *extra]


def test_couple_minimal(tmp_path):
    assert main(["couple", "--out", str(tmp_path), *small()]) == 0
    rows = read_rows(tmp_path / "couple.csv")
    assert len(rows) == 13 and rows[0]["t"] == "0"
    meta = json.loads((tmp_path / "couple.json").read_text())
    assert meta["plan"]["R"] == 2 and len(meta["seeds"]) == 2


def test_couple_csv_is_reproducible(tmp_path):
    args = small("--set", "record.radii=[3]", "--set", 'record.cylinders=[{"0": 1}]')
    main(["couple", "--out", str(tmp_path), "--prefix", "a", *args])
    main(["couple", "--out", str(tmp_path), "--prefix", "b", *args])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_couple_trace(tmp_path):
    trace = tmp_path / "events.jsonl"
    assert main(["couple", "--out", str(tmp_path), "--trace", str(trace), *small()]) == 0
    events = [json.loads(line) for line in trace.read_text().splitlines()]
    assert events and all("event" in e for e in events)


def test_unknown_model_exit_1(tmp_path, capsys):
    assert main(["couple", "--out", str(tmp_path), "--set", "model.name=nope"]) == 1
    assert "model.name" in capsys.readouterr().err


def test_open_model_on_torus_rejected(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--set", "model.name=particle_vacancy"]) == 1
    assert "open" in capsys.readouterr().err


def test_bad_override_rejected():
    with pytest.raises(ConfigError):
        apply_overrides({"plan": {}}, ["plan.horizon"])


def test_simulate_and_density(tmp_path):
    assert main(["simulate", "--out", str(tmp_path), *small("--set", "record.radii=[2]")]) == 0
    rows = read_rows(tmp_path / "simulate.csv")
    assert len({r["particles_mean"] for r in rows}) == 1
    assert main(["density", "--out", str(tmp_path), *small("--set", "record.radii=[2, 5]")]) == 0
    rows = read_rows(tmp_path / "density.csv")
    assert len({r["density_full"] for r in rows}) == 1
    assert all(float(r["change_5"]) <= float(r["bound_5"]) for r in rows)


def test_cesaro_command(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"name": "identity"}, "plan": {"replicas": 50},
                               "cesaro": {"N": 3, "cylinders": [{"0": 1}, {"0": 1, "1": 0}]}}))
    assert main(["cesaro", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "cesaro.csv")
    assert len(rows) == 2 and 0 <= float(rows[0]["estimate"]) <= 1


FAIR = "2\n1/2 1/2\n1/2 1/2\n"


def test_exact_fair_chain(tmp_path, capsys):
    (tmp_path / "P.txt").write_text(FAIR)
    assert main(["exact", str(tmp_path / "P.txt"), "--exact", "--out", str(tmp_path)]) == 0
    assert "inequality holds" in capsys.readouterr().out
    report = json.loads((tmp_path / "exact.json").read_text())
    assert len(report["rows"]) == 51
    assert report["rows"][1] == {"t": 1, "tv": 0, "survival": 0.5}


def test_exact_same_start(tmp_path):
    (tmp_path / "P.txt").write_text(FAIR)
    assert main(["exact", str(tmp_path / "P.txt"), "--x", "1", "--y", "1", "--T", "5",
                 "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "exact.csv")
    assert all(float(r["tv"]) == 0 and float(r["survival"]) == 0 for r in rows)


def test_exact_row_sum_error(tmp_path, capsys):
    (tmp_path / "P.txt").write_text("2\n0.5 0.5\n0.5 0.4\n")
    assert main(["exact", str(tmp_path / "P.txt"), "--out", str(tmp_path)]) == 1
    assert "row 1" in capsys.readouterr().err


def test_exact_missing_file(tmp_path):
    assert main(["exact", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 1


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "couplinglab.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "exact" in res.stdout
