import dataclasses
import json
import subprocess
import sys

import pytest

from conftest import SCENARIOS
from gridsurv import cli
from gridsurv.engine import run
from gridsurv.metrics import read_trace
from gridsurv.scenario import parse_scenario

SHIPPED = sorted(p.name for p in SCENARIOS.glob("*.yaml"))
SMOKE = str(SCENARIOS / "smoke.yaml")


@pytest.mark.parametrize("name", SHIPPED)
def test_validate_shipped(name, capsys):
    assert cli.main(["validate", "--scenario", str(SCENARIOS / name)]) == 0
    assert capsys.readouterr().out.startswith("ok: ")


def test_run_twice_is_byte_identical(tmp_path):
    for out in ("a", "b"):
        assert cli.main(["run", "--scenario", SMOKE, "--out", str(tmp_path / out), "-q"]) == 0
    for name in ("trace.txt", "metrics.csv", "metrics.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_matches_library(tmp_path):
    assert cli.main(["run", "--scenario", SMOKE, "--out", str(tmp_path), "--seed-override", "8", "-q"]) == 0
    s = parse_scenario(SMOKE)
    trace, m = run(dataclasses.replace(s, seed=8))
    assert read_trace(tmp_path / "trace.txt") == trace
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["ch_changes_total"] == m.ch_changes_total and doc["flows_admitted"] == m.flows_admitted


def test_format_subset(tmp_path):
    assert cli.main(["run", "--scenario", SMOKE, "--out", str(tmp_path), "--format", "metrics-json", "-q"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["metrics.json"]


@pytest.mark.parametrize("jobs", ["1", "3"])
def test_sweep_three_seeds(tmp_path, capsys, jobs):
    code = cli.main(["sweep", "--scenario", SMOKE, "--out", str(tmp_path), "--param", "seed",
                     "--values", "1,2,3", "--jobs", jobs])
    assert code == 0
    dirs = sorted(p.name for p in tmp_path.iterdir())
    assert dirs == ["seed=1", "seed=2", "seed=3"]
    assert all((tmp_path / d / "metrics.csv").exists() for d in dirs)
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and all("admitted=" in line for line in lines)
    traces = {d: (tmp_path / d / "trace.txt").read_bytes() for d in dirs}
    assert len(set(traces.values())) == 3


def test_sweep_nested_key(tmp_path):
    assert cli.main(["sweep", "--scenario", SMOKE, "--out", str(tmp_path), "--param", "nodes.radio_range",
                     "--values", "150,400", "-q"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["nodes.radio_range=150", "nodes.radio_range=400"]


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--scenario", "does-not-exist.yaml"],
        ["run", "--scenario", SMOKE, "--format", "pdf"],
        ["run", "--scenario", SMOKE, "--format", ","],
        ["sweep", "--scenario", SMOKE, "--param", "nodes.radio_range", "--values", "200,-1"],
        ["sweep", "--scenario", SMOKE, "--param", "grid.bogus", "--values", "1"],
        ["sweep", "--scenario", SMOKE, "--param", "seed", "--values", "1", "--jobs", "0"],
        ["sweep", "--scenario", SMOKE, "--param", "events", "--values", "1"],
    ],
)
def test_config_errors_write_nothing(tmp_path, capsys, argv):
    out = tmp_path / "out"
    assert cli.main(argv + ["--out", str(out)]) == 2
    assert not out.exists()
    assert "configuration error" in capsys.readouterr().err


def test_bad_scenario_file(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\ngrid: {rows: 2, cols: 2}\nnodes: {count: 3, radio_range: -5}\n")
    assert cli.main(["validate", "--scenario", str(bad)]) == 2
    assert "nodes.radio_range (line 3)" in capsys.readouterr().err


def test_invariant_violation_exit_code(tmp_path, monkeypatch):
    import gridsurv.engine as engine

    monkeypatch.setattr(engine, "invariant_problems", lambda sim, registration=True: ["broken"])
    assert cli.main(["run", "--scenario", SMOKE, "--out", str(tmp_path), "--debug", "-q"]) == 1


def test_usage_error_is_exit_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["run"])
    assert info.value.code == 2


def test_console_script(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "gridsurv.cli", "validate", "--scenario", SMOKE],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and "ok:" in proc.stdout


def test_verbose_lists_outputs(tmp_path, capsys):
    assert cli.main(["run", "--scenario", SMOKE, "--out", str(tmp_path), "--format", "trace", "-v"]) == 0
    out = capsys.readouterr().out
    assert "records=" in out and f"wrote {tmp_path / 'trace.txt'}" in out
