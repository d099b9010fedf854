import csv
import json
import subprocess
import sys

import pytest

from rhythmic.cli import main
from rhythmic.design import load_plan


def run(*argv):
    return main([str(a) for a in argv])


def test_version_via_module():
    out = subprocess.run([sys.executable, "-m", "rhythmic", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.startswith("rhythmic ")


def test_design_rhythm_writes_json(tmp_path):
    assert run("design-rhythm", "grid", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "rhythm.json").read_text())
    assert doc


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RHYTHMIC_OUTPUT_DIR", str(tmp_path / "env"))
    assert run("design-rhythm", "toy") == 0
    assert (tmp_path / "env" / "rhythm.json").exists()


def test_rhythm_file_is_idempotent(tmp_path):
    assert run("design-rhythm", "grid", "--out", tmp_path / "a") == 0
    first = (tmp_path / "a" / "rhythm.json").read_text()
    assert run("design-rhythm", "grid", "--rhythm", tmp_path / "a" / "rhythm.json",
               "--out", tmp_path / "b") == 0
    assert (tmp_path / "b" / "rhythm.json").read_text() == first


def test_missing_scenario_is_io_error(tmp_path):
    assert run("design-rhythm", tmp_path / "nope.json", "--out", tmp_path) == 5


def test_bad_json_is_parse_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("design-rhythm", bad, "--out", tmp_path) == 2


def test_bad_omega_is_validation_error(tmp_path):
    assert run("bilevel", "toy", "--omega", "1.5", "--out", tmp_path) == 3


def test_unknown_subcommand_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_bilevel_single_iteration(tmp_path, capsys):
    assert run("bilevel", "toy", "--iterations", 1, "--out", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "iterations.csv").open()))
    assert len(rows) == 1
    load_plan(tmp_path / "plan.json")
    assert "O_a_opt" in capsys.readouterr().out


def test_bilevel_seed_replay(tmp_path):
    for d in ("a", "b"):
        assert run("bilevel", "toy", "--iterations", 10, "--seed", 4, "--out", tmp_path / d) == 0
    assert ((tmp_path / "a" / "iterations.csv").read_text()
            == (tmp_path / "b" / "iterations.csv").read_text())


def test_solve_milpo_bus_only(tmp_path, capsys):
    assert run("solve-milpo", "toy", "--demand-level", 0.0, "--warm-start", 0,
               "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "plan.json").read_text())
    assert doc
    assert "13200.00" in capsys.readouterr().out


def test_simulate_and_plot(tmp_path):
    assert run("simulate", "toy", "--controls", "rch,tsc15", "--levels", "0.2",
               "--duration", 600, "--trajectories", "--out", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "report.csv").open()))
    assert [r["control"] for r in rows] == ["rch", "tsc-15s-no-dbl"]
    traj = tmp_path / "trajectories-tsc-15s-no-dbl-0.2.csv"
    assert run("plot", "toy", traj, "--path", "0:0", "--out", tmp_path) == 0
    assert (tmp_path / f"{traj.stem}-0_0.svg").exists()


def test_simulate_unknown_control(tmp_path):
    assert run("simulate", "toy", "--controls", "tsc99", "--out", tmp_path) == 3


def test_plot_plan_and_unknown_path(tmp_path):
    assert run("bilevel", "toy", "--iterations", 0, "--out", tmp_path) == 0
    plan = tmp_path / "plan.json"
    assert run("plot", "toy", plan, "--path", "0:0", "--path", "bus:1", "--out", tmp_path) == 0
    assert (tmp_path / "plan-bus_1.svg").exists()
    assert run("plot", "toy", plan, "--path", "9:9", "--out", tmp_path) == 3
