import csv
import json

import pytest

from swarmplan import dumps_scenario, load_scenario
from swarmplan.cli import main

from helpers import head_on_scenario, pinned_crossing_scenario


@pytest.fixture
def head_on_file(tmp_path):
    path = tmp_path / "head_on.json"
    path.write_text(dumps_scenario(head_on_scenario(horizon=11)))
    return path


@pytest.fixture
def crossing_file(tmp_path):
    path = tmp_path / "crossing.json"
    path.write_text(dumps_scenario(pinned_crossing_scenario()))
    return path


def test_bench_writes_loadable_scenario(tmp_path):
    out = tmp_path / "bench.json"
    code = main(["bench", "--vehicles", "4", "--seed", "3", "--out", str(out)])
    assert code == 0
    scn = load_scenario(out.read_text())
    assert scn.n_vehicles == 4
    assert scn.horizon == 30


def test_bench_stdout(capsys):
    code = main(["bench", "--vehicles", "3", "--horizon", "12"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["vehicles"]) == 3
    assert doc["horizon"] == 12


def test_bench_rejects_impossible_geometry(capsys):
    code = main(["bench", "--vehicles", "40", "--radius", "5.0"])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_plan_dca_end_to_end(tmp_path, head_on_file):
    out = tmp_path / "run"
    code = main(["plan", str(head_on_file), "--method", "dca", "--out", str(out)])
    assert code == 0
    for name in ("trajectory.csv", "distances.csv", "iterations.csv",
                 "feasibility.json", "summary.json"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method"] == "dca"
    assert summary["status"] == "converged_feasible"
    assert summary["min_separation"] >= 5.0 - 1e-4
    assert summary["feasible_check"]["feasible"] is True

    check = main(["check", str(head_on_file), str(out / "trajectory.csv")])
    assert check == 0


def test_plan_svg_artifacts(tmp_path, head_on_file):
    out = tmp_path / "run"
    code = main(["plan", str(head_on_file), "--method", "dca", "--out", str(out), "--svg"])
    assert code == 0
    for name in ("convergence.svg", "slack.svg", "distances.svg"):
        content = (out / name).read_text()
        assert content.startswith("<svg"), name


def test_plan_dca_flags_forwarded(tmp_path, head_on_file):
    out = tmp_path / "run"
    code = main(["plan", str(head_on_file), "--method", "dca", "--out", str(out),
                 "--max-iters", "2"])
    assert code == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "iteration_limit"
    assert summary["iterations"] == 2


def test_plan_rejects_bad_dca_flag(tmp_path, head_on_file, capsys):
    code = main(["plan", str(head_on_file), "--method", "dca",
                 "--out", str(tmp_path / "x"), "--mu", "0.5"])
    assert code == 1
    assert "bad planner configuration" in capsys.readouterr().err


def test_plan_micp_end_to_end(tmp_path, crossing_file):
    out = tmp_path / "micp"
    code = main(["plan", str(crossing_file), "--method", "micp", "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method"] == "micp"
    assert summary["status"] == "optimal"
    with open(out / "nodes.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["node", "bound", "depth", "status"]
    assert len(rows) == 1 + summary["nodes"]

    scenario_path = crossing_file
    check = main(["check", str(scenario_path), str(out / "trajectory.csv")])
    assert check == 0


def test_plan_micp_binary_guard(tmp_path, head_on_file, capsys):
    code = main(["plan", str(head_on_file), "--method", "micp",
                 "--out", str(tmp_path / "x"), "--max-binaries", "10"])
    assert code == 1
    assert "binaries" in capsys.readouterr().err


def test_plan_missing_scenario(tmp_path, capsys):
    code = main(["plan", str(tmp_path / "absent.json"), "--method", "dca",
                 "--out", str(tmp_path / "x")])
    assert code == 1
    assert "cannot load scenario" in capsys.readouterr().err


def test_plan_malformed_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{this is not json")
    code = main(["plan", str(bad), "--method", "dca", "--out", str(tmp_path / "x")])
    assert code == 1
    assert "cannot load scenario" in capsys.readouterr().err


def test_check_flags_tampered_trajectory(tmp_path, head_on_file, capsys):
    out = tmp_path / "run"
    assert main(["plan", str(head_on_file), "--method", "dca", "--out", str(out)]) == 0
    traj_path = out / "trajectory.csv"
    lines = traj_path.read_text().splitlines()
    fields = lines[5].split(",")
    fields[2] = repr(float(fields[2]) + 3.0)  # shove one x sample off-model
    lines[5] = ",".join(fields)
    traj_path.write_text("\n".join(lines) + "\n")
    capsys.readouterr()  # drop the plan command's own output
    code = main(["check", str(head_on_file), str(traj_path)])
    assert code == 2
    doc = json.loads(capsys.readouterr().out)
    assert doc["feasible"] is False


def test_check_dimension_mismatch(tmp_path, head_on_file, crossing_file, capsys):
    out = tmp_path / "run"
    assert main(["plan", str(crossing_file), "--method", "dca", "--out", str(out)]) == 0
    code = main(["check", str(head_on_file), str(out / "trajectory.csv")])
    assert code == 1
    assert "cannot check trajectory" in capsys.readouterr().err


def test_check_missing_trajectory(tmp_path, head_on_file, capsys):
    code = main(["check", str(head_on_file), str(tmp_path / "absent.csv")])
    assert code == 1
    assert "cannot check trajectory" in capsys.readouterr().err


def test_compare_reports_fuel_gap(tmp_path, crossing_file):
    out = tmp_path / "cmp"
    code = main(["compare", str(crossing_file), "--out", str(out)])
    assert code == 0
    doc = json.loads((out / "compare.json").read_text())
    assert doc["dca_exit"] == 0 and doc["micp_exit"] == 0
    assert "fuel_gap_micp_minus_dca" in doc
    # The relaxed planner never needs more fuel than the cube baseline.
    assert doc["fuel_gap_micp_minus_dca"] >= -1e-6
    assert (out / "dca" / "summary.json").exists()
    assert (out / "micp" / "summary.json").exists()


def test_planner_threads_env(monkeypatch, capsys):
    monkeypatch.setenv("PLANNER_THREADS", "zebra")
    code = main(["bench", "--vehicles", "3"])
    assert code == 0
    assert "PLANNER_THREADS" in capsys.readouterr().err

    monkeypatch.setenv("PLANNER_THREADS", "2")
    monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
    code = main(["bench", "--vehicles", "3"])
    assert code == 0
    import os
    assert os.environ.get("OMP_NUM_THREADS") == "2"
