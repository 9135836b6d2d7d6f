"""
End-to-end tests of the command line.
"""

import json

import pandas as pd
import pytest

from gridgate.etl.grid_io import write_grid
from gridgate.main import EXIT_FINDINGS, EXIT_INPUT, EXIT_OK, EXIT_SOLVER, main
from gridgate.services.reports import read_findings

from oracles import CABLE_16, CABLE_240, star_grid

TOY_TOML = """
[grid]
slack_voltage_pu = 1.05

[hosting]
lambdas = [0.0, 100.0]
"""


@pytest.fixture(autouse=True)
def _packaged_settings(monkeypatch):
    monkeypatch.delenv("GRIDGATE_SETTINGS", raising=False)
    monkeypatch.delenv("GRIDGATE_THREADS", raising=False)


@pytest.fixture
def toy_files(tmp_path):
    grid = tmp_path / "toy.json"
    write_grid(star_grid([750.0, 100.0], [10.0, 8.0], [CABLE_16, CABLE_240]), grid)
    settings = tmp_path / "toy.toml"
    settings.write_text(TOY_TOML)
    return grid, settings


def _run(*argv) -> int:
    return main([str(a) for a in argv])


def test_validate_clean_case_study(tmp_path, capsys):
    assert _run("validate", "--grid", "builtin:case-study", "--out", tmp_path) == EXIT_OK
    assert read_findings(tmp_path / "findings.json") == []
    assert "0 finding(s)" in capsys.readouterr().out


def test_validate_meshed_grid(tmp_path, triangle_grid):
    path = tmp_path / "triangle.json"
    write_grid(triangle_grid, path)
    assert _run("validate", "--grid", path, "--out", tmp_path / "out") == EXIT_FINDINGS
    findings = json.loads((tmp_path / "out" / "findings.json").read_text())
    assert [f["rule_id"] for f in findings] == ["meshed-lv"]


def test_missing_grid_file(tmp_path):
    assert _run("validate", "--grid", tmp_path / "absent.json", "--out", tmp_path) == EXIT_INPUT


def test_bad_curve_file(tmp_path):
    curve = tmp_path / "short.csv"
    curve.write_text("value\n0.5\n0.5\n")
    code = _run("validate", "--grid", "builtin:case-study", "--load-curve", curve, "--out", tmp_path)
    assert code == EXIT_INPUT


def test_loadflow_outputs(tmp_path, capsys):
    assert _run("loadflow", "--grid", "builtin:case-study", "--out", tmp_path) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["converged_steps"] == 144
    voltages = pd.read_csv(tmp_path / "voltages.csv")
    assert len(voltages) == 58 * 144
    assert (tmp_path / "currents.csv").exists()
    assert "144 steps, 144 converged" in capsys.readouterr().out


def test_host_writes_allocation(toy_files, tmp_path, capsys):
    grid, settings = toy_files
    out = tmp_path / "host"
    assert _run("host", "--grid", grid, "--settings", settings, "--lambda", "0", "--out", out) == EXIT_OK
    alpha = pd.read_csv(out / "alpha.csv")
    printed = capsys.readouterr().out
    total = float(printed.split("total ")[1].split(" kWp")[0])
    assert alpha["alpha_kwp"].sum() == pytest.approx(total, abs=1e-5)
    summary = json.loads((out / "hosting.json").read_text())
    assert summary["lambda"] == 0.0
    assert "certificate" in summary


def test_host_perfect_fairness(toy_files, tmp_path):
    grid, settings = toy_files
    out = tmp_path / "fair"
    assert _run("host", "--grid", grid, "--settings", settings, "--lambda", "inf", "--out", out) == EXIT_OK
    assert json.loads((out / "hosting.json").read_text())["lambda"] == "inf"


def test_host_takes_one_lambda(toy_files, tmp_path):
    grid, settings = toy_files
    with pytest.raises(SystemExit):
        _run("host", "--grid", grid, "--settings", settings, "--lambda", "0,1", "--out", tmp_path)


def test_sweep_table(toy_files, tmp_path):
    grid, settings = toy_files
    out = tmp_path / "sweep"
    assert _run("sweep", "--grid", grid, "--settings", settings, "--out", out, "--dump-sensitivities") == EXIT_OK
    pareto = pd.read_csv(out / "pareto.csv")
    assert list(pareto["lambda"]) == [0.0, 100.0]
    assert set(pd.read_csv(out / "alpha_sweep.csv")["lambda"]) == {0.0, 100.0}
    assert (out / "fairness_price.csv").exists()
    assert (out / "sensitivities.csv").exists()


def test_sweep_heavy_weight_equalises(toy_files, tmp_path):
    grid, settings = toy_files
    out = tmp_path / "heavy"
    code = _run("sweep", "--grid", grid, "--settings", settings, "--lambda", "0,1e6", "--out", out)
    assert code == EXIT_OK
    pareto = pd.read_csv(out / "pareto.csv")
    assert pareto["unfairness_pu2"][1] < pareto["unfairness_pu2"][0]
    assert pareto["unfairness_pu2"][1] < 1e-8
    alpha = pd.read_csv(out / "alpha_sweep.csv")
    per_unit = alpha.loc[alpha["lambda"] == 1e6, "alpha_per_unit"]
    assert per_unit.max() - per_unit.min() <= 1e-4 * per_unit.mean()


def test_solver_failure_exit_code(tmp_path):
    grid = tmp_path / "one.json"
    write_grid(star_grid([100.0], [10.0], [CABLE_240]), grid)
    # one candidate has no variance to penalise
    assert _run("host", "--grid", grid, "--lambda", "1", "--out", tmp_path) == EXIT_SOLVER
    assert _run("sweep", "--grid", grid, "--lambda", "0,1", "--out", tmp_path) == EXIT_SOLVER


def test_hosting_refuses_blocked_grid(tmp_path, triangle_grid):
    path = tmp_path / "triangle.json"
    write_grid(triangle_grid, path)
    assert _run("host", "--grid", path, "--out", tmp_path) == EXIT_FINDINGS


def test_export_dgs(tmp_path, capsys):
    assert _run("export-dgs", "--grid", "builtin:case-study", "--out", tmp_path) == EXIT_OK
    assert (tmp_path / "grid.dgs").read_text().startswith("## TYPE")
    assert "GRAPHIC 58" in capsys.readouterr().out


def test_invalid_kappa_override(tmp_path):
    assert _run("validate", "--grid", "builtin:case-study", "--kappa", "0.5", "--out", tmp_path) == EXIT_INPUT
