"""
Tests for the load-flow based validation.
"""

import numpy as np
import pytest

from gridgate.errors import CurveMismatchError, PrerequisiteFailedError
from gridgate.models import Grid, LimitSet, Phase
from gridgate.services.lf_validation import (
    detect_anomalies,
    gcp_current_a,
    run_advanced_validation,
    run_validation,
    synthesize_injections,
)
from gridgate.services.per_unit import to_per_unit
from gridgate.services.powerflow import InjectionProfile, LoadFlowResult, multi_period_loadflow
from gridgate.services.profiles import NormalizedCurve, builtin_load_curve, constant_curve

from oracles import loaded_lines

HOURLY = builtin_load_curve(1.0)


def _result(grid: Grid, vm, i_a, converged=None, slack_s=None) -> LoadFlowResult:
    """Hand-made result for ``grid`` with magnitudes ``vm`` (N x T) and currents ``i_a`` (B x T)."""
    vm = np.atleast_2d(np.asarray(vm, dtype=float))
    i_a = np.atleast_2d(np.asarray(i_a, dtype=float))
    steps = vm.shape[1]
    return LoadFlowResult(
        V=vm.astype(complex),
        I=i_a.astype(complex),
        slack_S=np.zeros(steps, dtype=complex) if slack_s is None else np.asarray(slack_s, dtype=complex),
        converged=np.ones(steps, dtype=bool) if converged is None else np.asarray(converged),
        iterations=np.full(steps, 3),
        max_mismatch=np.zeros(steps),
        worst_bus=np.ones(steps, dtype=int),
        node_ids=tuple(grid.node_ids()),
        branch_ids=tuple(line.id for line in grid.active_lines()),
        i_base_a=np.ones(len(grid.active_lines())),
        s_base=100.0,
    )


def _corrupt(grid: Grid, line_id: str, factor: float = 100.0) -> Grid:
    line = grid.line(line_id)
    kind = grid.line_kind_map()[line.kind]
    bad = kind.model_copy(update={"name": f"{kind.name} x{factor:g}", "r_per_km": kind.r_per_km * factor})
    lines = tuple(l.model_copy(update={"kind": bad.name}) if l.id == line_id else l for l in grid.lines)
    return grid.model_copy(update={"line_kinds": grid.line_kinds + (bad,), "lines": lines})


def _voltage_nodes(findings):
    return {f.entity.id for f in findings if f.rule_id == "v-out-of-band"}


def _flagged_nodes(findings):
    """Nodes with a voltage or a non-convergence finding."""
    return {f.entity.id for f in findings if f.rule_id in ("v-out-of-band", "lf-nonconvergence")}


# Injections ------------------------------------------------------------------

def test_peak_equals_nominal_power(two_node_grid, load_curve):
    profile = synthesize_injections(two_node_grid, load_curve)
    assert profile.p_kw[1].max() == pytest.approx(10.0)
    assert np.all(profile.p_kw[0] == 0.0)
    assert profile.q_kvar[1].max() == pytest.approx(10.0 * 0.4843, abs=1e-3)


def test_export_with_pv(two_node_grid):
    load = NormalizedCurve(np.full(24, 0.2), dt_hours=1.0)
    pv = NormalizedCurve(np.ones(24), dt_hours=1.0)
    profile = synthesize_injections(two_node_grid, load, pv, {"N1": 5.0})
    np.testing.assert_allclose(profile.p_kw[1], -3.0)
    # PV at unity power factor leaves the reactive demand alone
    np.testing.assert_allclose(profile.q_kvar[1], 2.0 * 0.4843, atol=1e-3)


def test_curves_must_match(two_node_grid):
    with pytest.raises(CurveMismatchError):
        synthesize_injections(two_node_grid, constant_curve(0.5), constant_curve(0.5, dt_hours=1.0))


def test_installed_vector_shape(two_node_grid, load_curve, pv_curve):
    with pytest.raises(ValueError, match="shape"):
        synthesize_injections(two_node_grid, load_curve, pv_curve, np.ones(3))


# Anomaly detection -----------------------------------------------------------

def test_overvoltage_found(two_node_grid):
    (finding,) = detect_anomalies(_result(two_node_grid, [[1.0], [1.12]], [[10.0]]), two_node_grid)
    assert finding.rule_id == "v-out-of-band"
    assert finding.entity.id == "N1"
    assert finding.measured == pytest.approx(1.12)
    assert finding.threshold == pytest.approx(1.10)
    assert finding.phase == Phase.ADVANCED


def test_inside_band(two_node_grid):
    assert detect_anomalies(_result(two_node_grid, [[1.0], [0.95]], [[10.0]]), two_node_grid) == []


def test_mv_band_is_tighter(substation_grid):
    vm = np.ones((5, 1))
    vm[0] = 1.06
    findings = detect_anomalies(_result(substation_grid, vm, np.ones((3, 1))), substation_grid)
    assert _voltage_nodes(findings) == {"MV"}


def test_one_overcurrent(two_node_grid):
    (finding,) = detect_anomalies(_result(two_node_grid, [[1.0, 1.0], [1.0, 1.0]], [[100.0, 1.05 * 357.0]]), two_node_grid)
    assert finding.rule_id == "line-overcurrent"
    assert finding.entity.id == "L1"
    assert finding.step == 1
    assert finding.measured == pytest.approx(374.85)


def test_worst_step_reported(two_node_grid):
    vm = [[1.0, 1.0, 1.0], [1.12, 1.15, 1.0]]
    result = _result(two_node_grid, vm, [[0.0, 0.0, 0.0]])
    (finding,) = detect_anomalies(result, two_node_grid)
    assert finding.step == 1
    every = detect_anomalies(result, two_node_grid, per_step=True)
    assert [f.step for f in every] == [0, 1]


def test_grid_connection_point(two_node_grid):
    # 100 kVA at 0.4 kV is 144 A
    result = _result(two_node_grid, [[1.0]], [[0.0]], slack_s=[1.0])
    (finding,) = detect_anomalies(result, two_node_grid, LimitSet(gcp_ampacity=100.0))
    assert finding.rule_id == "gcp-overcurrent"
    assert finding.entity.id == "N0"
    assert finding.measured == pytest.approx(144.34, abs=0.01)


def test_grid_connection_point_is_measured_on_lv_side(substation_grid):
    pu = to_per_unit(substation_grid)
    p = np.outer(pu.nominal_power_kw, [1.0, 4.0])
    result = multi_period_loadflow(pu, InjectionProfile(p, 0.4 * p, 1.0))
    assert result.all_converged
    gcp = gcp_current_a(result, substation_grid)
    # the transformer feeds only L1, so both carry the same current
    feeder = result.current_a[list(result.branch_ids).index("L1")]
    np.testing.assert_allclose(gcp, feeder, rtol=1e-6)
    assert gcp[1] > gcp[0]


def test_nonconverged_step(two_node_grid):
    result = _result(two_node_grid, [[1.0, 1.0], [0.5, 1.0]], [[0.0, 0.0]], converged=[False, True])
    (finding,) = detect_anomalies(result, two_node_grid)
    assert finding.rule_id == "lf-nonconvergence"
    assert finding.entity.id == "N1"
    assert finding.step == 0


# Pipeline --------------------------------------------------------------------

def test_clean_case_study(case_grid, load_curve):
    assert run_advanced_validation(case_grid, load_curve) == []
    assert run_validation(case_grid, load_curve) == []


def test_refuses_blocked_grid(triangle_grid):
    with pytest.raises(PrerequisiteFailedError) as info:
        run_advanced_validation(triangle_grid)
    assert info.value.findings[0].rule_id == "meshed-lv"


def test_run_validation_stops_after_basic_errors(triangle_grid):
    findings = run_validation(triangle_grid)
    assert [f.rule_id for f in findings] == ["meshed-lv"]
    assert findings[0].phase == Phase.BASIC


def test_corrupted_trunk(case_grid):
    findings = run_advanced_validation(_corrupt(case_grid, "F1-L02"), HOURLY)
    flagged = _flagged_nodes(findings)
    downstream = {"F1-H1", "F1-H2", "F1-H3"} | {n.id for n in case_grid.nodes if n.id.startswith("F1-J")}
    assert flagged & downstream
    assert all(f.phase == Phase.ADVANCED for f in findings)


def test_islanded_node(case_grid):
    lines = tuple(l.model_copy(update={"in_service": False}) if l.id == "F7-L05" else l for l in case_grid.lines)
    findings = run_advanced_validation(case_grid.model_copy(update={"lines": lines}), HOURLY)
    assert {f.rule_id for f in findings} == {"lf-nonconvergence"}
    assert {f.entity.id for f in findings} == {f"F7-N{k:02d}" for k in range(5, 11)}


def test_heavier_load_keeps_findings(case_grid):
    grid = _corrupt(case_grid, "F7-L06", 5.0)
    base = _voltage_nodes(run_advanced_validation(grid, HOURLY))
    assert base
    for scale in (1.1, 1.25, 1.5):
        assert base <= _voltage_nodes(run_advanced_validation(grid, HOURLY, load_scale=scale))


def test_corruption_recall(case_grid):
    """Resistance x100 on a loaded line is flagged at a node downstream of it."""
    root = case_grid.slack_node
    below = loaded_lines(case_grid, root)
    rng = np.random.default_rng(11)
    sites = rng.choice(sorted(below), size=200)
    verdict = {}
    for line_id in sorted(set(sites)):
        flagged = _flagged_nodes(run_advanced_validation(_corrupt(case_grid, line_id), HOURLY))
        verdict[line_id] = bool(flagged & below[line_id])
    hits = sum(verdict[line_id] for line_id in sites)
    assert hits >= 0.95 * len(sites)
