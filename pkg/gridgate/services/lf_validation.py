"""
Validation based on load-flow results.

Nominal-condition injections are synthesised from the load curve, a
multi-period load flow is run, and voltages outside the statutory band,
overloaded lines, an overloaded grid connection point and
non-converged steps are reported as Findings.  Violations are coalesced
per entity; the worst step is the one reported.
"""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import PrerequisiteFailedError, SingularJacobianError
from ..models import (
    EntityRef,
    Finding,
    Grid,
    LimitSet,
    Phase,
    RuleConfig,
    Severity,
    gcp_ampacity_a,
)
from .per_unit import DEFAULT_S_BASE_KVA, PerUnitGrid, i_base, to_per_unit
from .powerflow import (
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
    InjectionProfile,
    LoadFlowResult,
    multi_period_loadflow,
)
from .profiles import NormalizedCurve, builtin_load_curve, check_compatible, reactive_curve
from .rules import has_errors, run_basic_validation, sort_findings

logger = logging.getLogger(__name__)

InstalledPV = Union[None, Mapping[str, float], np.ndarray]


def _installed_vector(grid: Grid, installed_pv: InstalledPV) -> np.ndarray:
    n = len(grid.nodes)
    if installed_pv is None:
        return np.zeros(n)
    if isinstance(installed_pv, Mapping):
        index = grid.node_index()
        vec = np.zeros(n)
        for node_id, kwp in installed_pv.items():
            vec[index[node_id]] = kwp
        return vec
    vec = np.asarray(installed_pv, dtype=float)
    if vec.shape != (n,):
        raise ValueError(f"installed PV vector has shape {vec.shape}, expected ({n},)")
    return vec


def synthesize_injections(
    grid: Grid,
    load_curve: NormalizedCurve,
    pv_curve: Optional[NormalizedCurve] = None,
    installed_pv: InstalledPV = None,
    *,
    power_factor: float = 0.9,
    load_scale: float = 1.0,
) -> InjectionProfile:
    """Net consumption per node and step.

    ``P = pnom * load - installed_pv * pv``; reactive demand follows the
    load at ``power_factor`` while PV runs at unity power factor.

    Raises:
        CurveMismatchError: the curves differ in step or length.
    """
    if pv_curve is not None:
        check_compatible(load_curve, pv_curve)
    pnom = np.array([n.nominal_power for n in grid.nodes], dtype=float) * load_scale
    load = np.outer(pnom, load_curve.values)
    q = np.outer(pnom, reactive_curve(load_curve, power_factor))
    p = load
    alpha = _installed_vector(grid, installed_pv)
    if pv_curve is not None and np.any(alpha):
        p = load - np.outer(alpha, pv_curve.values)
    return InjectionProfile(p_kw=p, q_kvar=q, dt_hours=load_curve.dt_hours)


def _advanced(
    rule_id: str, kind: str, entity: str, message: str, step: Optional[int],
    measured: Optional[float] = None, threshold: Optional[float] = None,
) -> Finding:
    return Finding(
        rule_id=rule_id,
        severity=Severity.ERROR,
        entity=EntityRef(kind=kind, id=entity),
        message=message,
        measured=measured,
        threshold=threshold,
        phase=Phase.ADVANCED,
        step=step,
    )


def _worst_per_entity(excess: np.ndarray, mask: np.ndarray) -> Dict[int, int]:
    """Row -> step of the largest positive excess, for rows with any."""
    masked = np.where(mask[None, :], excess, -np.inf)
    out = {}
    for row in np.nonzero(np.any(masked > 0, axis=1))[0]:
        out[int(row)] = int(np.argmax(masked[row]))
    return out


def gcp_current_a(result: LoadFlowResult, grid: Grid) -> np.ndarray:
    """Current through the grid connection point per step, A on the LV side.

    With a transformer this is its LV-end branch current.  Without one,
    or for a result that carries no to-end currents, it is the slack
    injection ``|S| / |V|``; behind a transformer that value is taken on
    the HV side and includes the transformer losses.
    """
    tr = grid.transformer
    if tr is not None and result.I_to is not None and tr.id in result.branch_ids:
        k = list(result.branch_ids).index(tr.id)
        v_ll = grid.node(tr.lv_node).base_voltage
        return np.abs(result.I_to[k]) * i_base(v_ll, result.s_base)
    lv_node = tr.lv_node if tr is not None else grid.slack_node
    v_ll = grid.node(lv_node).base_voltage
    slack = list(result.node_ids).index(grid.slack_node)
    v_slack = np.maximum(np.abs(result.V[slack]), 1e-9)
    return np.abs(result.slack_S) / v_slack * i_base(v_ll, result.s_base)


def detect_anomalies(
    result: LoadFlowResult,
    grid: Grid,
    limits: Optional[LimitSet] = None,
    *,
    per_step: bool = False,
) -> List[Finding]:
    """Findings for limit violations in ``result``.

    Steps that did not converge contribute an ``lf-nonconvergence``
    finding on the bus with the worst mismatch and are otherwise
    ignored.  With ``per_step`` every violating (entity, step) pair is
    reported instead of the worst step only.
    """
    limits = limits or LimitSet()
    ok = np.asarray(result.converged, dtype=bool)
    findings: List[Finding] = []
    node_pos = {nid: i for i, nid in enumerate(result.node_ids)}

    def emit(rows: Dict[int, int], excess: np.ndarray, make):
        for row, worst in rows.items():
            steps = np.nonzero(ok & (excess[row] > 0))[0] if per_step else [worst]
            for t in steps:
                findings.append(make(row, int(t)))

    # voltages
    vm = np.abs(result.V)
    band = np.array([limits.band(grid.node(nid).voltage_level) for nid in result.node_ids])
    upper = 1.0 + band
    lower = 1.0 - band
    over = vm - upper[:, None]
    under = lower[:, None] - vm
    excess = np.maximum(over, under)

    def voltage_finding(row: int, t: int) -> Finding:
        v = float(vm[row, t])
        bound = float(upper[row] if v > upper[row] else lower[row])
        nid = result.node_ids[row]
        return _advanced(
            "v-out-of-band", "node", nid,
            f"|V| = {v:.4f} pu at node {nid} outside [{lower[row]:.2f}, {upper[row]:.2f}]",
            t, measured=v, threshold=bound,
        )

    emit(_worst_per_entity(excess, ok), excess, voltage_finding)

    # line currents
    kinds = grid.line_kind_map()
    current = result.current_a
    rows, ratings = [], []
    for b, bid in enumerate(result.branch_ids):
        try:
            line = grid.line(bid)
        except KeyError:
            continue
        amp = kinds[line.kind].ampacity
        if amp is not None:
            rows.append(b)
            ratings.append(amp)
    if rows:
        rows_arr = np.array(rows)
        ratings_arr = np.array(ratings)
        line_excess = current[rows_arr] - ratings_arr[:, None]

        def line_finding(k: int, t: int) -> Finding:
            bid = result.branch_ids[rows_arr[k]]
            i_a = float(current[rows_arr[k], t])
            return _advanced(
                "line-overcurrent", "line", bid,
                f"line {bid} carries {i_a:.1f} A above its {ratings_arr[k]:.0f} A ampacity",
                t, measured=i_a, threshold=float(ratings_arr[k]),
            )

        emit(_worst_per_entity(line_excess, ok), line_excess, line_finding)

    # grid connection point
    gcp = gcp_ampacity_a(grid, limits)
    if gcp is not None:
        tr = grid.transformer
        gcp_a = gcp_current_a(result, grid)
        gcp_excess = (gcp_a - gcp)[None, :]
        entity_kind, entity_id = ("transformer", tr.id) if tr is not None else ("node", grid.slack_node)

        def gcp_finding(_: int, t: int) -> Finding:
            return _advanced(
                "gcp-overcurrent", entity_kind, entity_id,
                f"grid connection point carries {gcp_a[t]:.1f} A above {gcp:.0f} A",
                t, measured=float(gcp_a[t]), threshold=float(gcp),
            )

        emit(_worst_per_entity(gcp_excess, ok), gcp_excess, gcp_finding)

    # non-converged steps
    worst_by_node: Dict[int, Tuple[float, int]] = {}
    for t in np.nonzero(~ok)[0]:
        bus = int(result.worst_bus[t])
        mis = float(result.max_mismatch[t])
        if bus not in worst_by_node or mis > worst_by_node[bus][0]:
            worst_by_node[bus] = (mis, int(t))
    for bus, (mis, t) in worst_by_node.items():
        nid = result.node_ids[bus]
        findings.append(
            _advanced(
                "lf-nonconvergence", "node", nid,
                f"load flow did not converge at step {t}, worst mismatch {mis:.3e} pu at node {nid}",
                t, measured=mis if math.isfinite(mis) else None,
            )
        )
    return sort_findings(findings)


def islanding_findings(grid: Grid, islanded: Sequence[str]) -> List[Finding]:
    return sort_findings(
        [
            _advanced(
                "lf-nonconvergence", "node", nid,
                f"node {nid} is not connected to the slack {grid.slack_node}", None,
            )
            for nid in islanded
        ]
    )


def run_nominal_loadflow(
    grid: Grid,
    load_curve: Optional[NormalizedCurve] = None,
    *,
    s_base: float = DEFAULT_S_BASE_KVA,
    power_factor: float = 0.9,
    load_scale: float = 1.0,
    slack_voltage: complex = 1.0,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITERATIONS,
    threads: Optional[int] = None,
    pu: Optional[PerUnitGrid] = None,
) -> LoadFlowResult:
    """Multi-period load flow under nominal demand, no PV."""
    load_curve = load_curve or builtin_load_curve()
    pu = pu or to_per_unit(grid, s_base)
    profile = synthesize_injections(grid, load_curve, power_factor=power_factor, load_scale=load_scale)
    return multi_period_loadflow(
        pu, profile, slack_voltage=slack_voltage, tol=tol, max_iter=max_iter, threads=threads
    )


def run_advanced_validation(
    grid: Grid,
    load_curve: Optional[NormalizedCurve] = None,
    *,
    rule_config: Optional[RuleConfig] = None,
    limits: Optional[LimitSet] = None,
    basic_findings: Optional[List[Finding]] = None,
    per_step: bool = False,
    **loadflow_options,
) -> List[Finding]:
    """Load-flow based checks on a grid that passed the basic rules.

    Raises:
        PrerequisiteFailedError: basic validation produced errors.
    """
    if basic_findings is None:
        basic_findings = run_basic_validation(grid, rule_config)
    blocking = [f for f in basic_findings if f.severity == Severity.ERROR]
    if blocking:
        raise PrerequisiteFailedError(blocking)
    try:
        result = run_nominal_loadflow(grid, load_curve, **loadflow_options)
    except SingularJacobianError as exc:
        logger.warning(str(exc))
        return islanding_findings(grid, exc.islanded)
    findings = detect_anomalies(result, grid, limits, per_step=per_step)
    logger.info(f"Advanced validation: {len(findings)} finding(s) over {result.steps} steps")
    return findings


def run_validation(
    grid: Grid,
    load_curve: Optional[NormalizedCurve] = None,
    *,
    rule_config: Optional[RuleConfig] = None,
    limits: Optional[LimitSet] = None,
    per_step: bool = False,
    **loadflow_options,
) -> List[Finding]:
    """Basic checks, then the load-flow checks when nothing blocks them."""
    basic = run_basic_validation(grid, rule_config)
    if has_errors(basic):
        logger.info(f"Basic validation found {len(basic)} finding(s), skipping load flow")
        return basic
    advanced = run_advanced_validation(
        grid, load_curve, rule_config=rule_config, limits=limits,
        basic_findings=basic, per_step=per_step, **loadflow_options,
    )
    return sort_findings(basic + advanced)
