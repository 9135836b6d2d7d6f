"""
Report files written by the command line: findings, load-flow tables
and summary, allocation and Pareto tables.

Every writer is deterministic so that reruns give byte-identical files.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..models import Finding, Grid
from .per_unit import PerUnitGrid
from .powerflow import LoadFlowResult

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def _write_json(data: Any, path: PathLike) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def findings_payload(findings: Sequence[Finding]) -> List[Dict[str, Any]]:
    return [f.model_dump(mode="json") for f in findings]


def write_findings(findings: Sequence[Finding], path: PathLike) -> None:
    _write_json(findings_payload(findings), path)
    logger.debug(f"Wrote {len(findings)} finding(s) to {path}")


def read_findings(path: PathLike) -> List[Finding]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [Finding.model_validate(item) for item in data]


def loadflow_summary(result: LoadFlowResult, pu: PerUnitGrid, grid: Grid) -> Dict[str, Any]:
    """Worst-case figures of a multi-period load flow."""
    vm = np.abs(result.V)
    lv = [i for i in range(pu.n_nodes) if i != pu.slack]
    vm_lv = vm[lv] if lv else vm
    t_min = int(np.unravel_index(np.argmin(vm_lv), vm_lv.shape)[1])
    t_max = int(np.unravel_index(np.argmax(vm_lv), vm_lv.shape)[1])

    kinds = grid.line_kind_map()
    loading = []
    for k, bid in enumerate(result.branch_ids):
        try:
            amp = kinds[grid.line(bid).kind].ampacity
        except KeyError:
            continue
        if amp:
            loading.append((float(np.max(result.current_a[k])) / amp * 100.0, bid))
    max_loading, max_line = max(loading) if loading else (0.0, None)

    s_kva = np.abs(result.slack_S) * result.s_base
    t_peak = int(np.argmax(s_kva)) if len(s_kva) else 0
    return {
        "steps": result.steps,
        "converged_steps": int(np.sum(result.converged)),
        "min_v_pu": float(np.min(vm_lv)),
        "min_v_node": pu.node_ids[lv[int(np.argmin(vm_lv[:, t_min]))]] if lv else pu.node_ids[0],
        "min_v_step": t_min,
        "max_v_pu": float(np.max(vm_lv)),
        "max_v_node": pu.node_ids[lv[int(np.argmax(vm_lv[:, t_max]))]] if lv else pu.node_ids[0],
        "max_v_step": t_max,
        "max_line_loading_pct": max_loading,
        "max_loading_line": max_line,
        "peak_slack_kva": float(s_kva[t_peak]) if len(s_kva) else 0.0,
        "peak_slack_p_kw": float(result.slack_S[t_peak].real * result.s_base) if len(s_kva) else 0.0,
        "peak_slack_q_kvar": float(result.slack_S[t_peak].imag * result.s_base) if len(s_kva) else 0.0,
        "peak_step": t_peak,
    }


def write_loadflow(
    result: LoadFlowResult, pu: PerUnitGrid, grid: Grid, out_dir: PathLike
) -> Dict[str, Any]:
    out = Path(out_dir)
    result.voltages_frame().to_csv(out / "voltages.csv", index=False, float_format="%.10g")
    result.currents_frame().to_csv(out / "currents.csv", index=False, float_format="%.10g")
    summary = loadflow_summary(result, pu, grid)
    _write_json(summary, out / "summary.json")
    return summary


def write_frame(frame: pd.DataFrame, path: PathLike) -> None:
    frame.to_csv(path, index=False, float_format="%.10g")


def hosting_summary(solution) -> Dict[str, Any]:
    return {
        "lambda": solution.lam if np.isfinite(solution.lam) else "inf",
        "total_kwp": solution.total_kwp,
        "J_C": solution.J_C,
        "J_O": solution.J_O,
        "M_U": solution.M_U,
        "cost_unit_chf": solution.cost_unit,
        "fairness_penalty_chf": solution.fairness_penalty,
        "objective": solution.objective,
        "kkt_residual": solution.kkt_residual,
        "binding": list(solution.binding),
        "passes": solution.passes,
    }


def write_hosting_summary(solution, path: PathLike, certificate: Optional[Any] = None) -> None:
    data = hosting_summary(solution)
    if certificate is not None:
        data["certificate"] = {
            "voltage_excess_pu": certificate.voltage_excess_pu,
            "current_overload": certificate.current_overload,
            "transformer_overload": certificate.transformer_overload,
            "converged": certificate.converged,
        }
    _write_json(data, path)
