"""
Single-phase-equivalent load flow
~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~

The bus admittance matrix is assembled from the branch-to-node
incidence matrix and the primitive (per-branch) admittances.  Load
flows are solved with a polar Newton-Raphson iteration on the power
mismatch, one independent solve per time step.

Sign convention: ``demand`` is consumption, so the specified injection
at a bus is ``-demand``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from ..errors import SingularJacobianError, ZeroImpedanceError
from ..models import Grid
from .per_unit import PerUnitGrid

logger = logging.getLogger(__name__)

MIN_IMPEDANCE_PU = 1e-9
DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 30


# Network matrices ---------------------------------------------------------

def _endpoints(grid: Union[Grid, PerUnitGrid]):
    if isinstance(grid, PerUnitGrid):
        return list(grid.node_ids), [(b.id, b.f, b.t) for b in grid.active_branches()]
    index = grid.node_index()
    pairs = [(line.id, index[line.from_node], index[line.to_node]) for line in grid.active_lines()]
    tr = grid.transformer
    if tr is not None:
        pairs.append((tr.id, index[tr.hv_node], index[tr.lv_node]))
    return grid.node_ids(), pairs


def incidence_matrix(grid: Union[Grid, PerUnitGrid]) -> sp.csr_matrix:
    """Branch-to-node matrix, +1 at the from node and -1 at the to node.

    One row per active branch: in-service lines not opened by a device,
    in file order, followed by the transformer.
    """
    nodes, pairs = _endpoints(grid)
    nb = len(pairs)
    rows = np.repeat(np.arange(nb), 2)
    cols = np.array([c for _, f, t in pairs for c in (f, t)], dtype=int)
    vals = np.tile([1.0, -1.0], nb)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nb, len(nodes)))


@dataclass(frozen=True)
class PrimitiveAdmittance:
    """Series admittance, total shunt susceptance and ratio per branch."""

    series: np.ndarray
    shunt: np.ndarray
    ratio: np.ndarray
    branch_ids: List[str]

    @property
    def shunt_per_end(self) -> np.ndarray:
        return 1j * self.shunt / 2.0


def primitive_admittance(pu: PerUnitGrid) -> PrimitiveAdmittance:
    """Primitive admittances of the active branches, pi model.

    Raises:
        ZeroImpedanceError: a branch with ``|z|`` below 1e-9 pu.
    """
    branches = pu.active_branches()
    for br in branches:
        if abs(br.z) < MIN_IMPEDANCE_PU:
            raise ZeroImpedanceError(br.id, abs(br.z))
    z = np.array([br.z for br in branches], dtype=complex)
    return PrimitiveAdmittance(
        series=1.0 / z if len(z) else z,
        shunt=np.array([br.b for br in branches], dtype=float),
        ratio=np.array([br.ratio for br in branches], dtype=float),
        branch_ids=[br.id for br in branches],
    )


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Bus admittance matrix with the matrices needed to post-process it.

    ``branch_from`` and ``branch_to`` give the complex current entering
    each branch at its from and to end when multiplied by the voltage
    vector.
    """

    ybus: sp.csr_matrix
    incidence: sp.csr_matrix
    primitive: PrimitiveAdmittance
    branch_from: sp.csr_matrix
    branch_to: sp.csr_matrix
    slack: int

    @property
    def order(self) -> int:
        return self.ybus.shape[0]

    @property
    def branch_ids(self) -> List[str]:
        return self.primitive.branch_ids


def bus_admittance(
    incidence: sp.spmatrix, primitive: PrimitiveAdmittance, slack: int = 0
) -> AdmittanceMatrix:
    """``Y = A^T diag(y) A`` plus the pi shunts on the diagonal.

    A branch with ratio ``t`` scales its from-node column by ``1/t``;
    for ``t = 1`` this is the plain incidence product.
    """
    A = sp.csr_matrix(incidence)
    nl, nn = A.shape
    y = primitive.series
    half = primitive.shunt_per_end
    inv_t = 1.0 / primitive.ratio

    Cf = A.maximum(0)  # +1 entries
    Ct = -A.minimum(0)  # -1 entries, sign flipped
    A_eff = sp.diags(inv_t) @ Cf - Ct
    ybus = A_eff.T @ sp.diags(y) @ A_eff
    shunt_bus = Cf.T @ (half * inv_t**2) + Ct.T @ half
    ybus = sp.csr_matrix(ybus + sp.diags(shunt_bus))

    yff = (y + half) * inv_t**2
    yft = -y * inv_t
    ytt = y + half
    branch_from = sp.csr_matrix(sp.diags(yff) @ Cf + sp.diags(yft) @ Ct)
    branch_to = sp.csr_matrix(sp.diags(yft) @ Cf + sp.diags(ytt) @ Ct)
    return AdmittanceMatrix(
        ybus=ybus,
        incidence=A,
        primitive=primitive,
        branch_from=branch_from,
        branch_to=branch_to,
        slack=slack,
    )


def build_admittance(pu: PerUnitGrid) -> AdmittanceMatrix:
    return bus_admittance(incidence_matrix(pu), primitive_admittance(pu), slack=pu.slack)


def islanded_nodes(adm: AdmittanceMatrix) -> List[int]:
    """Indices of buses not connected to the slack by an active branch."""
    A = adm.incidence
    if A.shape[0] == 0:
        return [i for i in range(adm.order) if i != adm.slack]
    adjacency = (abs(A).T @ abs(A)) != 0
    _, labels = connected_components(adjacency, directed=False)
    return [i for i in range(adm.order) if labels[i] != labels[adm.slack]]


# Newton-Raphson ----------------------------------------------------------

def power_derivatives(Y: sp.csr_matrix, V: np.ndarray):
    """Partial derivatives of complex bus injections w.r.t. |V| and angle."""
    I = Y @ V
    Vnorm = V / np.abs(V)
    diagV = sp.diags(V)
    diagI = sp.diags(I)
    diagVnorm = sp.diags(Vnorm)
    dS_dVm = diagV @ (Y @ diagVnorm).conj() + diagI.conj() @ diagVnorm
    dS_dVa = 1j * diagV @ (diagI - Y @ diagV).conj()
    return sp.csr_matrix(dS_dVm), sp.csr_matrix(dS_dVa)


def jacobian(Y: sp.csr_matrix, V: np.ndarray, pq: np.ndarray) -> sp.csc_matrix:
    dS_dVm, dS_dVa = power_derivatives(Y, V)
    a = dS_dVa[pq][:, pq]
    m = dS_dVm[pq][:, pq]
    return sp.csc_matrix(sp.bmat([[a.real, m.real], [a.imag, m.imag]]))


def mismatch(Y: sp.csr_matrix, V: np.ndarray, demand: np.ndarray, slack: int) -> np.ndarray:
    """Complex power mismatch ``S(V) + demand``, zero at the slack."""
    mis = V * np.conj(Y @ V) + demand
    mis[slack] = 0.0
    return mis


@dataclass(frozen=True)
class StepResult:
    V: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    worst_bus: int = 0


def solve_loadflow(
    adm: AdmittanceMatrix,
    demand: np.ndarray,
    slack_voltage: complex = 1.0 + 0.0j,
    *,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITERATIONS,
    check_islands: bool = True,
) -> StepResult:
    """Solve one load flow from a flat start.

    Args:
        adm: network matrices.
        demand: complex consumption per bus in pu (``P + jQ``).
        slack_voltage: fixed slack phasor.

    Returns:
        The last iterate; ``converged`` is False when the mismatch did
        not fall below ``tol`` within ``max_iter`` updates or an iterate
        stopped being finite.

    Raises:
        SingularJacobianError: some bus is not connected to the slack.
    """
    if check_islands:
        islands = islanded_nodes(adm)
        if islands:
            raise SingularJacobianError([str(i) for i in islands])

    Y = adm.ybus
    n = adm.order
    slack = adm.slack
    demand = np.asarray(demand, dtype=complex)
    if not np.all(np.isfinite(demand)):
        raise ValueError("demand must be finite")
    pq = np.array([i for i in range(n) if i != slack], dtype=int)
    npq = len(pq)

    V = np.full(n, slack_voltage, dtype=complex)
    Vm = np.abs(V)
    Va = np.angle(V)

    iterations = 0
    mis = mismatch(Y, V, demand, slack)
    norm = float(np.max(np.abs(mis))) if n else 0.0
    while norm >= tol and iterations < max_iter:
        J = jacobian(Y, V, pq)
        F = np.r_[mis[pq].real, mis[pq].imag]
        try:
            dx = spsolve(J, -F)
        except RuntimeError:
            dx = np.full(2 * npq, np.nan)
        if not np.all(np.isfinite(dx)):
            logger.warning(f"Newton step not finite at iteration {iterations}")
            break
        Va_new = Va.copy()
        Vm_new = Vm.copy()
        Va_new[pq] += dx[:npq]
        Vm_new[pq] += dx[npq:]
        V_new = Vm_new * np.exp(1j * Va_new)
        iterations += 1
        mis_new = mismatch(Y, V_new, demand, slack)
        if not (np.all(np.isfinite(V_new)) and np.all(np.isfinite(mis_new))):
            logger.warning(f"Iterate not finite at iteration {iterations}")
            break
        V, Vm, Va, mis = V_new, Vm_new, Va_new, mis_new
        norm = float(np.max(np.abs(mis)))

    converged = norm < tol
    if not converged:
        logger.debug(f"Load flow stopped after {iterations} iterations, mismatch {norm:.3e}")
    worst = int(np.argmax(np.abs(mis))) if n else 0
    return StepResult(
        V=V, converged=converged, iterations=iterations, max_mismatch=norm, worst_bus=worst
    )


# Multi-period ------------------------------------------------------------

@dataclass(frozen=True)
class InjectionProfile:
    """Nodal consumption over time, N x T, kW and kvar."""

    p_kw: np.ndarray
    q_kvar: np.ndarray
    dt_hours: float

    def __post_init__(self):
        if self.p_kw.ndim != 2 or self.p_kw.shape != self.q_kvar.shape:
            raise ValueError(
                f"P and Q must be N x T arrays of equal shape, got {self.p_kw.shape} and {self.q_kvar.shape}"
            )
        if self.dt_hours <= 0:
            raise ValueError("dt_hours must be positive")

    @property
    def steps(self) -> int:
        return self.p_kw.shape[1]

    def demand_pu(self, s_base: float) -> np.ndarray:
        return (self.p_kw + 1j * self.q_kvar) / s_base


@dataclass(frozen=True)
class LoadFlowResult:
    """Multi-period load-flow solution.

    ``V`` is N x T, ``I`` is B x T (from-end currents, pu on each
    branch's own base), ``slack_S`` has length T.  ``I_to`` holds the
    to-end currents when the solver produced the result.
    """

    V: np.ndarray
    I: np.ndarray
    slack_S: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    max_mismatch: np.ndarray
    worst_bus: np.ndarray
    node_ids: Sequence[str]
    branch_ids: Sequence[str]
    i_base_a: np.ndarray
    s_base: float
    I_to: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return self.V.shape[1]

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))

    @property
    def current_a(self) -> np.ndarray:
        return np.abs(self.I) * self.i_base_a[:, None]

    def voltages_frame(self) -> pd.DataFrame:
        n, t = self.V.shape
        return pd.DataFrame(
            {
                "step": np.tile(np.arange(t), n),
                "node_id": np.repeat(list(self.node_ids), t),
                "v_pu": np.abs(self.V).ravel(),
                "angle_deg": np.degrees(np.angle(self.V)).ravel(),
            }
        )

    def currents_frame(self) -> pd.DataFrame:
        b, t = self.I.shape
        return pd.DataFrame(
            {
                "step": np.tile(np.arange(t), b),
                "branch_id": np.repeat(list(self.branch_ids), t),
                "i_pu": np.abs(self.I).ravel(),
                "i_a": self.current_a.ravel(),
            }
        )


def multi_period_loadflow(
    pu: PerUnitGrid,
    profile: InjectionProfile,
    *,
    slack_voltage: complex = 1.0 + 0.0j,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITERATIONS,
    threads: Optional[int] = None,
    adm: Optional[AdmittanceMatrix] = None,
) -> LoadFlowResult:
    """Independent load flows for every step of ``profile``.

    Non-converged steps are flagged in ``converged``; the other steps
    are still solved.  ``threads`` comes from the runtime settings;
    ``None`` runs serially.

    Raises:
        SingularJacobianError: some bus is not connected to the slack.
    """
    if profile.p_kw.shape[0] != pu.n_nodes:
        raise ValueError(f"profile has {profile.p_kw.shape[0]} rows for {pu.n_nodes} nodes")
    adm = adm or build_admittance(pu)
    islands = islanded_nodes(adm)
    if islands:
        raise SingularJacobianError([pu.node_ids[i] for i in islands])

    demand = profile.demand_pu(pu.s_base)
    steps = profile.steps

    def run(t: int) -> StepResult:
        return solve_loadflow(
            adm, demand[:, t], slack_voltage, tol=tol, max_iter=max_iter, check_islands=False
        )

    workers = threads or 1
    if workers > 1 and steps > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(steps)))
    else:
        results = [run(t) for t in range(steps)]

    V = np.column_stack([r.V for r in results]) if steps else np.zeros((pu.n_nodes, 0), complex)
    I = adm.branch_from @ V
    S_bus = V * np.conj(adm.ybus @ V)
    converged = np.array([r.converged for r in results], dtype=bool)
    failed = int(np.sum(~converged))
    if failed:
        logger.warning(f"Load flow did not converge at {failed} of {steps} steps")
    branches = {b.id: b for b in pu.active_branches()}
    return LoadFlowResult(
        V=V,
        I=np.asarray(I),
        I_to=np.asarray(adm.branch_to @ V),
        slack_S=S_bus[pu.slack, :],
        converged=converged,
        iterations=np.array([r.iterations for r in results], dtype=int),
        max_mismatch=np.array([r.max_mismatch for r in results], dtype=float),
        worst_bus=np.array([r.worst_bus for r in results], dtype=int),
        node_ids=tuple(pu.node_ids),
        branch_ids=tuple(adm.branch_ids),
        i_base_a=np.array([branches[b].i_base_a for b in adm.branch_ids], dtype=float),
        s_base=pu.s_base,
    )
