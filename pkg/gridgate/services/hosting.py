"""
Fair PV hosting capacity
~~~~~~~~~~~~~~~~~~~~~~~~

Allocates PV capacity ``alpha`` (kWp) to the load nodes of a grid by
minimising investment plus the lifetime electricity bill of the
prosumers plus ``lambda`` times the variance of the per-unit allocation,
subject to linearised voltage, line-current and transformer limits.

The bill is made convex with an epigraph variable per candidate and
daylight step.  Line currents are constrained as complex affine
functions inside a regular polygon inscribed in the ampacity circle,
the transformer power likewise inside its rating circle.  The problem
is a QP solved with cvxpy; the solver duals are checked against the KKT
conditions before a solution is accepted.

The cost is measured in units of ``c_cap * sum(p_nom)``, the investment
of one per-unit of PV at every candidate, and ``lambda`` weighs the
variance against that normalised cost.  In CHF the fairness
penalty is ``lambda * c_cap * sum(p_nom) * M_U``.

``lambda = inf`` enforces equal per-unit allocation exactly by solving
for one common level ``u`` with ``alpha = u * p_nom``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import cvxpy as cp
import numpy as np
import pandas as pd
import scipy.sparse as sp

from ..config import Settings
from ..errors import (
    DegenerateCandidateSetError,
    GridgateError,
    InfeasibleError,
    SolverStallError,
)
from ..models import EconomicParams, Grid, LimitSet
from .economics import (
    EpigraphCost,
    annual_to_present,
    capex,
    centering_operator,
    opex_bill,
    unfairness,
)
from .lf_validation import synthesize_injections
from .per_unit import PerUnitGrid, to_per_unit
from .powerflow import AdmittanceMatrix, InjectionProfile, build_admittance, multi_period_loadflow
from .profiles import NormalizedCurve, builtin_load_curve, builtin_pv_curve, check_compatible
from .sensitivity import SensitivitySet, StepLinearization, compute_sensitivities, linearize_step

logger = logging.getLogger(__name__)

DEFAULT_POLYGON_SIDES = 16
BINDING_TOLERANCE = 1e-6
FEASIBILITY_TOLERANCE = 1e-9


# Constraint assembly -------------------------------------------------------

@dataclass(frozen=True)
class LinearConstraints:
    """Rows ``A @ alpha <= b`` with a label per row."""

    A: np.ndarray
    b: np.ndarray
    labels: List[str]

    @classmethod
    def empty(cls, width: int) -> "LinearConstraints":
        return cls(np.zeros((0, width)), np.zeros(0), [])

    @classmethod
    def concat(cls, parts: Sequence["LinearConstraints"], width: int) -> "LinearConstraints":
        parts = [p for p in parts if len(p.b)]
        if not parts:
            return cls.empty(width)
        return cls(
            np.vstack([p.A for p in parts]),
            np.concatenate([p.b for p in parts]),
            [label for p in parts for label in p.labels],
        )

    def __len__(self) -> int:
        return len(self.b)

    def violated(self, alpha, tol: float = FEASIBILITY_TOLERANCE) -> List[str]:
        slack = self.b - self.A @ np.asarray(alpha, dtype=float)
        return [self.labels[i] for i in np.nonzero(slack < -tol)[0]]


def polygon_angles(sides: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(sides) / sides


def polygon_cuts(radius: float, sides: int = DEFAULT_POLYGON_SIDES) -> np.ndarray:
    """Half-planes ``cos(t) x + sin(t) y <= r cos(pi/K)``, rows ``[cos, sin, rhs]``.

    The polygon is inscribed in the circle of ``radius``.
    """
    theta = polygon_angles(sides)
    return np.column_stack([np.cos(theta), np.sin(theta), np.full(sides, radius * math.cos(math.pi / sides))])


def _complex_rows(base0: np.ndarray, coeff: np.ndarray, radius: np.ndarray, sides: int):
    """Polygon rows for complex affine maps ``base0 + coeff @ alpha``.

    Returns ``(A, b)`` stacked by angle, then by map row.
    """
    theta = polygon_angles(sides)
    rot = np.exp(-1j * theta)
    apothem = radius * math.cos(math.pi / sides)
    A = (rot[:, None, None] * coeff[None, :, :]).real
    b = apothem[None, :] - (rot[:, None] * base0[None, :]).real
    return A.reshape(-1, coeff.shape[1]), b.reshape(-1)


def build_grid_constraints(
    linearizations: Sequence[StepLinearization],
    pu: PerUnitGrid,
    branch_ids: Sequence[str],
    limits: Optional[LimitSet] = None,
    polygon_sides: int = DEFAULT_POLYGON_SIDES,
) -> LinearConstraints:
    """Linearised voltage, line-current and transformer rows on ``alpha``.

    Voltage rows cover every non-slack node, current rows every line
    with an ampacity, transformer rows the slack power against the
    transformer rating.
    """
    limits = limits or LimitSet()
    width = linearizations[0].voltage.coeff.shape[1] if linearizations else 0
    nodes = [i for i in range(pu.n_nodes) if i != pu.slack]
    band = np.array([limits.band(pu.voltage_levels[i]) for i in nodes])
    branches = {b.id: b for b in pu.active_branches()}
    lines = [k for k, bid in enumerate(branch_ids) if branches[bid].kind == "line" and branches[bid].ampacity]
    amp = np.array([branches[branch_ids[k]].ampacity for k in lines], dtype=float)
    rating = pu.transformer_rating_kva / pu.s_base if pu.transformer_rating_kva else None

    parts: List[LinearConstraints] = []
    for lin in linearizations:
        t = lin.step
        v = lin.voltage
        coeff = v.coeff[nodes]
        base0 = v.base[nodes] - coeff @ v.ref
        parts.append(
            LinearConstraints(
                np.vstack([coeff, -coeff]),
                np.concatenate([1.0 + band - base0, base0 - (1.0 - band)]),
                [f"v-max:{pu.node_ids[i]}@{t}" for i in nodes]
                + [f"v-min:{pu.node_ids[i]}@{t}" for i in nodes],
            )
        )
        if lines:
            c = lin.current
            coeff_i = c.coeff[lines]
            base_i = c.base[lines] - coeff_i @ c.ref
            A, b = _complex_rows(base_i, coeff_i, amp, polygon_sides)
            labels = [
                f"i:{branch_ids[k]}@{t}#{side}" for side in range(polygon_sides) for k in lines
            ]
            parts.append(LinearConstraints(A, b, labels))
        if rating is not None:
            s = lin.slack_power
            base_s = s.base - s.coeff @ s.ref
            A, b = _complex_rows(base_s, s.coeff, np.array([rating]), polygon_sides)
            parts.append(
                LinearConstraints(A, b, [f"trafo@{t}#{side}" for side in range(polygon_sides)])
            )
    return LinearConstraints.concat(parts, width)


# Problem --------------------------------------------------------------------

@dataclass(frozen=True)
class HostingProblem:
    """Immutable description of one hosting-capacity QP.

    ``load_kw`` is candidates x steps, ``pv`` the normalised PV curve,
    ``alpha_upper`` the per-candidate cap (nominal-power bound combined
    with any roof-potential cap).
    """

    node_ids: List[str]
    p_nom: np.ndarray
    load_kw: np.ndarray
    pv: np.ndarray
    dt_hours: float
    econ: EconomicParams
    lam: float
    alpha_upper: np.ndarray
    grid: LinearConstraints
    alpha_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.lam < 0 or math.isnan(self.lam):
            raise ValueError("lambda must be non-negative")
        if np.any(self.p_nom <= 0):
            raise ValueError("every candidate needs a positive nominal power")

    @property
    def size(self) -> int:
        return len(self.node_ids)

    @property
    def cost_unit(self) -> float:
        """CHF of one unit of normalised cost, ``c_cap * sum(p_nom)``."""
        return self.econ.c_cap * float(np.sum(self.p_nom))

    @property
    def perfect_fairness(self) -> bool:
        return math.isinf(self.lam)

    def with_lambda(self, lam: float) -> "HostingProblem":
        return replace(self, lam=float(lam))


def nominal_power_bounds(load_kw: np.ndarray, pv: np.ndarray, p_nom: np.ndarray) -> np.ndarray:
    """Largest ``alpha`` keeping ``P^L - alpha G >= -p_nom`` at every step."""
    day = pv > 0
    if not np.any(day):
        return np.zeros(len(p_nom))
    return np.min((load_kw[:, day] + p_nom[:, None]) / pv[None, day], axis=1)


@dataclass(frozen=True)
class QuadraticProgram:
    """``min q x + w |F y|^2 + const`` s.t. ``G x <= h``, ``x = [y; e]``.

    Cost terms are divided by ``scale`` (the cost unit), the variance
    term is not; ``alpha = T y``.
    """

    q: np.ndarray
    F: np.ndarray
    weight: float
    G: sp.csr_matrix
    h: np.ndarray
    labels: List[str]
    constant: float
    scale: float
    T: np.ndarray
    n_grid_rows: int
    n_box_rows: int
    day: np.ndarray

    @property
    def k(self) -> int:
        return self.T.shape[1]

    @property
    def n(self) -> int:
        return len(self.q)

    def hessian(self) -> np.ndarray:
        return 2.0 * self.weight * self.F.T @ self.F


def _prune(A: np.ndarray, b: np.ndarray, labels: List[str], upper: np.ndarray):
    """Drop rows that cannot bind inside ``0 <= y <= upper`` and normalise the rest."""
    worst = np.where(A > 0, A * upper[None, :], 0.0).sum(axis=1) if len(b) else np.zeros(0)
    keep = ~(worst <= b)
    scale = np.max(np.abs(A), axis=1) if len(b) else np.zeros(0)
    zero = scale == 0
    keep &= ~zero
    A = A[keep] / scale[keep][:, None]
    b = b[keep] / scale[keep]
    return A, b, [labels[i] for i in np.nonzero(keep)[0]]


def epigraph_reformulate(problem: HostingProblem) -> QuadraticProgram:
    """Assemble the convex QP.

    Each candidate and daylight step gets ``e >= c_plus dt x`` and
    ``e >= c_minus dt x`` with ``x = P^L - alpha G``; night steps are a
    constant.

    Raises:
        ConvexityViolatedError: ``c_plus < c_minus``.
        DegenerateCandidateSetError: fairness needs two candidates.
        InfeasibleError: ``alpha = 0`` breaks a grid row.
    """
    econ = problem.econ
    tariff = EpigraphCost.from_params(econ)
    C = problem.size
    if C < 1:
        raise DegenerateCandidateSetError("no candidate node")
    if problem.lam > 0 and C < 2:
        raise DegenerateCandidateSetError(f"{C} candidate(s), the fairness term needs at least 2")

    violated = problem.grid.violated(np.zeros(C))
    if violated:
        raise InfeasibleError(
            f"{len(violated)} grid constraint(s) violated without PV", violated
        )

    pv = problem.pv
    dt = problem.dt_hours
    day = np.nonzero(pv > 0)[0]
    night = np.setdiff1d(np.arange(len(pv)), day)
    Td = len(day)
    present = annual_to_present(econ)
    scale = problem.cost_unit

    if problem.perfect_fairness:
        T = problem.p_nom[:, None].copy()
        upper_y = np.array([np.min(problem.alpha_upper / problem.p_nom)])
        box_labels = ["level-max"]
        min_labels = ["level-min"]
    else:
        T = np.eye(C)
        upper_y = problem.alpha_upper.copy()
        box_labels = [f"alpha-max:{nid}" for nid in problem.node_ids]
        min_labels = [f"alpha-min:{nid}" for nid in problem.node_ids]
    k = T.shape[1]
    n = k + C * Td

    # grid rows on y
    Ag, bg, grid_labels = _prune(problem.grid.A @ T, problem.grid.b.copy(), problem.grid.labels, upper_y)
    logger.debug(f"Grid rows: {len(problem.grid)} assembled, {len(bg)} kept after pruning")

    blocks = []
    rhs = []
    labels: List[str] = []
    if len(bg):
        blocks.append(sp.hstack([sp.csr_matrix(Ag), sp.csr_matrix((len(bg), C * Td))]))
        rhs.append(bg)
        labels += grid_labels
    finite = np.isfinite(upper_y)
    eye = sp.identity(k, format="csr")
    blocks.append(sp.hstack([eye[finite], sp.csr_matrix((int(finite.sum()), C * Td))]))
    rhs.append(upper_y[finite])
    labels += [box_labels[i] for i in np.nonzero(finite)[0]]
    blocks.append(sp.hstack([-eye, sp.csr_matrix((k, C * Td))]))
    rhs.append(np.zeros(k))
    labels += min_labels
    n_box = int(finite.sum()) + k

    # epigraph rows
    if Td:
        load_day = problem.load_kw[:, day]
        for slope, tag in ((tariff.c_plus, "buy"), (tariff.c_minus, "sell")):
            # slope dt (P^L - (T y)_n G_t) - e_nt <= 0
            coef_y = -slope * dt * np.kron(T, pv[day][:, None])  # (C*Td) x k, row n*Td + j
            block = sp.hstack([sp.csr_matrix(coef_y), -sp.identity(C * Td, format="csr")])
            blocks.append(block)
            rhs.append((-slope * dt * load_day).reshape(-1))
            labels += [f"epi-{tag}:{nid}@{t}" for nid in problem.node_ids for t in day]

    G = sp.csr_matrix(sp.vstack(blocks))
    h = np.concatenate(rhs)

    night_cost = float(np.sum(tariff.minimal_epigraph(problem.load_kw[:, night])) * dt)
    q = np.concatenate([econ.c_cap * T.sum(axis=0), np.full(C * Td, present)]) / scale
    if problem.perfect_fairness or problem.lam == 0:
        F = np.zeros((C, k))
        weight = 0.0
    else:
        F = centering_operator(problem.p_nom) @ T
        weight = problem.lam / (C - 1)
    return QuadraticProgram(
        q=q,
        F=F,
        weight=weight,
        G=G,
        h=h,
        labels=labels,
        constant=present * night_cost / scale,
        scale=scale,
        T=T,
        n_grid_rows=len(bg),
        n_box_rows=n_box,
        day=day,
    )


# Solution -------------------------------------------------------------------

@dataclass(frozen=True)
class HostingSolution:
    """Optimal allocation at one ``lambda`` with its exact cost decomposition.

    ``epigraph`` holds the optimised bill variables, candidates x daylight
    steps, in CHF per step.
    """

    lam: float
    node_ids: List[str]
    p_nom: np.ndarray
    alpha: np.ndarray
    J_C: float
    J_O: float
    M_U: float
    solver_objective: float
    kkt_residual: float
    status: str
    binding: List[str] = field(default_factory=list)
    passes: int = 1
    cost_unit: float = 1.0
    epigraph: Optional[np.ndarray] = None

    @property
    def total_kwp(self) -> float:
        return float(np.sum(self.alpha))

    @property
    def cost(self) -> float:
        return self.J_C + self.J_O

    @property
    def fairness_penalty(self) -> float:
        """``lambda * M_U`` in CHF."""
        if math.isinf(self.lam):
            return 0.0
        return self.lam * self.cost_unit * self.M_U

    @property
    def objective(self) -> float:
        return self.cost + self.fairness_penalty

    @property
    def alpha_per_unit(self) -> np.ndarray:
        return self.alpha / self.p_nom

    def alpha_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "node_id": self.node_ids,
                "alpha_kwp": self.alpha,
                "alpha_per_unit": self.alpha_per_unit,
            }
        )


def kkt_residual(qp: QuadraticProgram, x: np.ndarray, z: np.ndarray) -> float:
    """Largest scaled violation of stationarity, feasibility and complementarity."""
    grad = qp.q.copy()
    grad[: qp.k] += qp.hessian() @ x[: qp.k]
    Gtz = qp.G.T @ z
    stationarity = np.max(np.abs(grad + Gtz)) / max(1.0, np.max(np.abs(qp.q)), np.max(np.abs(Gtz)))
    slack = qp.h - qp.G @ x
    primal = max(0.0, float(np.max(-slack))) / max(1.0, float(np.max(np.abs(qp.h))))
    dual = max(0.0, float(np.max(-z)))
    complementarity = float(np.max(np.abs(z * slack))) / max(1.0, float(np.max(np.abs(z))))
    return float(max(stationarity, primal, dual, complementarity))


def solve_hosting(
    problem: HostingProblem,
    *,
    solver: str = "CLARABEL",
    kkt_tolerance: float = 1e-6,
    qp: Optional[QuadraticProgram] = None,
) -> HostingSolution:
    """Solve the QP and report the exact cost decomposition.

    Raises:
        InfeasibleError: the solver proves infeasibility.
        SolverStallError: no certified optimum.
    """
    qp = qp or epigraph_reformulate(problem)
    x = cp.Variable(qp.n)
    objective = qp.q @ x
    if qp.weight > 0:
        objective = objective + qp.weight * cp.sum_squares(qp.F @ x[: qp.k])
    constraint = qp.G @ x <= qp.h
    prob = cp.Problem(cp.Minimize(objective), [constraint])
    try:
        prob.solve(solver=solver)
    except cp.error.SolverError as exc:
        raise SolverStallError(f"error: {exc}", float("inf")) from exc

    status = prob.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise InfeasibleError(f"solver reports {status}")
    if x.value is None or constraint.dual_value is None:
        raise SolverStallError(str(status), float("inf"))
    xv = np.asarray(x.value, dtype=float)
    z = np.asarray(constraint.dual_value, dtype=float)
    residual = kkt_residual(qp, xv, z)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or residual > kkt_tolerance:
        raise SolverStallError(str(status), residual)

    alpha = np.maximum(qp.T @ xv[: qp.k], 0.0)
    slack = qp.h - qp.G @ xv
    n_bound = qp.n_grid_rows + qp.n_box_rows
    tight = slack[:n_bound] <= BINDING_TOLERANCE * np.maximum(1.0, np.abs(qp.h[:n_bound]))
    binding = [
        qp.labels[i]
        for i in np.nonzero(tight)[0]
        if not qp.labels[i].startswith(("alpha-min", "level-min"))
    ]

    J_C = capex(alpha, problem.econ.c_cap)
    J_O = opex_bill(alpha, problem.load_kw, problem.pv, problem.econ, problem.dt_hours)
    M_U = unfairness(alpha, problem.p_nom) if problem.size >= 2 else 0.0
    solution = HostingSolution(
        lam=problem.lam,
        node_ids=list(problem.node_ids),
        p_nom=problem.p_nom,
        alpha=alpha,
        J_C=J_C,
        J_O=J_O,
        M_U=M_U,
        solver_objective=(float(prob.value) + qp.constant) * qp.scale,
        kkt_residual=residual,
        status=str(status),
        binding=binding,
        cost_unit=qp.scale,
        epigraph=xv[qp.k :].reshape(problem.size, len(qp.day)),
    )
    logger.info(
        f"lambda={problem.lam:g}: {solution.total_kwp:.2f} kWp, cost {solution.cost:.2f} CHF, "
        f"M_U {M_U:.3e}, KKT {residual:.1e}"
    )
    return solution


# Sweep ----------------------------------------------------------------------

@dataclass(frozen=True)
class ParetoRow:
    lam: float
    solution: Optional[HostingSolution] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.solution is not None


PARETO_COLUMNS = ["lambda", "unfairness_pu2", "cost_chf", "total_kwp", "kkt_residual"]


def pareto_frame(rows: Sequence[ParetoRow]) -> pd.DataFrame:
    records = []
    for row in rows:
        s = row.solution
        records.append(
            {
                "lambda": row.lam,
                "unfairness_pu2": s.M_U if s else np.nan,
                "cost_chf": s.cost if s else np.nan,
                "total_kwp": s.total_kwp if s else np.nan,
                "kkt_residual": s.kkt_residual if s else np.nan,
            }
        )
    return pd.DataFrame.from_records(records, columns=PARETO_COLUMNS)


def fairness_price_frame(rows: Sequence[ParetoRow]) -> pd.DataFrame:
    """Cost increase of each row over the ``lambda = 0`` row, CHF and percent."""
    base = next((r.solution for r in rows if r.ok and r.lam == 0), None)
    records = []
    for row in rows:
        s = row.solution
        if s is None or base is None:
            records.append({"lambda": row.lam, "price_chf": np.nan, "price_pct": np.nan})
            continue
        price = s.cost - base.cost
        pct = 100.0 * price / abs(base.cost) if base.cost else np.nan
        records.append({"lambda": row.lam, "price_chf": price, "price_pct": pct})
    return pd.DataFrame.from_records(records, columns=["lambda", "price_chf", "price_pct"])


def run_sweep(lambdas: Sequence[float], solve: Callable[[float], HostingSolution]) -> List[ParetoRow]:
    """Call ``solve`` once per ``lambda``; a failing row is recorded and the sweep goes on."""
    lambdas = [float(v) for v in lambdas]
    if any(b < a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda values must be sorted ascending")
    rows = []
    for lam in lambdas:
        try:
            rows.append(ParetoRow(lam, solve(lam)))
        except GridgateError as exc:
            logger.warning(f"lambda={lam:g} failed: {exc}")
            rows.append(ParetoRow(lam, error=f"{type(exc).__name__}: {exc}"))
    return rows


def sweep_lambda(problem: HostingProblem, lambdas: Sequence[float], **solve_options) -> List[ParetoRow]:
    """Pareto rows of ``problem`` at fixed linearisation."""
    return run_sweep(lambdas, lambda lam: solve_hosting(problem.with_lambda(lam), **solve_options))


# Study ----------------------------------------------------------------------

@dataclass(frozen=True)
class FeasibilityCertificate:
    """Worst limit excursions of the exact load flow with PV installed."""

    voltage_excess_pu: float
    current_overload: float
    transformer_overload: float
    converged: bool
    worst_node: Optional[str] = None
    worst_line: Optional[str] = None

    def within(self, voltage_margin: float = 5e-3, current_margin: float = 0.02) -> bool:
        return (
            self.converged
            and self.voltage_excess_pu < voltage_margin
            and self.current_overload < current_margin
            and self.transformer_overload < current_margin
        )


class HostingStudy:
    """Hosting-capacity analysis of one grid under fixed curves and settings.

    Linearisations are cached per operating point, so solving several
    ``lambda`` values reuses the load flows and sensitivities.
    """

    def __init__(
        self,
        grid: Grid,
        settings: Optional[Settings] = None,
        load_curve: Optional[NormalizedCurve] = None,
        pv_curve: Optional[NormalizedCurve] = None,
        *,
        alpha_max: Optional[Mapping[str, float]] = None,
    ):
        self.grid = grid
        self.settings = settings or Settings()
        dt = self.settings.dt_hours
        self.load_curve = load_curve or builtin_load_curve(dt)
        self.pv_curve = pv_curve or builtin_pv_curve(dt)
        check_compatible(self.load_curve, self.pv_curve)
        self.econ = self.settings.economics.to_params()
        self.limits = self.settings.limits.to_limit_set()
        self.pu: PerUnitGrid = to_per_unit(grid, self.settings.grid.s_base_kva)
        self.adm: AdmittanceMatrix = build_admittance(self.pu)

        loads = grid.load_nodes()
        if not loads:
            raise DegenerateCandidateSetError("grid has no load node")
        self.candidate_ids = [n.id for n in loads]
        self.candidates = np.array([self.pu.index[nid] for nid in self.candidate_ids], dtype=int)
        self.p_nom = np.array([n.nominal_power for n in loads], dtype=float)
        self.load_kw = np.outer(self.p_nom, self.load_curve.values)
        self.pv = self.pv_curve.values
        self.day = np.nonzero(self.pv > 0)[0]

        upper = nominal_power_bounds(self.load_kw, self.pv, self.p_nom)
        if alpha_max:
            caps = np.array([alpha_max.get(nid, np.inf) for nid in self.candidate_ids])
            upper = np.minimum(upper, caps)
        self.alpha_upper = upper
        self._cache: Dict[bytes, LinearConstraints] = {}

    # -- linearisation

    def _installed(self, alpha: Optional[np.ndarray]) -> np.ndarray:
        installed = np.zeros(self.pu.n_nodes)
        if alpha is not None:
            installed[self.candidates] = alpha
        return installed

    def _operating_points(self, alpha_ref: Optional[np.ndarray], steps: np.ndarray):
        profile = synthesize_injections(
            self.grid,
            self.load_curve,
            self.pv_curve,
            self._installed(alpha_ref),
            power_factor=self.settings.profiles.power_factor,
        )
        profile = InjectionProfile(profile.p_kw[:, steps], profile.q_kvar[:, steps], profile.dt_hours)
        return multi_period_loadflow(
            self.pu,
            profile,
            slack_voltage=self.settings.grid.slack_voltage_pu,
            tol=self.settings.powerflow.tolerance,
            max_iter=self.settings.powerflow.max_iterations,
            threads=self.settings.runtime.threads,
            adm=self.adm,
        )

    def sensitivities(self, alpha_ref: Optional[np.ndarray] = None) -> List[SensitivitySet]:
        """Sensitivities at every daylight step with ``alpha_ref`` installed."""
        result = self._operating_points(alpha_ref, self.day)
        if not result.all_converged:
            raise InfeasibleError("load flow at the linearisation point did not converge")

        def one(j: int) -> SensitivitySet:
            return compute_sensitivities(self.adm, result.V[:, j], step=int(self.day[j]))

        workers = self.settings.runtime.threads
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(one, range(len(self.day))))
        return [one(j) for j in range(len(self.day))]

    def linearizations(self, alpha_ref: Optional[np.ndarray] = None) -> List[StepLinearization]:
        """Affine predictors at every daylight step around ``alpha_ref``."""
        return [
            linearize_step(sens, float(self.pv[sens.step]), self.candidates, self.pu.s_base, alpha_ref)
            for sens in self.sensitivities(alpha_ref)
        ]

    def constraints(self, alpha_ref: Optional[np.ndarray] = None) -> LinearConstraints:
        key = b"" if alpha_ref is None else np.asarray(alpha_ref, dtype=float).tobytes()
        if key not in self._cache:
            self._cache[key] = build_grid_constraints(
                self.linearizations(alpha_ref),
                self.pu,
                self.adm.branch_ids,
                self.limits,
                self.settings.hosting.polygon_sides,
            )
        return self._cache[key]

    # -- solving

    def problem(self, lam: float, alpha_ref: Optional[np.ndarray] = None) -> HostingProblem:
        return HostingProblem(
            node_ids=list(self.candidate_ids),
            p_nom=self.p_nom,
            load_kw=self.load_kw,
            pv=self.pv,
            dt_hours=self.load_curve.dt_hours,
            econ=self.econ,
            lam=float(lam),
            alpha_upper=self.alpha_upper,
            grid=self.constraints(alpha_ref),
            alpha_ref=alpha_ref,
        )

    def _solve_options(self) -> dict:
        h = self.settings.hosting
        return {"solver": h.solver, "kkt_tolerance": h.kkt_tolerance}

    def solve(self, lam: float, refine_passes: Optional[int] = None) -> HostingSolution:
        """Solve at ``lam``, re-linearising around the optimum up to ``refine_passes`` times."""
        passes = refine_passes or self.settings.hosting.refine_passes
        tolerance = self.settings.hosting.refine_tolerance_kwp
        solution = solve_hosting(self.problem(lam), **self._solve_options())
        for p in range(2, passes + 1):
            try:
                refined = solve_hosting(self.problem(lam, solution.alpha), **self._solve_options())
            except GridgateError as exc:
                logger.warning(f"Refinement pass {p} failed, keeping pass {p - 1}: {exc}")
                break
            step = float(np.max(np.abs(refined.alpha - solution.alpha)))
            solution = replace(refined, passes=p)
            logger.debug(f"Refinement pass {p}: |d alpha| = {step:.3f} kWp")
            if step < tolerance:
                break
        return solution

    def sweep(self, lambdas: Optional[Sequence[float]] = None, refine_passes: Optional[int] = None) -> List[ParetoRow]:
        lambdas = lambdas if lambdas is not None else self.settings.hosting.lambdas
        return run_sweep(lambdas, lambda lam: self.solve(lam, refine_passes))

    # -- certificate

    def verify(self, solution: HostingSolution) -> FeasibilityCertificate:
        """Exact multi-period load flow with ``solution.alpha`` installed."""
        result = self._operating_points(solution.alpha, np.arange(self.pv_curve.steps))
        vm = np.abs(result.V)
        band = np.array([self.limits.band(level) for level in self.pu.voltage_levels])
        excess = np.maximum(vm - (1.0 + band)[:, None], (1.0 - band)[:, None] - vm)
        excess[self.pu.slack] = -np.inf
        node_row = int(np.argmax(np.max(excess, axis=1)))
        voltage_excess = max(0.0, float(np.max(excess)))

        branches = {b.id: b for b in self.pu.active_branches()}
        worst_line, overload = None, 0.0
        for k, bid in enumerate(result.branch_ids):
            br = branches[bid]
            if br.kind != "line" or not br.ampacity:
                continue
            ratio = float(np.max(np.abs(result.I[k]))) / br.ampacity - 1.0
            if ratio > overload:
                worst_line, overload = bid, ratio
        trafo = 0.0
        if self.pu.transformer_rating_kva:
            s = np.abs(result.slack_S) * self.pu.s_base / self.pu.transformer_rating_kva
            trafo = max(0.0, float(np.max(s)) - 1.0)
        return FeasibilityCertificate(
            voltage_excess_pu=voltage_excess,
            current_overload=overload,
            transformer_overload=trafo,
            converged=result.all_converged,
            worst_node=self.pu.node_ids[node_row] if voltage_excess > 0 else None,
            worst_line=worst_line,
        )
