"""
Sensitivity coefficients of voltage and current magnitudes with respect
to nodal active-power consumption, and the affine predictors built from
them.

The coefficients come from the load-flow Jacobian at a converged
operating point: for every PQ bus ``n`` the system ``J dx = [-e_n; 0]``
is solved, holding the slack voltage and every reactive injection
fixed.  All quantities are per unit per per unit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.sparse.linalg import splu

from ..errors import SingularSystemError
from .powerflow import AdmittanceMatrix, jacobian

logger = logging.getLogger(__name__)

ZERO_CURRENT_PU = 1e-9


@dataclass(frozen=True)
class SensitivitySet:
    """Derivatives at one operating point.

    ``dV_dP`` is N x N, ``dI_dP`` is B x N (magnitudes).  The complex
    derivatives ``dVc_dP`` and ``dIc_dP`` are kept for linearising
    quantities whose magnitude is not smooth.  Slack rows and columns
    are zero.
    """

    dV_dP: np.ndarray
    dI_dP: np.ndarray
    dVc_dP: np.ndarray
    dIc_dP: np.ndarray
    dSslack_dP: np.ndarray
    V: np.ndarray
    I: np.ndarray
    slack_S: complex
    step: Optional[int] = None

    @property
    def dPslack_dP(self) -> np.ndarray:
        return self.dSslack_dP.real

    @property
    def dQslack_dP(self) -> np.ndarray:
        return self.dSslack_dP.imag


def compute_sensitivities(
    adm: AdmittanceMatrix, V: np.ndarray, step: Optional[int] = None
) -> SensitivitySet:
    """Sensitivities at the converged voltages ``V``.

    Raises:
        SingularSystemError: the Jacobian cannot be factorised.
    """
    Y = adm.ybus
    n = adm.order
    slack = adm.slack
    V = np.asarray(V, dtype=complex)
    pq = np.array([i for i in range(n) if i != slack], dtype=int)
    npq = len(pq)

    J = jacobian(Y, V, pq)
    try:
        lu = splu(J)
    except RuntimeError as exc:
        raise SingularSystemError(f"Jacobian is singular: {exc}") from exc

    rhs = np.zeros((2 * npq, npq))
    rhs[np.arange(npq), np.arange(npq)] = -1.0
    dx = lu.solve(rhs)
    if not np.all(np.isfinite(dx)):
        raise SingularSystemError("non-finite sensitivities")
    dVa = dx[:npq, :]
    dVm = dx[npq:, :]

    Vm = np.abs(V)
    dVc = np.zeros((n, n), dtype=complex)
    dVc[np.ix_(pq, pq)] = V[pq, None] * (dVm / Vm[pq, None] + 1j * dVa)
    dV = np.zeros((n, n))
    dV[np.ix_(pq, pq)] = dVm

    I = adm.branch_from @ V
    dIc = adm.branch_from @ dVc
    Imag = np.abs(I)
    dI = np.empty_like(dIc, dtype=float)
    small = Imag < ZERO_CURRENT_PU
    dI[~small] = (np.conj(I[~small, None]) * dIc[~small]).real / Imag[~small, None]
    dI[small] = np.abs(dIc[small])

    S_slack = V[slack] * np.conj((Y @ V)[slack])
    dS = V[slack] * np.conj(np.asarray(Y[slack, :] @ dVc).ravel())
    return SensitivitySet(
        dV_dP=dV,
        dI_dP=dI,
        dVc_dP=dVc,
        dIc_dP=dIc,
        dSslack_dP=dS,
        V=V,
        I=I,
        slack_S=complex(S_slack),
        step=step,
    )


@dataclass(frozen=True)
class AffineMap:
    """``base + coeff @ (alpha - ref)``; real or complex."""

    base: np.ndarray
    coeff: np.ndarray
    ref: np.ndarray

    def predict(self, alpha) -> np.ndarray:
        return self.base + self.coeff @ (np.asarray(alpha, dtype=float) - self.ref)


@dataclass(frozen=True)
class StepLinearization:
    """Affine predictors of one time step as functions of installed kWp."""

    step: int
    generation: float
    voltage: AffineMap
    current_magnitude: AffineMap
    current: AffineMap
    slack_power: AffineMap


def linearize_step(
    sens: SensitivitySet,
    generation: float,
    candidates: Sequence[int],
    s_base: float,
    alpha_ref: Optional[np.ndarray] = None,
    step: Optional[int] = None,
) -> StepLinearization:
    """Predictors in terms of kWp at the ``candidates`` buses.

    Installing ``alpha`` kWp lowers the consumption at a bus by
    ``alpha * generation`` kW, so each column is the sensitivity times
    ``-generation / s_base``.  ``alpha_ref`` is the PV installation the
    operating point was computed with (zero by default).
    """
    cols = np.asarray(candidates, dtype=int)
    ref = np.zeros(len(cols)) if alpha_ref is None else np.asarray(alpha_ref, dtype=float)
    scale = -generation / s_base
    return StepLinearization(
        step=sens.step if step is None else step,
        generation=generation,
        voltage=AffineMap(np.abs(sens.V), sens.dV_dP[:, cols] * scale, ref),
        current_magnitude=AffineMap(np.abs(sens.I), sens.dI_dP[:, cols] * scale, ref),
        current=AffineMap(sens.I, sens.dIc_dP[:, cols] * scale, ref),
        slack_power=AffineMap(
            np.array([sens.slack_S]), sens.dSslack_dP[cols][None, :] * scale, ref
        ),
    )


def sensitivities_frame(
    sens: SensitivitySet, node_ids: Sequence[str], branch_ids: Sequence[str]
) -> pd.DataFrame:
    """Long-format dump of the magnitude sensitivities for debugging."""
    frames = []
    for label, matrix, rows in (("dV_dP", sens.dV_dP, node_ids), ("dI_dP", sens.dI_dP, branch_ids)):
        r, c = np.nonzero(matrix)
        frames.append(
            pd.DataFrame(
                {
                    "step": sens.step if sens.step is not None else -1,
                    "quantity": label,
                    "row_id": [rows[i] for i in r],
                    "injection_node": [node_ids[j] for j in c],
                    "value": matrix[r, c],
                }
            )
        )
    return pd.concat(frames, ignore_index=True)
