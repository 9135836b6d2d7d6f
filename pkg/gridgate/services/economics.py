"""
Economics of PV allocations: investment, electricity bill and the
spatial unfairness metric.

Bills are computed from one representative day, scaled by 365 and by
the NPV factor of the plant lifetime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConvexityViolatedError, DegenerateCandidateSetError
from ..models import EconomicParams

DAYS_PER_YEAR = 365.0


def npv_factor(discount: float, years: float) -> float:
    """``(1 - (1 + i)**-r) / i``; the undiscounted limit ``i -> 0`` is ``r``."""
    if discount < 0:
        raise ValueError("discount rate must be non-negative")
    if years < 0:
        raise ValueError("lifespan must be non-negative")
    if discount == 0:
        return float(years)
    return (1.0 - (1.0 + discount) ** (-years)) / discount


def annual_to_present(econ: EconomicParams) -> float:
    """Multiplier from one day's cash flow to its present value."""
    return DAYS_PER_YEAR * npv_factor(econ.discount, econ.lifespan)


def capex(alpha, c_cap: float) -> float:
    return float(c_cap * np.sum(alpha))


def net_load(alpha, load_kw: np.ndarray, pv: np.ndarray) -> np.ndarray:
    """``P^L - alpha * G`` per candidate and step, kW."""
    return np.asarray(load_kw, dtype=float) - np.outer(np.asarray(alpha, dtype=float), pv)


def daily_bill(alpha, load_kw: np.ndarray, pv: np.ndarray, econ: EconomicParams, dt_hours: float) -> float:
    """Bill of one day in CHF: imports at ``c_plus``, exports credited at ``c_minus``."""
    x = net_load(alpha, load_kw, pv)
    imports = np.maximum(x, 0.0)
    exports = np.maximum(-x, 0.0)
    return float(np.sum(econ.c_plus * imports - econ.c_minus * exports) * dt_hours)


def opex_bill(alpha, load_kw: np.ndarray, pv: np.ndarray, econ: EconomicParams, dt_hours: float) -> float:
    """Present value of the lifetime electricity bill."""
    return daily_bill(alpha, load_kw, pv, econ, dt_hours) * annual_to_present(econ)


def unfairness(alpha, p_nom) -> float:
    """Sample variance of the per-unit allocation ``alpha / p_nom``.

    Raises:
        DegenerateCandidateSetError: fewer than two candidates.
    """
    p_nom = np.asarray(p_nom, dtype=float)
    if p_nom.size < 2:
        raise DegenerateCandidateSetError(f"{p_nom.size} candidate(s), need at least 2")
    if np.any(p_nom <= 0):
        raise ValueError("nominal powers of candidates must be positive")
    return float(np.var(np.asarray(alpha, dtype=float) / p_nom, ddof=1))


def centering_operator(p_nom) -> np.ndarray:
    """``L`` with ``unfairness(alpha) = |L alpha|**2 / (C - 1)``."""
    p_nom = np.asarray(p_nom, dtype=float)
    c = p_nom.size
    centre = np.eye(c) - np.full((c, c), 1.0 / c)
    return centre @ np.diag(1.0 / p_nom)


@dataclass(frozen=True)
class EpigraphCost:
    """Convex two-piece tariff ``max(c_plus * x, c_minus * x)``.

    Minimising an auxiliary ``e`` with ``e >= c_plus * x`` and
    ``e >= c_minus * x`` gives back ``c_plus [x]+ - c_minus [x]-`` only
    when ``c_plus >= c_minus``.
    """

    c_plus: float
    c_minus: float

    def __post_init__(self):
        if self.c_plus < self.c_minus:
            raise ConvexityViolatedError(
                f"retail tariff {self.c_plus} below feed-in tariff {self.c_minus}"
            )

    @classmethod
    def from_params(cls, econ: EconomicParams) -> "EpigraphCost":
        return cls(econ.c_plus, econ.c_minus)

    @property
    def slopes(self) -> np.ndarray:
        return np.array([self.c_plus, self.c_minus])

    def minimal_epigraph(self, x):
        """Smallest ``e`` satisfying both pieces."""
        x = np.asarray(x, dtype=float)
        return np.maximum(self.c_plus * x, self.c_minus * x)

    def piecewise(self, x):
        x = np.asarray(x, dtype=float)
        return self.c_plus * np.maximum(x, 0.0) - self.c_minus * np.maximum(-x, 0.0)
