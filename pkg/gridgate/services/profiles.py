"""
Normalised daily curves for PV production and household consumption.

A curve holds one value per time step of a single day, relative to
1 kWp of PV or to the nominal power of a load.  Curves are read from a
CSV with a ``value`` column or taken from the built-in shapes.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Union

import numpy as np
import pandas as pd

from ..errors import (
    CurveFormatError,
    CurveMismatchError,
    CurveRangeError,
    LengthMismatchError,
    NegativeValueError,
)

logger = logging.getLogger(__name__)

DEFAULT_DT_HOURS = 1.0 / 6.0
HOURS_PER_DAY = 24.0
_RANGE_SLACK = 1e-12

# Typical household day, hourly, 00h to 23h.
HOUSEHOLD_DAY = np.array(
    [
        0.6, 0.55, 0.5, 0.45, 0.45, 0.5,
        0.7, 0.9, 1.0, 0.9, 0.8, 0.9,
        1.0, 0.95, 0.85, 0.8, 0.9, 1.2,
        1.4, 1.3, 1.1, 0.9, 0.8, 0.7,
    ]
)


@dataclass(frozen=True)
class NormalizedCurve:
    """Per-unit daily series sampled every ``dt_hours``."""

    values: np.ndarray
    dt_hours: float = DEFAULT_DT_HOURS

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.dt_hours <= 0:
            raise LengthMismatchError("time step must be positive")
        if not math.isclose(len(values) * self.dt_hours, HOURS_PER_DAY, rel_tol=1e-9):
            raise LengthMismatchError(
                f"{len(values)} steps of {self.dt_hours:.6g} h do not cover 24 h"
            )
        if np.any(~np.isfinite(values)):
            raise NegativeValueError("curve contains non-finite values")
        if np.any(values < 0):
            k = int(np.argmin(values))
            raise NegativeValueError(f"value {values[k]} at step {k} is negative")
        if np.any(values > 1.0 + _RANGE_SLACK):
            k = int(np.argmax(values))
            raise CurveRangeError(f"value {values[k]} at step {k} exceeds 1.0")

    @property
    def steps(self) -> int:
        return len(self.values)

    @property
    def hours(self) -> np.ndarray:
        return np.arange(self.steps) * self.dt_hours

    def energy(self) -> float:
        """Daily energy per unit of nominal power, in hours."""
        return float(np.sum(self.values) * self.dt_hours)

    def peak(self) -> float:
        return float(np.max(self.values))

    def peak_step(self) -> int:
        return int(np.argmax(self.values))


def load_curve(path: Union[str, os.PathLike], dt_hours: float = DEFAULT_DT_HOURS) -> NormalizedCurve:
    """Read a curve from a CSV with a ``value`` header.

    Raises:
        CurveFormatError: no ``value`` column, or a non-numeric value.
        LengthMismatchError: the rows do not cover exactly one day.
        NegativeValueError: a value is negative.
        CurveRangeError: a value exceeds 1.0.
    """
    frame = pd.read_csv(path)
    if "value" not in frame.columns:
        raise CurveFormatError(f"{path}: missing 'value' column")
    values = pd.to_numeric(frame["value"], errors="coerce")
    if values.isna().any():
        row = int(values.isna().to_numpy().argmax())
        raise CurveFormatError(f"{path}: row {row + 1} is not a number")
    curve = NormalizedCurve(values.to_numpy(dtype=float), dt_hours)
    logger.debug(f"Loaded {curve.steps}-step curve from {path}")
    return curve


def write_curve(curve: NormalizedCurve, path: Union[str, os.PathLike]) -> None:
    pd.DataFrame({"value": curve.values}).to_csv(path, index=False)


def builtin_pv_curve(dt_hours: float = DEFAULT_DT_HOURS) -> NormalizedCurve:
    """Clear-sky bell: ``max(0, sin(pi (h - 6) / 12)) ** 1.2``, peak 1 at noon."""
    steps = int(round(HOURS_PER_DAY / dt_hours))
    h = np.arange(steps) * dt_hours
    values = np.clip(np.sin(np.pi * (h - 6.0) / 12.0), 0.0, None) ** 1.2
    values[(h < 6.0) | (h > 18.0)] = 0.0
    return NormalizedCurve(values, dt_hours)


def builtin_load_curve(dt_hours: float = DEFAULT_DT_HOURS) -> NormalizedCurve:
    """Household day interpolated periodically from hourly values, peak 1.0 at 18h."""
    steps = int(round(HOURS_PER_DAY / dt_hours))
    h = np.arange(steps) * dt_hours
    hourly = HOUSEHOLD_DAY / HOUSEHOLD_DAY.max()
    values = np.interp(h, np.arange(24.0), hourly, period=24.0)
    return NormalizedCurve(values, dt_hours)


def constant_curve(level: float, dt_hours: float = DEFAULT_DT_HOURS) -> NormalizedCurve:
    steps = int(round(HOURS_PER_DAY / dt_hours))
    return NormalizedCurve(np.full(steps, float(level)), dt_hours)


def scale_to_node(curve: NormalizedCurve, nominal_power_kw: float) -> np.ndarray:
    """kW series of a node with the given nominal power."""
    if nominal_power_kw < 0:
        raise ValueError("nominal power must be non-negative")
    return curve.values * nominal_power_kw


def reactive_curve(active: Union[NormalizedCurve, np.ndarray], power_factor: float = 0.9) -> np.ndarray:
    """Lagging reactive demand matching ``active`` at a fixed power factor."""
    if not 0 < power_factor <= 1:
        raise ValueError("power factor must be in (0, 1]")
    values = active.values if isinstance(active, NormalizedCurve) else np.asarray(active, dtype=float)
    return values * math.tan(math.acos(power_factor))


def check_compatible(a: NormalizedCurve, b: NormalizedCurve) -> None:
    """Raise CurveMismatchError unless the curves share step and length."""
    if a.steps != b.steps or not math.isclose(a.dt_hours, b.dt_hours, rel_tol=1e-12):
        raise CurveMismatchError(
            f"curves differ: {a.steps} x {a.dt_hours:.6g} h vs {b.steps} x {b.dt_hours:.6g} h"
        )
