"""
Exception hierarchy for gridgate.

Every error raised on purpose by the library derives from
``GridgateError`` so the command line can map families of failures to
exit codes without catching unrelated exceptions.
"""

from __future__ import annotations

from typing import Any, List, Optional, Sequence


class GridgateError(Exception):
    """Base class for all gridgate errors."""


# Grid file ---------------------------------------------------------------

class GridFileError(GridgateError):
    """The grid file could not be turned into a Grid."""


class GridParseError(GridFileError):
    """Malformed syntax in the grid file."""


class GridSchemaError(GridFileError):
    """A field has the wrong type or breaks a record invariant."""


class GridReferenceError(GridFileError):
    """A record references a node, line or line kind that does not exist."""


# Per-unit ----------------------------------------------------------------

class MissingAttributeError(GridgateError):
    """An attribute needed for electrical modelling is absent."""


class BaseVoltageMismatchError(GridgateError):
    """The two endpoints of a line have different base voltages."""


# Rules -------------------------------------------------------------------

class MissingCoordinatesError(GridgateError):
    """A node needed for a geographic check has no GPS position."""


# Load flow ---------------------------------------------------------------

class LoadFlowError(GridgateError):
    """Base class for load-flow failures that are not a plain non-convergence."""


class ZeroImpedanceError(LoadFlowError):
    """A branch has a series impedance too small to invert."""

    def __init__(self, branch_id: str, magnitude: float):
        super().__init__(f"branch {branch_id!r} has |z| = {magnitude:.3g} pu")
        self.branch_id = branch_id
        self.magnitude = magnitude


class SingularJacobianError(LoadFlowError):
    """The network has buses that are not connected to the slack."""

    def __init__(self, islanded: Sequence[str]):
        names = ", ".join(islanded[:10])
        more = "" if len(islanded) <= 10 else f" (+{len(islanded) - 10} more)"
        super().__init__(f"islanded buses: {names}{more}")
        self.islanded = list(islanded)


# Profiles ----------------------------------------------------------------

class CurveError(GridgateError):
    """A time series curve is unusable."""


class CurveFormatError(CurveError):
    """A curve file lacks the ``value`` column or holds non-numeric values."""


class LengthMismatchError(CurveError):
    """The curve does not cover exactly one day."""


class NegativeValueError(CurveError):
    """The curve contains a negative value."""


class CurveRangeError(CurveError):
    """A normalised curve exceeds 1.0."""


class CurveMismatchError(CurveError):
    """Two curves do not share the same step and length."""


# Validation --------------------------------------------------------------

class PrerequisiteFailedError(GridgateError):
    """Advanced validation was requested on a grid with blocking findings."""

    def __init__(self, findings: Sequence[Any]):
        super().__init__(
            f"{len(findings)} error-severity finding(s) from basic validation"
        )
        self.findings = list(findings)


# Sensitivity -------------------------------------------------------------

class SingularSystemError(GridgateError):
    """The linearised injection equations cannot be solved at this point."""


# Hosting -----------------------------------------------------------------

class HostingError(GridgateError):
    """Base class for hosting-capacity optimisation failures."""


class ConvexityViolatedError(HostingError):
    """Retail tariff below feed-in tariff: the bill is no longer convex."""


class DegenerateCandidateSetError(HostingError):
    """Fewer than two candidate nodes, the variance is undefined."""


class InfeasibleError(HostingError):
    """The assembled problem has no feasible point."""

    def __init__(self, message: str, violated: Optional[List[str]] = None):
        super().__init__(message)
        self.violated = list(violated or [])


class SolverStallError(HostingError):
    """The solver stopped without a certified optimum."""

    def __init__(self, status: str, residual: float):
        super().__init__(f"solver status {status!r}, KKT residual {residual:.3e}")
        self.status = status
        self.residual = residual
