"""
Per-unit conversion of a Grid.

Bases follow the usual single-phase-equivalent convention:
``Z_base = V_base**2 * 1000 / S_base`` with V in kV and S in kVA, and
``I_base = S_base / (sqrt(3) * V_base)`` in A.  A line takes the base
voltage of its endpoints, which must agree.  The transformer series
impedance is given per unit on its own rating and is rescaled to the
system base; its off-nominal ratio sits on the HV side.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import BaseVoltageMismatchError, MissingAttributeError
from ..models import Grid, VoltageLevel

logger = logging.getLogger(__name__)

DEFAULT_S_BASE_KVA = 100.0


def z_base(v_base_kv: float, s_base_kva: float) -> float:
    return v_base_kv**2 * 1000.0 / s_base_kva


def i_base(v_base_kv: float, s_base_kva: float) -> float:
    return s_base_kva / (math.sqrt(3.0) * v_base_kv)


@dataclass(frozen=True)
class PerUnitBranch:
    """A series branch in per unit on the system base.

    ``z`` is the series impedance, ``b`` the total shunt susceptance
    (split half to each end), ``ratio`` the off-nominal ratio on the
    from side.  ``ampacity`` is in per unit of the branch current base.
    """

    id: str
    kind: str  # "line" or "transformer"
    f: int
    t: int
    z: complex
    b: float
    ratio: float
    v_base_kv: float
    z_base_ohm: float
    i_base_a: float
    ampacity: Optional[float]
    active: bool = True


@dataclass(frozen=True)
class PerUnitGrid:
    s_base: float
    node_ids: Tuple[str, ...]
    slack: int
    v_base_kv: np.ndarray
    voltage_levels: Tuple[VoltageLevel, ...]
    nominal_power_kw: np.ndarray
    branches: Tuple[PerUnitBranch, ...]
    transformer_rating_kva: Optional[float] = None
    index: Dict[str, int] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def active_branches(self) -> List[PerUnitBranch]:
        return [b for b in self.branches if b.active]

    def branch_ids(self) -> List[str]:
        return [b.id for b in self.active_branches()]

    def line_branches(self) -> List[PerUnitBranch]:
        return [b for b in self.active_branches() if b.kind == "line"]


def _line_base_voltage(grid: Grid, line) -> float:
    v_from = grid.node(line.from_node).base_voltage
    v_to = grid.node(line.to_node).base_voltage
    if not math.isclose(v_from, v_to, rel_tol=1e-9):
        raise BaseVoltageMismatchError(
            f"line {line.id!r} joins {v_from} kV and {v_to} kV nodes"
        )
    return v_from


def to_per_unit(grid: Grid, s_base: float = DEFAULT_S_BASE_KVA) -> PerUnitGrid:
    """Convert a grid to per unit on ``s_base`` kVA.

    Lines taken out of service must still be convertible when they carry
    every attribute; an inactive line with missing data is dropped.

    Raises:
        MissingAttributeError: an active line lacks length or impedance
            data, or the transformer lacks its rating.
        BaseVoltageMismatchError: a line joins two base voltages.
    """
    if s_base <= 0:
        raise ValueError("s_base must be positive")
    index = grid.node_index()
    kinds = grid.line_kind_map()
    active = {line.id for line in grid.active_lines()}
    branches: List[PerUnitBranch] = []

    for line in grid.lines:
        kind = kinds[line.kind]
        missing = []
        if line.length is None:
            missing.append("length")
        if kind.r_per_km is None:
            missing.append("r_per_km")
        if kind.x_per_km is None:
            missing.append("x_per_km")
        if missing:
            if line.id in active:
                raise MissingAttributeError(f"line {line.id!r} lacks {', '.join(missing)}")
            logger.debug(f"Skipping inactive line {line.id} with missing {missing}")
            continue
        vb = _line_base_voltage(grid, line)
        zb = z_base(vb, s_base)
        ib = i_base(vb, s_base)
        z_ohm = complex(kind.r_per_km, kind.x_per_km) * line.length
        b_siemens = kind.b_per_km * 1e-6 * line.length
        branches.append(
            PerUnitBranch(
                id=line.id,
                kind="line",
                f=index[line.from_node],
                t=index[line.to_node],
                z=z_ohm / zb,
                b=b_siemens * zb,
                ratio=1.0,
                v_base_kv=vb,
                z_base_ohm=zb,
                i_base_a=ib,
                ampacity=None if kind.ampacity is None else kind.ampacity / ib,
                active=line.id in active,
            )
        )

    rating = None
    tr = grid.transformer
    if tr is not None:
        if tr.rated_s is None:
            raise MissingAttributeError(f"transformer {tr.id!r} lacks rated_s")
        rating = tr.rated_s
        vb = grid.node(tr.hv_node).base_voltage
        branches.append(
            PerUnitBranch(
                id=tr.id,
                kind="transformer",
                f=index[tr.hv_node],
                t=index[tr.lv_node],
                z=tr.series_impedance * s_base / tr.rated_s,
                b=0.0,
                ratio=tr.ratio,
                v_base_kv=vb,
                z_base_ohm=z_base(vb, s_base),
                i_base_a=i_base(vb, s_base),
                ampacity=None,
            )
        )

    return PerUnitGrid(
        s_base=s_base,
        node_ids=tuple(grid.node_ids()),
        slack=index[grid.slack_node],
        v_base_kv=np.array([n.base_voltage for n in grid.nodes], dtype=float),
        voltage_levels=tuple(n.voltage_level for n in grid.nodes),
        nominal_power_kw=np.array([n.nominal_power for n in grid.nodes], dtype=float),
        branches=tuple(branches),
        transformer_rating_kva=rating,
        index=index,
    )


@dataclass(frozen=True)
class OhmicBranch:
    r_ohm: float
    x_ohm: float
    b_siemens: float


def to_ohmic(pu: PerUnitGrid) -> Dict[str, OhmicBranch]:
    """Inverse conversion: ohmic R, X and total shunt B per branch.

    Transformer values are referred to the HV side.
    """
    out: Dict[str, OhmicBranch] = {}
    for br in pu.branches:
        z = br.z * br.z_base_ohm
        out[br.id] = OhmicBranch(r_ohm=z.real, x_ohm=z.imag, b_siemens=br.b / br.z_base_ohm)
    return out
