"""
Pydantic data models for gridgate.

These models define the structure of a distribution-grid snapshot as
it is read from a grid file: nodes, line kinds, lines, the substation
transformer, protective devices, the slack node and the service area.
Optional electrical attributes are allowed to be absent so that the
rule checks can report them instead of the parser rejecting the file.
A helper function ``schema()`` produces the JSON schema of a grid file.

The module also carries the small value types shared by the services:
validation findings, rule thresholds, statutory limits and economic
parameters.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import GridReferenceError


class _Record(BaseModel):
    """Immutable record, unknown keys rejected."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)


class NodeKind(str, Enum):
    SUBSTATION = "substation"
    CABINET = "cabinet"
    DISTRIBUTION_BOX = "distribution-box"
    JUNCTION = "junction"
    SERVICE_ENTRY = "service-entry"


class VoltageLevel(str, Enum):
    LV = "LV"
    MV = "MV"


class Construction(str, Enum):
    OVERHEAD = "overhead"
    BURIED = "buried"


class DeviceKind(str, Enum):
    BREAKER = "breaker"
    FUSE = "fuse"
    SWITCH = "switch"


class SwitchState(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


class Phase(str, Enum):
    BASIC = "basic"
    ADVANCED = "advanced"


class BBox(_Record):
    """Latitude/longitude rectangle in WGS84 degrees."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    @model_validator(mode="after")
    def _non_degenerate(self) -> "BBox":
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("bounding box must have lat_min < lat_max and lon_min < lon_max")
        return self

    def contains(self, lat: float, lon: float) -> bool:
        """True when the point is inside or on the edge of the box."""
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max


class ComplexPU(_Record):
    """A complex per-unit quantity stored as real and imaginary parts."""

    re: float
    im: float = 0.0

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)

    @classmethod
    def of(cls, z: complex) -> "ComplexPU":
        return cls(re=float(z.real), im=float(z.imag))


class Node(_Record):
    """A grid node: substation busbar, cabinet, box, junction or service entry."""

    id: str
    kind: NodeKind
    gps: Optional[Tuple[float, float]] = None
    voltage_level: VoltageLevel = VoltageLevel.LV
    nominal_power: float = Field(default=0.0, ge=0)
    base_voltage: float = Field(gt=0)


class LineKind(_Record):
    """Datasheet of a cable or overhead conductor, per kilometre."""

    name: str
    r_per_km: Optional[float] = Field(default=None, gt=0)
    x_per_km: Optional[float] = Field(default=None, ge=0)
    b_per_km: float = Field(default=0.0, ge=0)
    ampacity: Optional[float] = Field(default=None, gt=0)
    section: Optional[float] = Field(default=None, gt=0)
    construction: Construction = Construction.BURIED

    def missing_parameters(self) -> List[str]:
        return [
            name
            for name in ("r_per_km", "x_per_km", "ampacity", "section")
            if getattr(self, name) is None
        ]


class Line(_Record):
    """A line or cable between two nodes."""

    id: str
    from_node: str = Field(alias="from")
    to_node: str = Field(alias="to")
    length: Optional[float] = Field(default=None, gt=0)
    kind: str
    in_service: bool = True

    @model_validator(mode="after")
    def _distinct_endpoints(self) -> "Line":
        if self.from_node == self.to_node:
            raise ValueError(f"line {self.id!r} starts and ends at {self.from_node!r}")
        return self


class Transformer(_Record):
    """Substation transformer, upstream grid folded in as a series impedance."""

    id: str = "T1"
    rated_s: Optional[float] = Field(default=None, gt=0)
    short_circuit_impedance: ComplexPU
    upstream_impedance: Optional[ComplexPU] = None
    tap_position: int = 0
    tap_step: float = Field(default=0.025, gt=0, lt=0.2)
    hv_node: str
    lv_node: str

    @model_validator(mode="after")
    def _check(self) -> "Transformer":
        if abs(self.short_circuit_impedance.value) <= 0:
            raise ValueError("transformer short-circuit impedance must be non-zero")
        if self.hv_node == self.lv_node:
            raise ValueError("transformer hv_node and lv_node must differ")
        return self

    @property
    def ratio(self) -> float:
        """Off-nominal ratio on the HV side; negative taps boost the LV side."""
        return 1.0 + self.tap_position * self.tap_step

    @property
    def series_impedance(self) -> complex:
        """Short-circuit plus upstream impedance, per unit on ``rated_s``."""
        z = self.short_circuit_impedance.value
        if self.upstream_impedance is not None:
            z += self.upstream_impedance.value
        return z


class ProtectiveDevice(_Record):
    """Breaker, fuse or switch installed in a node, optionally on one line."""

    id: str
    kind: DeviceKind
    node: str
    state: SwitchState = SwitchState.CLOSED
    rating: Optional[float] = Field(default=None, gt=0)
    line: Optional[str] = None


class GridLookup(NamedTuple):
    nodes: Tuple[Node, ...]
    lines: Tuple[Line, ...]
    node_by_id: Dict[str, Node]
    line_by_id: Dict[str, Line]


class Grid(_Record):
    """Electrical network snapshot."""

    name: str = "grid"
    nodes: Tuple[Node, ...]
    line_kinds: Tuple[LineKind, ...] = ()
    lines: Tuple[Line, ...] = ()
    transformer: Optional[Transformer] = None
    devices: Tuple[ProtectiveDevice, ...] = ()
    slack_node: str
    service_area_bbox: Optional[BBox] = None

    @model_validator(mode="after")
    def _check_ids(self) -> "Grid":
        for label, ids in (
            ("node", [n.id for n in self.nodes]),
            ("line kind", [k.name for k in self.line_kinds]),
            ("line", [line.id for line in self.lines]),
            ("device", [d.id for d in self.devices]),
        ):
            seen = set()
            for item in ids:
                if item in seen:
                    raise ValueError(f"duplicate {label} id {item!r}")
                seen.add(item)
        dangling = self.dangling_references()
        if dangling:
            raise GridReferenceError("; ".join(dangling))
        return self

    def dangling_references(self) -> List[str]:
        """Messages for every reference that does not resolve."""
        nodes = {n.id for n in self.nodes}
        kinds = {k.name for k in self.line_kinds}
        lines = {line.id for line in self.lines}
        problems: List[str] = []
        if self.slack_node not in nodes:
            problems.append(f"slack_node {self.slack_node!r} is not a node")
        for line in self.lines:
            for end in (line.from_node, line.to_node):
                if end not in nodes:
                    problems.append(f"line {line.id!r} references unknown node {end!r}")
            if line.kind not in kinds:
                problems.append(f"line {line.id!r} references unknown line kind {line.kind!r}")
        if self.transformer is not None:
            for end in (self.transformer.hv_node, self.transformer.lv_node):
                if end not in nodes:
                    problems.append(f"transformer references unknown node {end!r}")
        for device in self.devices:
            if device.node not in nodes:
                problems.append(f"device {device.id!r} references unknown node {device.node!r}")
            if device.line is not None and device.line not in lines:
                problems.append(f"device {device.id!r} references unknown line {device.line!r}")
        return problems

    # Lookups ---------------------------------------------------------------

    def node_ids(self) -> List[str]:
        return [n.id for n in self.nodes]

    def node_index(self) -> Dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    def id_lookup(self) -> GridLookup:
        """Id maps of nodes and lines, built once per instance.

        ``model_copy`` carries the cached maps over, so they are rebuilt
        when the copy holds different tuples.
        """
        cached = self.__dict__.get("_id_lookup")
        if cached is None or cached.nodes is not self.nodes or cached.lines is not self.lines:
            cached = GridLookup(
                self.nodes,
                self.lines,
                {n.id: n for n in self.nodes},
                {line.id: line for line in self.lines},
            )
            self.__dict__["_id_lookup"] = cached
        return cached

    def node(self, node_id: str) -> Node:
        return self.id_lookup().node_by_id[node_id]

    def line(self, line_id: str) -> Line:
        return self.id_lookup().line_by_id[line_id]

    def line_kind_map(self) -> Dict[str, LineKind]:
        return {k.name: k for k in self.line_kinds}

    def load_nodes(self) -> List[Node]:
        """Nodes with a positive nominal power, in file order."""
        return [n for n in self.nodes if n.nominal_power > 0]

    def opened_lines(self) -> set:
        """Lines taken out by an open protective device."""
        return {
            d.line
            for d in self.devices
            if d.line is not None and d.state == SwitchState.OPEN
        }

    def active_lines(self) -> List[Line]:
        """In-service lines not opened by a device, in file order."""
        opened = self.opened_lines()
        return [line for line in self.lines if line.in_service and line.id not in opened]

    def bbox(self) -> Optional[BBox]:
        return self.service_area_bbox


# Findings ------------------------------------------------------------------

#: Every rule id a Finding may carry.
RULE_IDS = frozenset(
    {
        "meshed-lv",
        "gps-out-of-bounds",
        "length-vs-manhattan",
        "section-out-of-range",
        "missing-length",
        "missing-kind-parameter",
        "missing-rating",
        "missing-rated-power",
        "missing-gps",
        "parallel-fuses",
        "v-out-of-band",
        "line-overcurrent",
        "gcp-overcurrent",
        "lf-nonconvergence",
    }
)


class EntityRef(_Record):
    kind: str
    id: str


class Finding(_Record):
    """One validation anomaly handed to the grid expert."""

    rule_id: str
    severity: Severity
    entity: EntityRef
    message: str
    measured: Optional[float] = None
    threshold: Optional[float] = None
    phase: Phase = Phase.BASIC
    step: Optional[int] = None

    @model_validator(mode="after")
    def _registered(self) -> "Finding":
        if self.rule_id not in RULE_IDS:
            raise ValueError(f"unregistered rule id {self.rule_id!r}")
        return self

    def sort_key(self) -> Tuple[Any, ...]:
        return (self.rule_id, self.entity.id, self.entity.kind, self.step or -1, self.message)


# Thresholds ----------------------------------------------------------------

class RuleConfig(_Record):
    """Thresholds for the basic rule checks."""

    kappa: float = Field(default=1.5, gt=1)
    length_floor_m: float = Field(default=25.0, ge=0)
    section_min: float = Field(default=10.0, gt=0)
    section_max: float = Field(default=400.0, gt=0)
    bbox: Optional[BBox] = None

    @model_validator(mode="after")
    def _ordered(self) -> "RuleConfig":
        if not self.section_min < self.section_max:
            raise ValueError("section_min must be below section_max")
        return self


class LimitSet(_Record):
    """Statutory voltage bands and the grid-connection-point ampacity."""

    v_band_lv: float = Field(default=0.10, gt=0, lt=0.2)
    v_band_mv: float = Field(default=0.05, gt=0, lt=0.2)
    gcp_ampacity: Optional[float] = Field(default=None, gt=0)

    def band(self, level: VoltageLevel) -> float:
        return self.v_band_mv if level == VoltageLevel.MV else self.v_band_lv


class EconomicParams(_Record):
    """PV economics; defaults are the reference tariff assumptions."""

    c_cap: float = Field(default=1500.0, gt=0, description="CHF/kWp")
    lifespan: float = Field(default=20.0, gt=0, description="years")
    discount: float = Field(default=0.02, gt=0, description="fraction per year")
    c_plus: float = Field(default=0.25, gt=0, description="retail CHF/kWh")
    c_minus: float = Field(default=0.14, gt=0, description="feed-in CHF/kWh")


def gcp_ampacity_a(grid: Grid, limits: LimitSet) -> Optional[float]:
    """Grid-connection-point ampacity, derived from the transformer rating when unset."""
    if limits.gcp_ampacity is not None:
        return limits.gcp_ampacity
    tr = grid.transformer
    if tr is None or tr.rated_s is None:
        return None
    v_ll = grid.node(tr.lv_node).base_voltage
    return tr.rated_s / (math.sqrt(3.0) * v_ll)


def schema() -> Dict[str, Any]:
    """Return the JSON Schema for a grid file."""
    return Grid.model_json_schema(by_alias=True)
