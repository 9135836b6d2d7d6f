"""
Reference LV network used by the tests and by ``--grid builtin:case-study``.

A 630 kVA substation feeds seven radial feeders with 58 nodes in total,
19 of them load nodes with 319 kW of nominal demand.  Six feeders are
short and built from 4x240 mm2 cable; the seventh is a long 4x70 mm2
trunk with its loads at the far end, which sets the uniform PV level
when fairness is enforced.  The transformer sits three taps boosted so
the LV busbar idles around 1.08 pu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from ..errors import GridParseError
from ..models import (
    BBox,
    ComplexPU,
    Construction,
    DeviceKind,
    Grid,
    Line,
    LineKind,
    Node,
    NodeKind,
    ProtectiveDevice,
    Transformer,
    VoltageLevel,
)

ORIGIN = (46.2300, 7.3600)
EARTH_RADIUS_M = 6_371_000.0
HEAD_LENGTH_M = 80.0
STUB_LENGTH_M = 30.0

STRONG_CABLE = LineKind(
    name="NAYY 4x240",
    r_per_km=0.125,
    x_per_km=0.080,
    b_per_km=82.0,
    ampacity=357.0,
    section=240.0,
    construction=Construction.BURIED,
)
WEAK_CABLE = LineKind(
    name="NAYY 4x70",
    r_per_km=0.443,
    x_per_km=0.082,
    b_per_km=60.0,
    ampacity=185.0,
    section=70.0,
    construction=Construction.BURIED,
)


@dataclass(frozen=True)
class FeederLayout:
    name: str
    loads_kw: Sequence[float]
    segments_m: Sequence[float]
    nodes: int
    heading_deg: float


STRONG_FEEDERS = (
    FeederLayout("F1", (22.0, 22.0, 22.0), (120.0, 120.0, 120.0), 8, 90.0),
    FeederLayout("F2", (20.0, 20.0, 20.0), (120.0, 120.0, 120.0), 8, 270.0),
    FeederLayout("F3", (25.0, 22.0), (120.0, 120.0), 8, 0.0),
    FeederLayout("F4", (20.0, 18.0), (120.0, 140.0), 8, 180.0),
    FeederLayout("F5", (22.0, 18.0), (120.0, 140.0), 7, 45.0),
    FeederLayout("F6", (14.0, 14.0), (200.0, 200.0), 7, 225.0),
)
WEAK_TRUNK_NODES = 10
WEAK_SEGMENT_M = 140.0
WEAK_LOAD_KW = 8.0
WEAK_FIRST_LOAD = 6  # 1-based position on the trunk


def _offset(origin: Tuple[float, float], north_m: float, east_m: float) -> Tuple[float, float]:
    lat, lon = origin
    dlat = math.degrees(north_m / EARTH_RADIUS_M)
    dlon = math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
    return (round(lat + dlat, 7), round(lon + dlon, 7))


def _step(origin, heading_deg: float, metres: float):
    rad = math.radians(heading_deg)
    return _offset(origin, metres * math.cos(rad), metres * math.sin(rad))


class _Builder:
    def __init__(self):
        self.nodes: List[Node] = []
        self.lines: List[Line] = []
        self.devices: List[ProtectiveDevice] = []

    def node(self, node_id: str, kind: NodeKind, gps, pnom: float = 0.0, level=VoltageLevel.LV, kv=0.4):
        self.nodes.append(
            Node(id=node_id, kind=kind, gps=gps, voltage_level=level, nominal_power=pnom, base_voltage=kv)
        )

    def line(self, line_id: str, a: str, b: str, metres: float, kind: LineKind) -> None:
        self.lines.append(
            Line(id=line_id, from_node=a, to_node=b, length=metres / 1000.0, kind=kind.name)
        )


def _strong_feeder(builder: _Builder, layout: FeederLayout) -> None:
    f = layout.name
    busbar = builder.nodes[1]
    cabinet = f"{f}-C"
    pos = _step(busbar.gps, layout.heading_deg, HEAD_LENGTH_M)
    builder.node(cabinet, NodeKind.CABINET, pos)
    builder.line(f"{f}-L01", "B0", cabinet, HEAD_LENGTH_M, STRONG_CABLE)
    builder.devices.append(
        ProtectiveDevice(id=f"{f}-FU", kind=DeviceKind.FUSE, node="B0", rating=250.0, line=f"{f}-L01")
    )

    trunk = [(cabinet, pos)]
    prev, prev_pos = cabinet, pos
    for k, (load, seg) in enumerate(zip(layout.loads_kw, layout.segments_m), start=1):
        node_id = f"{f}-H{k}"
        prev_pos = _step(prev_pos, layout.heading_deg, seg)
        builder.node(node_id, NodeKind.SERVICE_ENTRY, prev_pos, pnom=load)
        builder.line(f"{f}-L{k + 1:02d}", prev, node_id, seg, STRONG_CABLE)
        trunk.append((node_id, prev_pos))
        prev = node_id

    stubs = layout.nodes - len(trunk)
    line_no = len(layout.loads_kw) + 2
    for s in range(stubs):
        parent, parent_pos = trunk[s % len(trunk)]
        side = 90.0 if s % 2 == 0 else -90.0
        stub_id = f"{f}-J{s + 1}"
        builder.node(stub_id, NodeKind.JUNCTION, _step(parent_pos, layout.heading_deg + side, STUB_LENGTH_M))
        builder.line(f"{f}-L{line_no:02d}", parent, stub_id, STUB_LENGTH_M, STRONG_CABLE)
        line_no += 1


def _weak_feeder(builder: _Builder) -> None:
    f = "F7"
    heading = 135.0
    prev, prev_pos = "B0", builder.nodes[1].gps
    for k in range(1, WEAK_TRUNK_NODES + 1):
        node_id = f"{f}-N{k:02d}"
        prev_pos = _step(prev_pos, heading, WEAK_SEGMENT_M)
        loaded = k >= WEAK_FIRST_LOAD
        builder.node(
            node_id,
            NodeKind.SERVICE_ENTRY if loaded else NodeKind.DISTRIBUTION_BOX,
            prev_pos,
            pnom=WEAK_LOAD_KW if loaded else 0.0,
        )
        builder.line(f"{f}-L{k:02d}", prev, node_id, WEAK_SEGMENT_M, WEAK_CABLE)
        prev = node_id
    builder.devices.append(
        ProtectiveDevice(id=f"{f}-FU", kind=DeviceKind.FUSE, node="B0", rating=160.0, line=f"{f}-L01")
    )


def build_case_study() -> Grid:
    """The 58-node, seven-feeder reference network."""
    b = _Builder()
    b.node("S0", NodeKind.SUBSTATION, ORIGIN, level=VoltageLevel.MV, kv=20.0)
    b.node("B0", NodeKind.SUBSTATION, ORIGIN)
    for layout in STRONG_FEEDERS:
        _strong_feeder(b, layout)
    _weak_feeder(b)
    b.devices.append(ProtectiveDevice(id="Q0", kind=DeviceKind.BREAKER, node="S0", rating=40.0))

    lat, lon = ORIGIN
    return Grid(
        name="case-study",
        nodes=tuple(b.nodes),
        line_kinds=(STRONG_CABLE, WEAK_CABLE),
        lines=tuple(b.lines),
        transformer=Transformer(
            id="T1",
            rated_s=630.0,
            short_circuit_impedance=ComplexPU(re=0.01, im=0.04),
            tap_position=-3,
            tap_step=0.025,
            hv_node="S0",
            lv_node="B0",
        ),
        devices=tuple(b.devices),
        slack_node="S0",
        service_area_bbox=BBox(lat_min=lat - 0.03, lat_max=lat + 0.03, lon_min=lon - 0.04, lon_max=lon + 0.04),
    )


BUILTIN_GRIDS = {"case-study": build_case_study}


def builtin_grid(name: str) -> Grid:
    try:
        return BUILTIN_GRIDS[name]()
    except KeyError:
        raise GridParseError(f"unknown built-in grid {name!r}; choose from {sorted(BUILTIN_GRIDS)}") from None
