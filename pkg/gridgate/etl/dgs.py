"""
DGS-flavoured interchange export.

The output has three sections, ``## TYPE`` (datasheets), ``## ELEMENT``
(components with their state and connectivity) and ``## GRAPHIC``
(node positions).  Each record is one line of ``key=value`` pairs
separated by semicolons, the first pair always being ``type``.  Records
are sorted by id inside each record type, so equal grids give
byte-equal files.
"""

from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Tuple

from ..models import Grid

Record = List[Tuple[str, object]]


def _fmt(value: object) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _line(record: Record) -> str:
    return ";".join(f"{k}={_fmt(v)}" for k, v in record if v is not None)


def _sorted(records: Iterable[Record]) -> List[Record]:
    return sorted(records, key=lambda r: (str(r[0][1]), str(dict(r).get("id", dict(r).get("name")))))


def _type_records(grid: Grid) -> List[Record]:
    out: List[Record] = []
    for kind in grid.line_kinds:
        out.append(
            [
                ("type", "TypLne"),
                ("name", kind.name),
                ("inom_ka", None if kind.ampacity is None else kind.ampacity / 1000.0),
                ("rline", kind.r_per_km),
                ("xline", kind.x_per_km),
                ("bline", kind.b_per_km),
                ("section", kind.section),
                ("cable", kind.construction.value == "buried"),
            ]
        )
    tr = grid.transformer
    if tr is not None:
        z = tr.short_circuit_impedance.value
        out.append(
            [
                ("type", "TypTr2"),
                ("name", f"{tr.id}-type"),
                ("strn_kva", tr.rated_s),
                ("utrn_h", grid.node(tr.hv_node).base_voltage),
                ("utrn_l", grid.node(tr.lv_node).base_voltage),
                ("r_pu", z.real),
                ("x_pu", z.imag),
                ("dutap", tr.tap_step * 100.0),
            ]
        )
    return _sorted(out)


def _element_records(grid: Grid) -> List[Record]:
    out: List[Record] = []
    opened = grid.opened_lines()
    for node in grid.nodes:
        out.append(
            [
                ("type", "ElmTerm"),
                ("id", node.id),
                ("kind", node.kind.value),
                ("uknom", node.base_voltage),
                ("level", node.voltage_level.value),
                ("pnom_kw", node.nominal_power),
                ("slack", node.id == grid.slack_node),
            ]
        )
    for line in grid.lines:
        out.append(
            [
                ("type", "ElmLne"),
                ("id", line.id),
                ("typ", line.kind),
                ("dline", line.length),
                ("outserv", not line.in_service or line.id in opened),
                ("bus1", line.from_node),
                ("bus2", line.to_node),
            ]
        )
    tr = grid.transformer
    if tr is not None:
        out.append(
            [
                ("type", "ElmTr2"),
                ("id", tr.id),
                ("typ", f"{tr.id}-type"),
                ("nntap", tr.tap_position),
                ("outserv", False),
                ("bushv", tr.hv_node),
                ("buslv", tr.lv_node),
            ]
        )
    for device in grid.devices:
        out.append(
            [
                ("type", "ElmCoup" if device.kind.value != "fuse" else "RelFuse"),
                ("id", device.id),
                ("kind", device.kind.value),
                ("on_off", device.state.value == "closed"),
                ("irat_a", device.rating),
                ("bus", device.node),
                ("line", device.line),
            ]
        )
    return _sorted(out)


def _graphic_records(grid: Grid) -> List[Record]:
    out: List[Record] = []
    for node in grid.nodes:
        if node.gps is None:
            continue
        lat, lon = node.gps
        out.append([("type", "IntGrf"), ("id", node.id), ("lat", float(lat)), ("lon", float(lon))])
    return _sorted(out)


def export_dgs(grid: Grid) -> str:
    """Render ``grid`` as interchange text."""
    sections: Dict[str, List[Record]] = {
        "TYPE": _type_records(grid),
        "ELEMENT": _element_records(grid),
        "GRAPHIC": _graphic_records(grid),
    }
    lines: List[str] = []
    for header, records in sections.items():
        lines.append(f"## {header}")
        lines.extend(_line(r) for r in records)
    return "\n".join(lines) + "\n"


def count_records(text: str) -> Dict[str, int]:
    """Number of records per section of an exported file."""
    counts: Dict[str, int] = {}
    current: Optional[str] = None
    for raw in text.splitlines():
        if raw.startswith("## "):
            current = raw[3:].strip()
            counts[current] = 0
        elif raw.strip() and current is not None:
            counts[current] += 1
    return counts
