"""
Basic rule checks over a parsed Grid.

Each check is a pure function returning a list of Findings; the
aggregate ``run_basic_validation`` concatenates them and sorts by rule
id and entity id.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from typing import Callable, Dict, List, Optional, Tuple

from networkx.utils import UnionFind

from ..errors import MissingCoordinatesError
from ..models import (
    DeviceKind,
    EntityRef,
    Finding,
    Grid,
    Phase,
    RuleConfig,
    Severity,
    SwitchState,
    VoltageLevel,
)

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0


def _finding(
    rule_id: str,
    severity: Severity,
    kind: str,
    entity_id: str,
    message: str,
    measured: Optional[float] = None,
    threshold: Optional[float] = None,
) -> Finding:
    return Finding(
        rule_id=rule_id,
        severity=severity,
        entity=EntityRef(kind=kind, id=entity_id),
        message=message,
        measured=measured,
        threshold=threshold,
        phase=Phase.BASIC,
    )


def check_radiality(grid: Grid) -> List[Finding]:
    """One finding per independent cycle among active LV lines.

    Lines are joined in id order; the line that closes a cycle is the
    one reported.
    """
    lv = {n.id for n in grid.nodes if n.voltage_level == VoltageLevel.LV}
    forest = UnionFind()
    findings: List[Finding] = []
    for line in sorted(grid.active_lines(), key=lambda l: l.id):
        if line.from_node not in lv or line.to_node not in lv:
            continue
        if forest[line.from_node] == forest[line.to_node]:
            findings.append(
                _finding(
                    "meshed-lv",
                    Severity.ERROR,
                    "line",
                    line.id,
                    f"line {line.id} closes a loop between {line.from_node} and {line.to_node}",
                )
            )
        else:
            forest.union(line.from_node, line.to_node)
    return findings


def _bbox(grid: Grid, cfg: RuleConfig):
    return cfg.bbox or grid.service_area_bbox


def check_gps_bounds(grid: Grid, cfg: RuleConfig) -> List[Finding]:
    """Nodes strictly outside the service area.  Points on the edge pass."""
    box = _bbox(grid, cfg)
    if box is None:
        logger.debug("No service area configured, skipping gps-out-of-bounds")
        return []
    findings = []
    for node in grid.nodes:
        if node.gps is None:
            continue
        lat, lon = node.gps
        if not box.contains(lat, lon):
            findings.append(
                _finding(
                    "gps-out-of-bounds",
                    Severity.WARNING,
                    "node",
                    node.id,
                    f"node {node.id} at ({lat:.6f}, {lon:.6f}) lies outside the service area",
                )
            )
    return findings


def manhattan_distance_m(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    """|d northing| + |d easting| on an equirectangular projection."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    north = EARTH_RADIUS_M * abs(lat2 - lat1)
    east = EARTH_RADIUS_M * abs(lon2 - lon1) * math.cos((lat1 + lat2) / 2.0)
    return north + east


def check_length_vs_manhattan(grid: Grid, cfg: RuleConfig, strict: bool = False) -> List[Finding]:
    """Lines much longer than the Manhattan distance between their ends.

    Lines with a missing length or an endpoint without GPS are left to
    ``check_missing_attributes``; with ``strict`` the latter raises.
    """
    findings = []
    for line in grid.lines:
        a = grid.node(line.from_node).gps
        b = grid.node(line.to_node).gps
        if a is None or b is None:
            if strict:
                missing = line.from_node if a is None else line.to_node
                raise MissingCoordinatesError(f"line {line.id}: node {missing} has no GPS")
            continue
        if line.length is None:
            continue
        d = manhattan_distance_m(a, b)
        length_m = line.length * 1000.0
        threshold = cfg.kappa * max(d, cfg.length_floor_m)
        if length_m > threshold:
            findings.append(
                _finding(
                    "length-vs-manhattan",
                    Severity.WARNING,
                    "line",
                    line.id,
                    f"line {line.id} is {length_m:.1f} m long for {d:.1f} m Manhattan distance",
                    measured=length_m,
                    threshold=threshold,
                )
            )
    return findings


def check_sections(grid: Grid, cfg: RuleConfig) -> List[Finding]:
    kinds = grid.line_kind_map()
    findings = []
    for line in grid.lines:
        section = kinds[line.kind].section
        if section is None:
            continue
        if not cfg.section_min <= section <= cfg.section_max:
            bound = cfg.section_min if section < cfg.section_min else cfg.section_max
            findings.append(
                _finding(
                    "section-out-of-range",
                    Severity.WARNING,
                    "line",
                    line.id,
                    f"line {line.id} ({line.kind}) has a {section:g} mm2 section",
                    measured=section,
                    threshold=bound,
                )
            )
    return findings


def check_missing_attributes(grid: Grid) -> List[Finding]:
    """One finding per absent attribute needed for modelling or checks."""
    findings = []
    for node in grid.nodes:
        if node.gps is None:
            findings.append(
                _finding("missing-gps", Severity.ERROR, "node", node.id, f"node {node.id} has no GPS position")
            )
    for line in grid.lines:
        if line.length is None:
            findings.append(
                _finding("missing-length", Severity.ERROR, "line", line.id, f"line {line.id} has no length")
            )
    used = {line.kind for line in grid.lines}
    for kind in grid.line_kinds:
        if kind.name not in used:
            continue
        for name in kind.missing_parameters():
            findings.append(
                _finding(
                    "missing-kind-parameter",
                    Severity.ERROR,
                    "line-kind",
                    kind.name,
                    f"line kind {kind.name} has no {name}",
                )
            )
    for device in grid.devices:
        if device.rating is None:
            findings.append(
                _finding(
                    "missing-rating",
                    Severity.ERROR,
                    "device",
                    device.id,
                    f"{device.kind.value} {device.id} has no rating",
                )
            )
    tr = grid.transformer
    if tr is not None and tr.rated_s is None:
        findings.append(
            _finding(
                "missing-rated-power",
                Severity.ERROR,
                "transformer",
                tr.id,
                f"transformer {tr.id} has no rated power",
            )
        )
    return findings


def check_parallel_fuses(grid: Grid) -> List[Finding]:
    """Nodes with two or more closed fuses on the same endpoint pair."""
    groups: Dict[Tuple[str, Tuple[str, str]], List[str]] = defaultdict(list)
    for device in grid.devices:
        if device.kind != DeviceKind.FUSE or device.state != SwitchState.CLOSED or device.line is None:
            continue
        line = grid.line(device.line)
        pair = tuple(sorted((line.from_node, line.to_node)))
        groups[(device.node, pair)].append(device.id)
    findings = []
    for (node, pair), fuses in sorted(groups.items()):
        if len(fuses) >= 2:
            findings.append(
                _finding(
                    "parallel-fuses",
                    Severity.ERROR,
                    "node",
                    node,
                    f"fuses {', '.join(sorted(fuses))} in node {node} guard {pair[0]}-{pair[1]} in parallel",
                    measured=float(len(fuses)),
                    threshold=1.0,
                )
            )
    return findings


def sort_findings(findings: List[Finding]) -> List[Finding]:
    return sorted(findings, key=lambda f: f.sort_key())


BasicRule = Callable[[Grid, RuleConfig], List[Finding]]

BASIC_RULES: List[Tuple[str, BasicRule]] = [
    ("radiality", lambda g, c: check_radiality(g)),
    ("gps-bounds", check_gps_bounds),
    ("length", check_length_vs_manhattan),
    ("sections", check_sections),
    ("missing-attributes", lambda g, c: check_missing_attributes(g)),
    ("parallel-fuses", lambda g, c: check_parallel_fuses(g)),
]


def run_basic_validation(grid: Grid, cfg: Optional[RuleConfig] = None) -> List[Finding]:
    """All basic rules, sorted by (rule id, entity id)."""
    cfg = cfg or RuleConfig()
    findings: List[Finding] = []
    for name, rule in BASIC_RULES:
        found = rule(grid, cfg)
        logger.debug(f"Rule {name}: {len(found)} finding(s)")
        findings.extend(found)
    return sort_findings(findings)


def has_errors(findings: List[Finding]) -> bool:
    return any(f.severity == Severity.ERROR for f in findings)
