"""
Grid file reader and writer.

The grid file is a single JSON document with the top-level keys
``nodes``, ``line_kinds``, ``lines``, ``transformer``, ``devices``,
``slack_node`` and ``service_area_bbox``.  Missing optional attributes
are kept as absent so the rule checks can report them.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Union

from pydantic import ValidationError

from ..errors import GridParseError, GridSchemaError
from ..models import Grid

logger = logging.getLogger(__name__)

BUILTIN_PREFIX = "builtin:"


def parse_grid_text(text: str, source: str = "<string>") -> Grid:
    """Build a Grid from the text of a grid file."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridParseError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise GridSchemaError(f"{source}: top level must be an object")
    try:
        grid = Grid.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise GridSchemaError(f"{source}: {where}: {first['msg']}") from exc
    logger.debug(
        f"Parsed {source}: {len(grid.nodes)} nodes, {len(grid.lines)} lines, "
        f"{len(grid.devices)} devices"
    )
    return grid


def parse_grid(path: Union[str, os.PathLike]) -> Grid:
    """Read a grid file.

    ``builtin:case-study`` selects the packaged reference network
    instead of a file.

    Raises:
        GridParseError: malformed JSON.
        GridSchemaError: wrong field type or broken record invariant.
        GridReferenceError: a reference to an unknown id.
    """
    name = str(path)
    if name.startswith(BUILTIN_PREFIX):
        from .case_study import builtin_grid

        return builtin_grid(name[len(BUILTIN_PREFIX):])
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise GridParseError(f"{p}: {exc.strerror or exc}") from exc
    return parse_grid_text(text, source=str(p))


def serialize_grid(grid: Grid) -> str:
    """Inverse of :func:`parse_grid_text`."""
    data = grid.model_dump(mode="json", by_alias=True, exclude_none=True)
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def write_grid(grid: Grid, path: Union[str, os.PathLike]) -> None:
    Path(path).write_text(serialize_grid(grid), encoding="utf-8")
