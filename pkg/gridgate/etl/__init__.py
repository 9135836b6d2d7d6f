"""Ingestion, serialization and export of grid files."""

from .grid_io import parse_grid, parse_grid_text, serialize_grid

__all__ = ["parse_grid", "parse_grid_text", "serialize_grid"]
