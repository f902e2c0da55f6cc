"""Field layout: block extents, row lines, and camera-facing geometry.

Vine row ``r`` of a block lies on the line y = row_y0 + r * row_spacing.
The vehicle drives the aisles between rows, so a North-facing camera
images the row north of its aisle and a South-facing camera the row
south of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ValidationError
from .geo import LocalPoint

NORTH = "North"
SOUTH = "South"
SIDES = (NORTH, SOUTH)


@dataclass(frozen=True)
class RowGap:
    """Declared gap (missing vines) on one row, in along-row meters."""

    row_id: int
    x_start: float
    x_end: float


@dataclass(frozen=True)
class BlockGeometry:
    block: str
    row_y0: float
    row_spacing: float
    n_rows: int
    x_start: float
    x_end: float
    vine_spacing: float
    gaps: tuple[RowGap, ...] = ()

    def __post_init__(self) -> None:
        if self.row_spacing <= 0 or self.vine_spacing <= 0:
            raise ValidationError(f"block {self.block}: spacings must be positive")
        if self.n_rows < 1 or self.x_end <= self.x_start:
            raise ValidationError(f"block {self.block}: degenerate extent")

    @property
    def row_length(self) -> float:
        return self.x_end - self.x_start

    def row_y(self, row_id: int) -> float:
        return self.row_y0 + row_id * self.row_spacing

    def nearest_row(self, y: float) -> tuple[int, float]:
        """Nearest row line to ``y``: (row_id, lateral distance)."""
        r = round((y - self.row_y0) / self.row_spacing)
        r = min(max(r, 0), self.n_rows - 1)
        return r, abs(y - self.row_y(r))

    def facing_row(self, pos: LocalPoint, side: str) -> int | None:
        """Row a camera at ``pos`` images, or None when it faces out of the block."""
        if side not in SIDES:
            raise ValidationError(f"unknown camera side: {side!r}")
        aisle = int((pos.y - self.row_y0) // self.row_spacing)
        row = aisle + 1 if side == NORTH else aisle
        if 0 <= row < self.n_rows:
            return row
        return None

    def contains(self, pos: LocalPoint, margin: float | None = None) -> bool:
        m = self.row_spacing if margin is None else margin
        return (
            self.x_start - m <= pos.x <= self.x_end + m
            and self.row_y0 - m <= pos.y <= self.row_y(self.n_rows - 1) + m
        )


@dataclass(frozen=True)
class FieldGeometry:
    """All block geometries plus the cleaning thresholds that depend on them."""

    blocks: Mapping[str, BlockGeometry]
    lateral_tol_m: float = 1.0
    min_points_per_m: float = 0.0

    def block_for(self, pos: LocalPoint) -> BlockGeometry | None:
        for name in sorted(self.blocks):
            if self.blocks[name].contains(pos):
                return self.blocks[name]
        return None

    def require(self, block: str) -> BlockGeometry:
        if block not in self.blocks:
            raise ValidationError(f"no geometry declared for block {block!r}")
        return self.blocks[block]


def field_geometry_from_dict(cfg: Mapping) -> FieldGeometry:
    """Build a FieldGeometry from a parsed config mapping."""
    blocks = {}
    for entry in cfg.get("blocks", []):
        gaps = tuple(
            RowGap(int(g["row_id"]), float(g["x_start"]), float(g["x_end"]))
            for g in entry.get("gaps", [])
        )
        bg = BlockGeometry(
            block=str(entry["block"]),
            row_y0=float(entry["row_y0"]),
            row_spacing=float(entry["row_spacing"]),
            n_rows=int(entry["n_rows"]),
            x_start=float(entry["x_start"]),
            x_end=float(entry["x_end"]),
            vine_spacing=float(entry["vine_spacing"]),
            gaps=gaps,
        )
        blocks[bg.block] = bg
    return FieldGeometry(
        blocks=blocks,
        lateral_tol_m=float(cfg.get("lateral_tol_m", 1.0)),
        min_points_per_m=float(cfg.get("min_points_per_m", 0.0)),
    )


def field_geometry_to_dict(geom: FieldGeometry) -> dict:
    return {
        "lateral_tol_m": geom.lateral_tol_m,
        "min_points_per_m": geom.min_points_per_m,
        "blocks": [
            {
                "block": bg.block,
                "row_y0": bg.row_y0,
                "row_spacing": bg.row_spacing,
                "n_rows": bg.n_rows,
                "x_start": bg.x_start,
                "x_end": bg.x_end,
                "vine_spacing": bg.vine_spacing,
                "gaps": [
                    {"row_id": g.row_id, "x_start": g.x_start, "x_end": g.x_end}
                    for g in bg.gaps
                ],
            }
            for _, bg in sorted(geom.blocks.items())
        ],
    }
