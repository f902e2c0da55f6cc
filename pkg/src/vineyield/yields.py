"""Yield-monitor stream parsing, cleaning, and block calibration.

Cleaning runs in three passes: rule-based artifact removal against the
declared row geometry, per-block Tukey-fence outlier removal, then
proportional rescaling of each block so its mean matches the weighbridge
density reported for that block.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .geo import GeoFix, LocalPoint, geodetic_centroid, project_to_local
from .layout import FieldGeometry

SPLITS = ("train", "validation", "test", "unassigned")


@dataclass
class YieldPoint:
    """One yield-monitor sample in the local frame."""

    id: int
    pos: LocalPoint
    row_id: int
    raw_mass: float
    yield_tha: float
    block: str
    split: str = "unassigned"

    def __post_init__(self) -> None:
        if not self.block:
            raise ValidationError(f"yield point {self.id}: empty block id")
        if self.split not in SPLITS:
            raise ValidationError(f"yield point {self.id}: bad split {self.split!r}")
        if self.raw_mass < 0:
            raise ValidationError(f"yield point {self.id}: negative mass signal")


@dataclass(frozen=True)
class BlockCalibration:
    """Weighbridge mean yield density for one block."""

    block: str
    winery_mean_tha: float

    def __post_init__(self) -> None:
        if self.winery_mean_tha <= 0:
            raise ValidationError(
                f"block {self.block}: winery mean must be positive, got {self.winery_mean_tha}"
            )


@dataclass(frozen=True)
class YieldCsvSchema:
    """Column names of a raw yield-monitor CSV."""

    timestamp: str = "timestamp"
    lat: str = "lat"
    lon: str = "lon"
    yield_value: str = "yield_raw"
    block: str = "block"
    row_id: str = "row_id"

    def required(self) -> tuple[str, ...]:
        return (self.timestamp, self.lat, self.lon, self.yield_value, self.block, self.row_id)


def _read_csv_rows(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None:
        raise ParseError(f"{path}: empty file, expected a header row")
    return list(reader.fieldnames), list(reader)


def parse_yield_csv(
    path,
    schema: YieldCsvSchema = YieldCsvSchema(),
    origin: GeoFix | None = None,
) -> list[YieldPoint]:
    """Read a raw yield CSV and project it into the local frame.

    When ``origin`` is None the centroid of the file's fixes is used.
    Values are stored uncalibrated in ``yield_tha`` until
    :func:`calibrate_block_means` rescales them.
    """
    header, rows = _read_csv_rows(path)
    missing = [c for c in schema.required() if c not in header]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")

    fixes = []
    parsed = []
    for i, row in enumerate(rows):
        rownum = i + 2  # 1-based, after the header
        try:
            t = float(row[schema.timestamp])
            lat = float(row[schema.lat])
            lon = float(row[schema.lon])
            y = float(row[schema.yield_value])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: non-numeric value at row {rownum}: {exc}") from exc
        if any(math.isnan(v) for v in (lat, lon)):
            raise ParseError(f"{path}: NaN coordinate at row {rownum}")
        try:
            fixes.append(GeoFix(lat, lon, t))
        except ValidationError as exc:
            raise ParseError(f"{path}: row {rownum}: {exc}") from exc
        parsed.append((int(row[schema.row_id]), y, row[schema.block]))

    if not fixes:
        return []
    if origin is None:
        origin = geodetic_centroid(fixes)
    positions = project_to_local(fixes, origin)
    return [
        YieldPoint(id=i, pos=pos, row_id=row_id, raw_mass=y, yield_tha=y, block=block)
        for i, (pos, (row_id, y, block)) in enumerate(zip(positions, parsed))
    ]


@dataclass(frozen=True)
class RemovalReport:
    """Counts of points removed by each cleaning rule."""

    off_row: int = 0
    in_gap: int = 0
    sparse_row: int = 0
    iqr_outlier: int = 0

    @property
    def total(self) -> int:
        return self.off_row + self.in_gap + self.sparse_row + self.iqr_outlier


def filter_artifacts(
    points: Sequence[YieldPoint], geometry: FieldGeometry
) -> tuple[list[YieldPoint], list[YieldPoint], RemovalReport]:
    """Rule-based artifact removal against the declared row geometry.

    Removes points farther than the lateral tolerance from every row
    line, points inside declared gap intervals, and whole rows whose
    point frequency is below the configured points-per-meter minimum.
    """
    off_row: list[YieldPoint] = []
    in_gap: list[YieldPoint] = []
    survivors: list[YieldPoint] = []
    for p in points:
        bg = geometry.require(p.block)
        _, lateral = bg.nearest_row(p.pos.y)
        if lateral > geometry.lateral_tol_m:
            off_row.append(p)
            continue
        gap_hit = any(
            g.row_id == p.row_id and g.x_start <= p.pos.x <= g.x_end for g in bg.gaps
        )
        if gap_hit:
            in_gap.append(p)
            continue
        survivors.append(p)

    sparse: list[YieldPoint] = []
    kept: list[YieldPoint] = []
    if geometry.min_points_per_m > 0:
        counts: dict[tuple[str, int], int] = {}
        for p in survivors:
            counts[(p.block, p.row_id)] = counts.get((p.block, p.row_id), 0) + 1
        for p in survivors:
            bg = geometry.require(p.block)
            freq = counts[(p.block, p.row_id)] / bg.row_length
            (kept if freq >= geometry.min_points_per_m else sparse).append(p)
    else:
        kept = survivors

    removed = off_row + in_gap + sparse
    report = RemovalReport(off_row=len(off_row), in_gap=len(in_gap), sparse_row=len(sparse))
    return kept, removed, report


def tukey_fences(values: Sequence[float]) -> tuple[float, float]:
    """[Q1 - 1.5*IQR, Q3 + 1.5*IQR] with linearly interpolated quartiles."""
    if len(values) < 4:
        raise ValidationError(
            f"need at least 4 values to place Tukey fences, got {len(values)}"
        )
    q1, q3 = np.percentile(np.asarray(values, dtype=float), [25.0, 75.0])
    iqr = q3 - q1
    return float(q1 - 1.5 * iqr), float(q3 + 1.5 * iqr)


def remove_outliers_iqr(
    points: Sequence[YieldPoint],
) -> tuple[list[YieldPoint], list[YieldPoint]]:
    """Drop points outside the per-block Tukey fences on yield value.

    Fences are recomputed on the survivors and reapplied until nothing
    moves; a single pass is not idempotent because removing a heavy tail
    shrinks the IQR.  Refuses blocks with fewer than 4 points; a block
    whose survivor count falls below 4 mid-iteration simply stops
    tightening.
    """
    by_block: dict[str, list[YieldPoint]] = {}
    for p in points:
        by_block.setdefault(p.block, []).append(p)
    for block, pts in sorted(by_block.items()):
        if len(pts) < 4:
            raise ValidationError(
                f"block {block!r} has only {len(pts)} points; "
                "IQR filtering needs at least 4"
            )

    removed_ids: set[int] = set()
    for block, pts in sorted(by_block.items()):
        survivors = list(pts)
        while len(survivors) >= 4:
            lo, hi = tukey_fences([p.yield_tha for p in survivors])
            rejected = [p for p in survivors if not (lo <= p.yield_tha <= hi)]
            if not rejected:
                break
            removed_ids.update(p.id for p in rejected)
            survivors = [p for p in survivors if lo <= p.yield_tha <= hi]

    kept = [p for p in points if p.id not in removed_ids]
    removed = [p for p in points if p.id in removed_ids]
    return kept, removed


def calibrate_block_means(
    points: Sequence[YieldPoint],
    calibrations: Iterable[BlockCalibration] | Mapping[str, float],
) -> list[YieldPoint]:
    """Rescale each block so its mean yield equals the weighbridge mean.

    Returns new points; the input is left untouched.
    """
    if isinstance(calibrations, Mapping):
        target = {b: float(v) for b, v in calibrations.items()}
    else:
        target = {c.block: c.winery_mean_tha for c in calibrations}

    sums: dict[str, tuple[float, int]] = {}
    for p in points:
        s, n = sums.get(p.block, (0.0, 0))
        sums[p.block] = (s + p.yield_tha, n + 1)

    factors = {}
    for block, (s, n) in sorted(sums.items()):
        if block not in target:
            raise ValidationError(f"no calibration provided for block {block!r}")
        mean = s / n
        if mean <= 0:
            raise ValidationError(f"block {block!r}: mean yield is {mean}, cannot scale")
        factors[block] = target[block] / mean

    return [
        dataclasses.replace(p, yield_tha=p.yield_tha * factors[p.block]) for p in points
    ]


# Cleaned-data CSV: the pipeline's internal interchange format.
CLEAN_COLUMNS = ("id", "x", "y", "row_id", "block", "raw_mass", "yield_tha", "split")


def write_clean_csv(path, points: Sequence[YieldPoint], provenance: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(CLEAN_COLUMNS)
        for p in points:
            writer.writerow(
                [p.id, repr(p.pos.x), repr(p.pos.y), p.row_id, p.block,
                 repr(p.raw_mass), repr(p.yield_tha), p.split]
            )


def read_clean_csv(path) -> list[YieldPoint]:
    header, rows = _read_csv_rows(path)
    missing = [c for c in CLEAN_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")
    out = []
    for i, row in enumerate(rows):
        try:
            out.append(
                YieldPoint(
                    id=int(row["id"]),
                    pos=LocalPoint(float(row["x"]), float(row["y"])),
                    row_id=int(row["row_id"]),
                    raw_mass=float(row["raw_mass"]),
                    yield_tha=float(row["yield_tha"]),
                    block=row["block"],
                    split=row["split"],
                )
            )
        except (TypeError, ValueError, ValidationError) as exc:
            raise ParseError(f"{path}: bad row {i + 2}: {exc}") from exc
    return out


def read_calibrations_json(path) -> list[BlockCalibration]:
    import json

    with open(path) as fh:
        data = json.load(fh)
    records = data["calibrations"] if isinstance(data, dict) else data
    return [
        BlockCalibration(block=str(r["block"]), winery_mean_tha=float(r["winery_mean_tha"]))
        for r in records
    ]
