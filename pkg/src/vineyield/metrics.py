"""Regression metrics and spatial aggregation of predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .association import point_in_polygon
from .errors import ValidationError
from .yields import YieldPoint


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mape: float
    r2: float
    range_expressed: float
    fit_slope: float
    fit_intercept: float
    n: int

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mape": self.mape,
            "r2": self.r2,
            "range_expressed": self.range_expressed,
            "fit_slope": self.fit_slope,
            "fit_intercept": self.fit_intercept,
            "n": self.n,
        }


def range_expressed(predicted: Sequence[float], measured: Sequence[float]) -> float:
    """Predicted range over measured range, in percent."""
    p = np.asarray(predicted, dtype=float)
    m = np.asarray(measured, dtype=float)
    if p.size < 2 or m.size < 2:
        raise ValidationError("range comparison needs at least 2 values on each side")
    m_range = float(m.max() - m.min())
    if m_range == 0.0:
        raise ValidationError("measured values have zero range")
    return 100.0 * float(p.max() - p.min()) / m_range


def regression_metrics(predicted: Sequence[float], measured: Sequence[float]) -> MetricsReport:
    """RMSE, MAPE, R2, range expressed and an OLS fit of predicted on measured.

    R2 uses the prediction residuals directly (not the OLS fit), so it can
    go negative for predictors worse than the measured mean.
    """
    p = np.asarray(predicted, dtype=float)
    m = np.asarray(measured, dtype=float)
    if p.shape != m.shape:
        raise ValidationError(f"length mismatch: {p.size} predictions, {m.size} measurements")
    if p.size < 2:
        raise ValidationError("need at least 2 points for metrics")
    zeros = np.nonzero(m == 0.0)[0]
    if zeros.size:
        raise ValidationError(f"MAPE undefined: measured value is zero at index {zeros[0]}")

    residuals = p - m
    rmse = float(np.sqrt(np.mean(residuals**2)))
    mape = 100.0 * float(np.mean(np.abs(residuals) / np.abs(m)))
    ss_tot = float(np.sum((m - m.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValidationError("R2 undefined: measured values have zero variance")
    r2 = 1.0 - float(np.sum(residuals**2)) / ss_tot

    # fit line: predicted regressed on measured (slope 1 / intercept 0 is ideal)
    slope = float(np.sum((m - m.mean()) * (p - p.mean()))) / ss_tot
    intercept = float(p.mean() - slope * m.mean())

    return MetricsReport(
        rmse=rmse,
        mape=mape,
        r2=r2,
        range_expressed=range_expressed(p, m),
        fit_slope=slope,
        fit_intercept=intercept,
        n=int(p.size),
    )


@dataclass(frozen=True)
class Zone:
    """A named polygon within which points are binned on a regular grid."""

    name: str
    vertices: tuple[tuple[float, float], ...]

    @property
    def anchor(self) -> tuple[float, float]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return min(xs), min(ys)


@dataclass(frozen=True)
class SpatialBin:
    block: str
    i: int
    j: int
    member_ids: tuple[int, ...]
    mean_measured: float
    mean_predicted: float
    x0: float
    y0: float
    size_m: float


def spatial_aggregate(
    points: Sequence[YieldPoint],
    predictions: Mapping[int, float],
    bin_size_m: float,
    zones: Sequence[Zone],
) -> list[SpatialBin]:
    """Grid points into square bins anchored at each zone's lower-left corner.

    Every point must fall in exactly one zone; violations are reported by
    id.  Bin means of measured and predicted yield are what coarser-level
    metrics are computed from.
    """
    if bin_size_m <= 0:
        raise ValidationError("bin size must be positive")
    orphans = []
    assignment: dict[int, tuple[str, int, int, float, float]] = {}
    for p in points:
        hits = [z for z in zones if point_in_polygon(p.pos, z.vertices)]
        if len(hits) != 1:
            orphans.append((p.id, len(hits)))
            continue
        zone = hits[0]
        ax, ay = zone.anchor
        i = math.floor((p.pos.x - ax) / bin_size_m)
        j = math.floor((p.pos.y - ay) / bin_size_m)
        assignment[p.id] = (zone.name, i, j, ax + i * bin_size_m, ay + j * bin_size_m)
    if orphans:
        raise ValidationError(
            "points not inside exactly one zone: "
            + ", ".join(f"id {pid} ({n} zones)" for pid, n in orphans[:20])
        )

    grouped: dict[tuple[str, int, int], list[YieldPoint]] = {}
    corners: dict[tuple[str, int, int], tuple[float, float]] = {}
    for p in points:
        zone, i, j, x0, y0 = assignment[p.id]
        grouped.setdefault((zone, i, j), []).append(p)
        corners[(zone, i, j)] = (x0, y0)

    bins = []
    for key in sorted(grouped):
        members = sorted(grouped[key], key=lambda p: p.id)
        ids = tuple(p.id for p in members)
        measured = float(np.mean([p.yield_tha for p in members]))
        predicted = float(np.mean([predictions[p.id] for p in members]))
        x0, y0 = corners[key]
        bins.append(
            SpatialBin(
                block=key[0],
                i=key[1],
                j=key[2],
                member_ids=ids,
                mean_measured=measured,
                mean_predicted=predicted,
                x0=x0,
                y0=y0,
                size_m=bin_size_m,
            )
        )
    return bins


def metrics_at_level(
    points: Sequence[YieldPoint],
    predictions: Mapping[int, float],
    bin_size_m: float,
    zones: Sequence[Zone],
) -> MetricsReport:
    """Metrics on raw points (bin size 0) or on bin means at 10/20 m."""
    if bin_size_m == 0:
        ordered = sorted(points, key=lambda p: p.id)
        return regression_metrics(
            [predictions[p.id] for p in ordered], [p.yield_tha for p in ordered]
        )
    bins = spatial_aggregate(points, predictions, bin_size_m, zones)
    return regression_metrics(
        [b.mean_predicted for b in bins], [b.mean_measured for b in bins]
    )


def read_zones_geojson(path, name_property: str = "name") -> list[Zone]:
    import json

    with open(path) as fh:
        data = json.load(fh)
    zones = []
    for feat in data.get("features", []):
        geom = feat.get("geometry", {})
        if geom.get("type") != "Polygon":
            raise ValidationError(f"{path}: only Polygon features supported")
        ring = geom["coordinates"][0]
        verts = tuple((float(x), float(y)) for x, y in ring)
        if len(verts) > 3 and verts[0] == verts[-1]:
            verts = verts[:-1]
        zones.append(Zone(name=str(feat["properties"][name_property]), vertices=verts))
    return zones
