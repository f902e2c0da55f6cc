"""Local planar coordinates for row-crop fields.

Geodetic fixes are projected onto a flat east/north frame with an
equirectangular projection about a chosen origin.  Rows run east-west,
so the along-row axis is local x and row identity comes from y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ValidationError

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class GeoFix:
    """A timestamped WGS84 position sample."""

    lat: float
    lon: float
    t: float = 0.0

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise ValidationError(f"latitude out of range: {self.lat!r}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValidationError(f"longitude out of range: {self.lon!r}")
        if not math.isfinite(self.t):
            raise ValidationError(f"timestamp not finite: {self.t!r}")


@dataclass(frozen=True)
class LocalPoint:
    """Meters east (x) and north (y) of the projection origin."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"non-finite local point: ({self.x!r}, {self.y!r})")


def project_to_local(fixes: Iterable[GeoFix], origin: GeoFix) -> list[LocalPoint]:
    """Project fixes to the local frame anchored at ``origin``.

    x = R * cos(lat0) * dlon, y = R * dlat (radians).  Every fix must lie
    within one degree of the origin; input order is preserved.
    """
    lat0 = math.radians(origin.lat)
    cos0 = math.cos(lat0)
    out = []
    for fix in fixes:
        if abs(fix.lat - origin.lat) > 1.0 or abs(fix.lon - origin.lon) > 1.0:
            raise ValidationError(
                f"fix ({fix.lat}, {fix.lon}) farther than 1 degree from origin "
                f"({origin.lat}, {origin.lon})"
            )
        x = EARTH_RADIUS_M * cos0 * math.radians(fix.lon - origin.lon)
        y = EARTH_RADIUS_M * math.radians(fix.lat - origin.lat)
        out.append(LocalPoint(x, y))
    return out


def local_to_geodetic(points: Iterable[LocalPoint], origin: GeoFix) -> list[tuple[float, float]]:
    """Inverse of :func:`project_to_local`; returns (lat, lon) pairs."""
    lat0 = math.radians(origin.lat)
    cos0 = math.cos(lat0)
    out = []
    for p in points:
        lat = origin.lat + math.degrees(p.y / EARTH_RADIUS_M)
        lon = origin.lon + math.degrees(p.x / (EARTH_RADIUS_M * cos0))
        out.append((lat, lon))
    return out


def geodetic_centroid(fixes: Sequence[GeoFix]) -> GeoFix:
    """Arithmetic centroid of the fixes, usable as a projection origin."""
    if not fixes:
        raise ValidationError("cannot take the centroid of zero fixes")
    lat = sum(f.lat for f in fixes) / len(fixes)
    lon = sum(f.lon for f in fixes) / len(fixes)
    return GeoFix(lat, lon, 0.0)


def along_row_offset(a: LocalPoint, b: LocalPoint) -> float:
    """Signed east-positive offset from ``a`` to ``b`` along the row axis."""
    return b.x - a.x


def planar_distance(a: LocalPoint, b: LocalPoint) -> float:
    return math.hypot(b.x - a.x, b.y - a.y)
