"""Binding images to yield points, positional scalars, vine counts, spatial splits.

Candidate yield points for an image are those on the row its camera
faces; distances are measured purely along the row (east-west), since
cross-row matches are ruled out by the facing-row restriction rather
than by euclidean distance.
"""

from __future__ import annotations

import bisect
import dataclasses
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .geo import LocalPoint
from .images import ImageRecord
from .layout import NORTH, SOUTH, FieldGeometry
from .yields import SPLITS, YieldPoint

DEFAULT_HALF_WIDTH_M = 5.0
DEFAULT_SPLIT_BUFFER_M = 10.0
ORIENTATION_SOUTH = 0.5
ORIENTATION_NORTH = 1.0


@dataclass(frozen=True)
class NearestAssociation:
    """Images whose closest yield point is this one, split by camera side."""

    yield_id: int
    north: tuple[int, ...]
    south: tuple[int, ...]


@dataclass(frozen=True)
class WindowMember:
    image_id: int
    position: float
    orientation: float


@dataclass(frozen=True)
class WindowAssociation:
    """All images within the along-row window around one yield point."""

    yield_id: int
    members: tuple[WindowMember, ...]


def positional_scalars(
    offset_m: float, side: str, half_width_m: float = DEFAULT_HALF_WIDTH_M
) -> tuple[float, float]:
    """Map an along-row offset and camera side to the two token scalars.

    The yield point sits at 0.5; the window's west and east edges map to
    0 and 1.  Side encodes as 0.5 (South) or 1.0 (North).
    """
    if abs(offset_m) > half_width_m:
        raise ValidationError(
            f"offset {offset_m} m outside the +/-{half_width_m} m window"
        )
    position = (offset_m + half_width_m) / (2.0 * half_width_m)
    if side == NORTH:
        return position, ORIENTATION_NORTH
    if side == SOUTH:
        return position, ORIENTATION_SOUTH
    raise ValidationError(f"unknown camera side: {side!r}")


def _yield_index(
    yields: Sequence[YieldPoint],
) -> dict[tuple[str, int], tuple[list[float], list[YieldPoint]]]:
    """Per (block, row): x-sorted yield points, id as tie-break."""
    grouped: dict[tuple[str, int], list[YieldPoint]] = {}
    for p in yields:
        grouped.setdefault((p.block, p.row_id), []).append(p)
    out = {}
    for key, pts in grouped.items():
        pts.sort(key=lambda p: (p.pos.x, p.id))
        out[key] = ([p.pos.x for p in pts], pts)
    return out


def _facing_candidates(
    image: ImageRecord, geometry: FieldGeometry, index
) -> tuple[list[float], list[YieldPoint]] | None:
    if image.pos is None:
        raise ValidationError(f"image {image.id} has no position; georeference first")
    bg = geometry.block_for(image.pos)
    if bg is None:
        return None
    row = bg.facing_row(image.pos, image.side)
    if row is None:
        return None
    return index.get((bg.block, row))


def associate_nearest(
    images: Sequence[ImageRecord],
    yields: Sequence[YieldPoint],
    geometry: FieldGeometry,
) -> tuple[list[NearestAssociation], int]:
    """Match every image to its closest facing-row yield point.

    Yield points that end up without at least one image on each side are
    dropped; the second return value counts them.  Distance ties break
    to the smaller yield id.
    """
    index = _yield_index(yields)
    north: dict[int, list[int]] = {}
    south: dict[int, list[int]] = {}
    for img in sorted(images, key=lambda im: im.id):
        cand = _facing_candidates(img, geometry, index)
        if cand is None:
            continue
        xs, pts = cand
        i = bisect.bisect_left(xs, img.pos.x)
        best = None
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(pts):
                key = (abs(pts[j].pos.x - img.pos.x), pts[j].id)
                if best is None or key < best[0]:
                    best = (key, pts[j])
        if best is None:
            continue
        target = north if img.side == NORTH else south
        target.setdefault(best[1].id, []).append(img.id)

    out = []
    dropped = 0
    for p in sorted(yields, key=lambda p: p.id):
        n = tuple(sorted(north.get(p.id, ())))
        s = tuple(sorted(south.get(p.id, ())))
        if n and s:
            out.append(NearestAssociation(yield_id=p.id, north=n, south=s))
        else:
            dropped += 1
    return out, dropped


def associate_window(
    images: Sequence[ImageRecord],
    yields: Sequence[YieldPoint],
    geometry: FieldGeometry,
    half_width_m: float = DEFAULT_HALF_WIDTH_M,
) -> tuple[list[WindowAssociation], int]:
    """Bind every facing-row image within the along-row window to each point.

    One image may appear in several windows.  Points without at least one
    North and one South member are discarded (counted in the second
    return value).
    """
    if half_width_m <= 0:
        raise ValidationError("window half-width must be positive")
    index = _yield_index(yields)
    members: dict[int, list[tuple[int, float, str]]] = {}
    for img in sorted(images, key=lambda im: im.id):
        cand = _facing_candidates(img, geometry, index)
        if cand is None:
            continue
        xs, pts = cand
        lo = bisect.bisect_left(xs, img.pos.x - half_width_m)
        hi = bisect.bisect_right(xs, img.pos.x + half_width_m)
        for p in pts[lo:hi]:
            offset = img.pos.x - p.pos.x
            if abs(offset) <= half_width_m:
                members.setdefault(p.id, []).append((img.id, offset, img.side))

    out = []
    dropped = 0
    for p in sorted(yields, key=lambda p: p.id):
        entries = members.get(p.id, [])
        if not any(side == NORTH for _, _, side in entries) or not any(
            side == SOUTH for _, _, side in entries
        ):
            dropped += 1
            continue
        ms = []
        for image_id, offset, side in sorted(entries):
            position, orientation = positional_scalars(offset, side, half_width_m)
            ms.append(WindowMember(image_id=image_id, position=position, orientation=orientation))
        out.append(WindowAssociation(yield_id=p.id, members=tuple(ms)))
    return out, dropped


def estimate_vine_count(yields: Sequence[YieldPoint], geometry: FieldGeometry) -> int:
    """Count distinct vines by snapping points to the vine/row grid."""
    seen = set()
    for p in yields:
        bg = geometry.require(p.block)
        vine = round(p.pos.x / bg.vine_spacing)
        row = round((p.pos.y - bg.row_y0) / bg.row_spacing)
        seen.add((p.block, vine, row))
    return len(seen)


# --- spatial splitting -------------------------------------------------------


@dataclass(frozen=True)
class LabeledRegion:
    """A simple polygon in local coordinates carrying a split label."""

    label: str
    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if self.label not in SPLITS or self.label == "unassigned":
            raise ValidationError(f"region label must be train/validation/test, got {self.label!r}")
        if len(self.vertices) < 3:
            raise ValidationError("polygon needs at least 3 vertices")


def point_in_polygon(p: LocalPoint, vertices: Sequence[tuple[float, float]]) -> bool:
    """Even-odd ray casting; boundary points count as inside on one edge only."""
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if (y1 > p.y) != (y2 > p.y):
            x_cross = x1 + (p.y - y1) * (x2 - x1) / (y2 - y1)
            if p.x < x_cross:
                inside = not inside
    return inside


@dataclass(frozen=True)
class AdjacencyWarning:
    point_id: int
    point_split: str
    test_id: int
    distance_m: float


@dataclass(frozen=True)
class SplitReport:
    counts: Mapping[str, int]
    adjacency: tuple[AdjacencyWarning, ...]


def spatial_split(
    yields: Sequence[YieldPoint],
    regions: Sequence[LabeledRegion],
    buffer_m: float = DEFAULT_SPLIT_BUFFER_M,
) -> tuple[list[YieldPoint], SplitReport]:
    """Label points by region membership; outside every region means unassigned.

    Regions with conflicting labels may not overlap.  After labeling, any
    train/validation point within ``buffer_m`` of a test point is reported
    (not relabeled) so leaky splits are visible.
    """
    labeled = []
    for p in yields:
        hits = {r.label for r in regions if point_in_polygon(p.pos, r.vertices)}
        if len(hits) > 1:
            raise ValidationError(
                f"point {p.id} falls in overlapping regions with labels {sorted(hits)}"
            )
        split = hits.pop() if hits else "unassigned"
        labeled.append(dataclasses.replace(p, split=split))

    test_pts = [p for p in labeled if p.split == "test"]
    warnings: list[AdjacencyWarning] = []
    if test_pts and buffer_m > 0:
        from scipy.spatial import cKDTree

        tree = cKDTree([(p.pos.x, p.pos.y) for p in test_pts])
        for p in labeled:
            if p.split not in ("train", "validation"):
                continue
            dist, idx = tree.query([p.pos.x, p.pos.y], k=1)
            if dist <= buffer_m:
                warnings.append(
                    AdjacencyWarning(
                        point_id=p.id,
                        point_split=p.split,
                        test_id=test_pts[int(idx)].id,
                        distance_m=float(dist),
                    )
                )

    counts = {s: 0 for s in SPLITS}
    for p in labeled:
        counts[p.split] += 1
    return labeled, SplitReport(counts=counts, adjacency=tuple(warnings))


# --- file formats ------------------------------------------------------------


def read_regions_geojson(path, label_property: str = "label") -> list[LabeledRegion]:
    """Load labeled polygons from a GeoJSON-style FeatureCollection (local coords)."""
    with open(path) as fh:
        data = json.load(fh)
    regions = []
    for feat in data.get("features", []):
        geom = feat.get("geometry", {})
        if geom.get("type") != "Polygon":
            raise ValidationError(f"{path}: only Polygon features supported")
        ring = geom["coordinates"][0]
        verts = tuple((float(x), float(y)) for x, y in ring)
        if len(verts) > 3 and verts[0] == verts[-1]:
            verts = verts[:-1]
        regions.append(LabeledRegion(label=feat["properties"][label_property], vertices=verts))
    return regions


def write_associations_jsonl(path, assocs: Iterable, provenance: dict | None = None) -> None:
    with open(path, "w") as fh:
        if provenance:
            fh.write(json.dumps({"_provenance": provenance}, sort_keys=True) + "\n")
        for a in assocs:
            if isinstance(a, NearestAssociation):
                rec = {"yield_id": a.yield_id, "north": list(a.north), "south": list(a.south)}
            else:
                rec = {
                    "yield_id": a.yield_id,
                    "members": [
                        {"image_id": m.image_id, "position": m.position, "orientation": m.orientation}
                        for m in a.members
                    ],
                }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_associations_jsonl(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if "_provenance" in rec:
                continue
            if "members" in rec:
                out.append(
                    WindowAssociation(
                        yield_id=int(rec["yield_id"]),
                        members=tuple(
                            WindowMember(int(m["image_id"]), float(m["position"]), float(m["orientation"]))
                            for m in rec["members"]
                        ),
                    )
                )
            else:
                out.append(
                    NearestAssociation(
                        yield_id=int(rec["yield_id"]),
                        north=tuple(rec["north"]),
                        south=tuple(rec["south"]),
                    )
                )
    return out
