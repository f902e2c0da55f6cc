"""Camera-frame ingest: georeferencing against the GPS track and quality filtering."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .geo import GeoFix, LocalPoint, project_to_local
from .layout import SIDES


@dataclass
class ImageRecord:
    """One camera frame; pixels stay on disk until asked for."""

    id: int
    path: str
    t: float
    side: str
    quality: float = 1.0
    pos: LocalPoint | None = None

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise ValidationError(f"image {self.id}: side must be one of {SIDES}")
        if not (0.0 <= self.quality <= 1.0):
            raise ValidationError(f"image {self.id}: quality {self.quality} outside [0, 1]")

    def load_pixels(self) -> np.ndarray:
        """H x W x 3 float array from the image locator (.npy)."""
        return np.load(self.path)


def parse_image_index_csv(path) -> list[ImageRecord]:
    """Read an image index CSV: image_id, path, timestamp, side[, quality].

    Relative image locators are resolved against the CSV's directory.
    """
    import os

    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    required = ("image_id", "path", "timestamp", "side")
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in required):
        raise ParseError(f"{path}: expected columns {required}")
    out = []
    for i, row in enumerate(reader):
        try:
            quality = float(row["quality"]) if row.get("quality") not in (None, "") else 1.0
            locator = row["path"]
            if locator and not os.path.isabs(locator):
                locator = os.path.join(base, locator)
            out.append(
                ImageRecord(
                    id=int(row["image_id"]),
                    path=locator,
                    t=float(row["timestamp"]),
                    side=row["side"],
                    quality=quality,
                )
            )
        except (TypeError, ValueError, ValidationError) as exc:
            raise ParseError(f"{path}: bad row {i + 2}: {exc}") from exc
    return out


def index_has_quality_column(path) -> bool:
    with open(path, newline="") as fh:
        for line in fh:
            if not line.startswith("#"):
                return "quality" in next(csv.reader([line]))
    return False


def parse_track_csv(path) -> list[GeoFix]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    required = ("timestamp", "lat", "lon")
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in required):
        raise ParseError(f"{path}: expected columns {required}")
    out = []
    for i, row in enumerate(reader):
        try:
            out.append(GeoFix(float(row["lat"]), float(row["lon"]), float(row["timestamp"])))
        except (TypeError, ValueError, ValidationError) as exc:
            raise ParseError(f"{path}: bad row {i + 2}: {exc}") from exc
    return out


def georeference_images(
    frames: Sequence[ImageRecord],
    track: Sequence[GeoFix],
    origin: GeoFix,
    slack_s: float = 0.5,
) -> tuple[list[ImageRecord], int]:
    """Place each frame on the track by timestamp interpolation.

    Frame positions are linear interpolations between the bracketing
    fixes; frames outside the track span (plus ``slack_s``) are dropped
    and counted.  Frames in the slack margin clamp to the track ends.
    """
    if not track:
        raise ValidationError("empty GPS track")
    ts = np.array([f.t for f in track], dtype=float)
    if np.any(np.diff(ts) <= 0):
        raise ValidationError("track timestamps must be strictly increasing")
    pts = project_to_local(track, origin)
    xs = np.array([p.x for p in pts])
    ys = np.array([p.y for p in pts])

    placed: list[ImageRecord] = []
    dropped = 0
    for frame in frames:
        if frame.t < ts[0] - slack_s or frame.t > ts[-1] + slack_s:
            dropped += 1
            continue
        x = float(np.interp(frame.t, ts, xs))
        y = float(np.interp(frame.t, ts, ys))
        placed.append(replace(frame, pos=LocalPoint(x, y)))
    return placed, dropped


def filter_quality(
    frames: Sequence[ImageRecord], threshold: float
) -> tuple[list[ImageRecord], list[ImageRecord]]:
    """Partition frames into (kept, tossed) at ``quality >= threshold``."""
    kept, tossed = [], []
    for f in frames:
        (kept if f.quality >= threshold else tossed).append(f)
    return kept, tossed


def blur_scores(pixel_batches: Sequence[np.ndarray]) -> np.ndarray:
    """Heuristic per-frame sharpness: Laplacian variance, min-max scaled.

    Not part of the field protocol; a stand-in for frames that arrive
    without an ingested quality score.
    """
    from scipy.ndimage import convolve

    kernel = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
    raw = []
    for px in pixel_batches:
        gray = px.mean(axis=2) if px.ndim == 3 else px
        raw.append(float(convolve(gray, kernel, mode="nearest").var()))
    raw_arr = np.array(raw)
    lo, hi = raw_arr.min(), raw_arr.max()
    if math.isclose(lo, hi):
        return np.ones_like(raw_arr)
    return (raw_arr - lo) / (hi - lo)
