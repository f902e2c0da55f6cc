"""Bounding-box detections: AP validation and detection-driven yield estimates.

Detections arrive from files (the detector itself is out of scope); this
module validates them against hand labels and turns per-image box
counts or summed box areas into yield predictions through a linear fit
forced through the origin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .association import NearestAssociation
from .errors import ValidationError

COUNT = "count"
AREA = "area"
MODES = (COUNT, AREA)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixels; confidence present only on predictions."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float | None = None

    def __post_init__(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValidationError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @staticmethod
    def from_center(cx: float, cy: float, w: float, h: float, confidence: float | None = None) -> "Box":
        return Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, confidence)


@dataclass(frozen=True)
class DetectionSet:
    image_id: int
    boxes: tuple[Box, ...]


@dataclass(frozen=True)
class OriginFit:
    """Slope of the least-squares line through the origin, t/ha per unit."""

    mode: str
    slope: float


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def average_precision(
    predictions: Mapping[int, Sequence[Box]],
    labels: Mapping[int, Sequence[Box]],
    iou_threshold: float = 0.5,
) -> float:
    """Area under the all-point interpolated precision-recall curve.

    Predictions across all images are ranked by descending confidence
    (ties broken by image id, then input order) and matched greedily,
    one-to-one, to the highest-IoU unmatched label of the same image at
    IoU >= threshold.  With no labels anywhere, AP is 1 if there are
    also no predictions (vacuous success) and 0 otherwise.
    """
    n_labels = sum(len(b) for b in labels.values())
    ranked = []
    for image_id in sorted(predictions):
        for order, box in enumerate(predictions[image_id]):
            if box.confidence is None:
                raise ValidationError(f"prediction without confidence on image {image_id}")
            ranked.append((-box.confidence, image_id, order, box))
    ranked.sort(key=lambda r: r[:3])

    if n_labels == 0:
        return 1.0 if not ranked else 0.0
    if not ranked:
        return 0.0

    matched: dict[int, set[int]] = {}
    tp = np.zeros(len(ranked))
    for k, (_, image_id, _, box) in enumerate(ranked):
        candidates = labels.get(image_id, ())
        used = matched.setdefault(image_id, set())
        best_iou, best_j = 0.0, None
        for j, lab in enumerate(candidates):
            if j in used:
                continue
            v = iou(box, lab)
            if v >= iou_threshold and (best_j is None or v > best_iou):
                best_iou, best_j = v, j
        if best_j is not None:
            used.add(best_j)
            tp[k] = 1.0

    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_labels
    precision = cum_tp / np.arange(1, len(ranked) + 1)

    # all-point interpolation: integrate max precision to the right
    ap = 0.0
    prev_r = 0.0
    for k in range(len(ranked)):
        r = recall[k]
        if r > prev_r:
            ap += (r - prev_r) * float(np.max(precision[k:]))
            prev_r = r
    return float(ap)


def aggregate_detections(
    assoc: NearestAssociation,
    detections: Mapping[int, Sequence[Box]],
    mode: str,
) -> float:
    """Per-side mean box count or summed box area, the two sides summed.

    Images missing from ``detections`` count as detection-free frames.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    if not assoc.north or not assoc.south:
        raise ValidationError(
            f"yield point {assoc.yield_id}: association is missing one camera side"
        )

    def per_image(image_id: int) -> float:
        boxes = detections.get(image_id, ())
        if mode == COUNT:
            return float(len(boxes))
        return float(sum(b.area for b in boxes))

    north = sum(per_image(i) for i in assoc.north) / len(assoc.north)
    south = sum(per_image(i) for i in assoc.south) / len(assoc.south)
    return north + south


def aggregate_for_points(
    assocs: Sequence[NearestAssociation],
    detections: Mapping[int, Sequence[Box]],
    mode: str,
) -> tuple[dict[int, float], list[int]]:
    """Aggregate every association, skipping invalid ones with a note."""
    values: dict[int, float] = {}
    skipped: list[int] = []
    for a in assocs:
        try:
            values[a.yield_id] = aggregate_detections(a, detections, mode)
        except ValidationError:
            skipped.append(a.yield_id)
    return values, skipped


def fit_origin_linear(x: Sequence[float], y: Sequence[float], mode: str = AREA) -> OriginFit:
    """Least squares through the origin: slope = sum(x*y) / sum(x*x)."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.size == 0:
        raise ValidationError(f"need equal nonzero lengths, got {xa.size} and {ya.size}")
    sxx = float(np.dot(xa, xa))
    if sxx == 0.0:
        raise ValidationError("all x are zero; slope through the origin is undefined")
    return OriginFit(mode=mode, slope=float(np.dot(xa, ya)) / sxx)


def predict_yield_from_detections(
    assocs: Sequence[NearestAssociation],
    detections: Mapping[int, Sequence[Box]],
    fit: OriginFit,
) -> tuple[dict[int, float], list[int]]:
    """slope * aggregate for every point; returns (predictions, skipped ids)."""
    values, skipped = aggregate_for_points(assocs, detections, fit.mode)
    return {yid: fit.slope * v for yid, v in values.items()}, skipped


# --- file formats ------------------------------------------------------------


def read_detections_jsonl(path) -> dict[int, tuple[Box, ...]]:
    """One record per image: {"image_id": id, "boxes": [[x0, y0, x1, y1(, conf)], ...]}."""
    out: dict[int, tuple[Box, ...]] = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if "_provenance" in rec:
                continue
            boxes = []
            for vals in rec["boxes"]:
                if len(vals) == 5:
                    boxes.append(Box(*vals[:4], confidence=float(vals[4])))
                else:
                    boxes.append(Box(*vals[:4]))
            out[int(rec["image_id"])] = tuple(boxes)
    return out


def write_detections_jsonl(path, sets: Mapping[int, Sequence[Box]], provenance: dict | None = None) -> None:
    with open(path, "w") as fh:
        if provenance:
            fh.write(json.dumps({"_provenance": provenance}, sort_keys=True) + "\n")
        for image_id in sorted(sets):
            boxes = []
            for b in sets[image_id]:
                row = [b.x_min, b.y_min, b.x_max, b.y_max]
                if b.confidence is not None:
                    row.append(b.confidence)
                boxes.append(row)
            fh.write(json.dumps({"image_id": image_id, "boxes": boxes}, sort_keys=True) + "\n")


def save_fit_json(path, fit: OriginFit, provenance: dict | None = None) -> None:
    payload = {"mode": fit.mode, "slope": fit.slope}
    if provenance:
        payload["_provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


def load_fit_json(path) -> OriginFit:
    with open(path) as fh:
        data = json.load(fh)
    return OriginFit(mode=data["mode"], slope=float(data["slope"]))
