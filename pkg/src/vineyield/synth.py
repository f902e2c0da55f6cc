"""Synthetic vineyard generator: the ground truth a proprietary field cannot give.

Lays out blocks of east-west rows, plants per-vine yields from a seeded
smooth-field-plus-noise model, drives a virtual two-camera rig through
every aisle, and records a harvester stream with configurable smearing,
offset, and GPS jitter.  Emits exactly the CSV/JSONL/GeoJSON formats the
ingest modules consume, so the full pipeline runs unmodified on it.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .geo import GeoFix, LocalPoint, local_to_geodetic
from .layout import BlockGeometry, FieldGeometry, field_geometry_to_dict


@dataclass(frozen=True)
class SmearKernel:
    """Mixing weights and along-row offset applied by the virtual harvester."""

    weights: tuple[float, ...] = (1.0,)
    offset_m: float = 0.0

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0 or np.any(w < 0):
            raise ValidationError("kernel weights must be nonnegative and nonempty")
        if not math.isclose(float(w.sum()), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValidationError(f"kernel weights must sum to 1, got {w.sum()}")

    @staticmethod
    def triangular(offset_m: float = 0.77) -> "SmearKernel":
        return SmearKernel(weights=(0.25, 0.5, 0.25), offset_m=offset_m)


def harvester_smear(
    sample_x: np.ndarray,
    kernel: SmearKernel,
    tap_spacing_m: float,
    true_yield_at: Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    """recorded(x) = sum_k w_k * true(x - offset - k*tap_spacing), taps centered."""
    xs = np.asarray(sample_x, dtype=float)
    k = len(kernel.weights)
    center = (k - 1) / 2.0
    out = np.zeros_like(xs)
    for i, w in enumerate(kernel.weights):
        shift = kernel.offset_m + (i - center) * tap_spacing_m
        out += w * true_yield_at(xs - shift)
    return out


@dataclass(frozen=True)
class BlockSpec:
    block: str = "B1"
    n_rows: int = 6
    row_spacing_m: float = 3.0
    vine_spacing_m: float = 1.5
    row_length_m: float = 120.0
    x0: float = 0.0
    y0: float = 0.0


@dataclass(frozen=True)
class FieldSpec:
    blocks: tuple[BlockSpec, ...] = (BlockSpec(),)
    image_spacing_m: float = 0.22
    yield_spacing_m: float = 0.77
    keep_rate: float = 1.0
    frame_h: int = 32
    frame_w: int = 32
    # per-vine yield model: smooth along-row wave plus white per-vine noise
    yield_mean_tha: float = 15.0
    yield_amplitude_tha: float = 5.0
    yield_wavelength_m: float = 100.0
    vine_noise_tha: float = 0.0
    # frame content: summed blob area is affine in the facing vine's yield
    area_per_tha: float = 22.0
    area_intercept_px2: float = 0.0
    blob_count: int = 3
    area_noise_rel: float = 0.0
    # sensing noise
    gps_noise_m: float = 0.0
    smear: SmearKernel = SmearKernel()
    # synthetic detector imperfections (labels always carry the true boxes)
    det_box_jitter_px: float = 0.0
    det_miss_rate: float = 0.0
    det_fp_rate: float = 0.0
    label_count: int = 24
    # splits partition the field along x; bands between them stay unassigned
    split_fractions: tuple[float, float, float] = (0.6, 0.15, 0.25)
    split_band_m: float = 10.0
    quality_threshold: float = 0.5
    speed_mps: float = 3.3
    gps_rate_hz: float = 10.0
    origin_lat: float = 38.30
    origin_lon: float = -121.90
    seed: int = 20_20

    def __post_init__(self) -> None:
        if self.image_spacing_m <= 0 or self.yield_spacing_m <= 0:
            raise ValidationError("spacings must be positive")
        if not (0.0 <= self.keep_rate <= 1.0):
            raise ValidationError(f"keep rate {self.keep_rate} outside [0, 1]")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValidationError("split fractions must sum to 1")


@dataclass(frozen=True)
class VineTruth:
    block: str
    row_id: int
    x: float
    y: float
    yield_tha: float


@dataclass(frozen=True)
class YieldSample:
    id: int
    block: str
    row_id: int
    x: float
    y: float
    recorded_tha: float
    t: float


@dataclass(frozen=True)
class FrameTruth:
    id: int
    block: str
    side: str
    facing_row: int
    x: float
    y: float
    t: float
    quality: float
    boxes: tuple[tuple[float, float, float, float], ...]
    facing_yield_tha: float


@dataclass
class FieldTruth:
    """Everything the generator knows; the oracle for pipeline verification."""

    spec: FieldSpec
    geometry: FieldGeometry
    vines: list[VineTruth]
    samples: list[YieldSample]
    frames: list[FrameTruth]
    calibrations: dict[str, float]
    origin: GeoFix
    paths: dict[str, str] = field(default_factory=dict)

    def vine_lookup(self, block: str, row_id: int) -> tuple[np.ndarray, np.ndarray]:
        cache = getattr(self, "_vine_cache", None)
        if cache is None:
            cache = {}
            for v in self.vines:
                cache.setdefault((v.block, v.row_id), ([], []))
                cache[(v.block, v.row_id)][0].append(v.x)
                cache[(v.block, v.row_id)][1].append(v.yield_tha)
            cache = {k: (np.array(xs), np.array(ys)) for k, (xs, ys) in cache.items()}
            self._vine_cache = cache
        return cache[(block, row_id)]


def _step_lookup(x0: float, spacing: float, values: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    def fn(xs: np.ndarray) -> np.ndarray:
        idx = np.clip(np.floor((xs - x0) / spacing).astype(int), 0, len(values) - 1)
        return values[idx]

    return fn


def _plant_vines(spec: FieldSpec, bs: BlockSpec, rng: np.random.Generator) -> list[VineTruth]:
    n_vines = int(bs.row_length_m // bs.vine_spacing_m)
    out = []
    for row in range(bs.n_rows):
        phase = rng.uniform(0, 2 * math.pi)
        noise = rng.standard_normal(n_vines) * spec.vine_noise_tha
        for v in range(n_vines):
            x = bs.x0 + (v + 0.5) * bs.vine_spacing_m
            wave = spec.yield_amplitude_tha * math.sin(
                2 * math.pi * (x - bs.x0) / spec.yield_wavelength_m + phase
            )
            y_val = max(0.5, spec.yield_mean_tha + wave + float(noise[v]))
            out.append(VineTruth(bs.block, row, x, bs.y0 + row * bs.row_spacing_m, y_val))
    return out


def _render_frame(
    spec: FieldSpec,
    boxes: Sequence[tuple[float, float, float, float]],
    rng: np.random.Generator,
) -> np.ndarray:
    px = rng.uniform(0.02, 0.10, size=(spec.frame_h, spec.frame_w, 3)).astype(np.float32)
    for (x0, y0, x1, y1) in boxes:
        xi0, yi0 = max(int(x0), 0), max(int(y0), 0)
        xi1, yi1 = min(int(math.ceil(x1)), spec.frame_w), min(int(math.ceil(y1)), spec.frame_h)
        if xi1 <= xi0 or yi1 <= yi0:
            continue
        px[yi0:yi1, xi0:xi1, 0] = 0.25
        px[yi0:yi1, xi0:xi1, 1] = 0.75
        px[yi0:yi1, xi0:xi1, 2] = 0.35
    return px


def _blob_boxes(
    spec: FieldSpec, area_px2: float, rng: np.random.Generator
) -> tuple[tuple[float, float, float, float], ...]:
    """blob_count square boxes whose areas sum exactly to area_px2."""
    if area_px2 <= 0:
        return ()
    per = area_px2 / spec.blob_count
    side = math.sqrt(per)
    max_side = min(spec.frame_w, spec.frame_h) - 4.0
    if side > max_side:
        # fewer-but-larger blobs would clip; cap the side and adjust the last box
        side = max_side
    boxes = []
    remaining = area_px2
    for i in range(spec.blob_count):
        s = side if i < spec.blob_count - 1 else math.sqrt(max(remaining, 1e-9))
        s = min(s, max_side)
        cx = rng.uniform(2 + s / 2, spec.frame_w - 2 - s / 2)
        cy = rng.uniform(2 + s / 2, spec.frame_h - 2 - s / 2)
        boxes.append((cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2))
        remaining -= s * s
    return tuple(boxes)


def generate_field(spec: FieldSpec, out_dir: str) -> FieldTruth:
    """Build the field, write every pipeline input file, return the truth."""
    os.makedirs(out_dir, exist_ok=True)
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)

    geometry = FieldGeometry(
        blocks={
            bs.block: BlockGeometry(
                block=bs.block,
                row_y0=bs.y0,
                row_spacing=bs.row_spacing_m,
                n_rows=bs.n_rows,
                x_start=bs.x0,
                x_end=bs.x0 + bs.row_length_m,
                vine_spacing=bs.vine_spacing_m,
            )
            for bs in spec.blocks
        }
    )
    origin = GeoFix(spec.origin_lat, spec.origin_lon, 0.0)

    vine_rng = np.random.default_rng([spec.seed, 1])
    sample_rng = np.random.default_rng([spec.seed, 2])
    frame_rng = np.random.default_rng([spec.seed, 3])
    det_rng = np.random.default_rng([spec.seed, 4])

    vines: list[VineTruth] = []
    truth = FieldTruth(
        spec=spec, geometry=geometry, vines=vines, samples=[], frames=[],
        calibrations={}, origin=origin,
    )
    for bs in spec.blocks:
        vines.extend(_plant_vines(spec, bs, vine_rng))

    # --- harvester stream -----------------------------------------------------
    sample_id = 0
    t_clock = 0.0
    for bs in spec.blocks:
        for row in range(bs.n_rows):
            xs_v, ys_v = truth.vine_lookup(bs.block, row)
            lookup = _step_lookup(bs.x0, bs.vine_spacing_m, ys_v)
            n = int(bs.row_length_m // spec.yield_spacing_m)
            sample_x = bs.x0 + spec.yield_spacing_m / 2 + np.arange(n) * spec.yield_spacing_m
            recorded = harvester_smear(sample_x, spec.smear, spec.yield_spacing_m, lookup)
            y_line = bs.y0 + row * bs.row_spacing_m
            jitter = sample_rng.standard_normal((n, 2)) * spec.gps_noise_m
            for j in range(n):
                truth.samples.append(
                    YieldSample(
                        id=sample_id,
                        block=bs.block,
                        row_id=row,
                        x=float(sample_x[j] + jitter[j, 0]),
                        y=float(y_line + jitter[j, 1]),
                        recorded_tha=float(recorded[j]),
                        t=t_clock,
                    )
                )
                sample_id += 1
                t_clock += spec.yield_spacing_m / spec.speed_mps
            t_clock += 30.0  # row turn

    for bs in spec.blocks:
        vals = [s.recorded_tha for s in truth.samples if s.block == bs.block]
        truth.calibrations[bs.block] = float(np.mean(vals))

    # --- camera passes and GPS track -------------------------------------------
    track_fixes: list[tuple[float, float, float]] = []  # (t, x, y)
    frame_id = 0
    t_clock = 1_000_000.0  # imaging session clock, disjoint from harvest clock
    for bs in spec.blocks:
        bg = geometry.blocks[bs.block]
        n_frames = int(bs.row_length_m // spec.image_spacing_m)
        for aisle in range(-1, bs.n_rows):
            y_aisle = bs.y0 + (aisle + 0.5) * bs.row_spacing_m
            eastbound = aisle % 2 == 0
            pass_len = bs.row_length_m
            t_start = t_clock
            t_end = t_start + pass_len / spec.speed_mps
            # GPS fixes at the configured rate, plus one at the exact pass end
            fix_ts = [t_start + k / spec.gps_rate_hz
                      for k in range(int((t_end - t_start) * spec.gps_rate_hz) + 1)]
            if fix_ts[-1] < t_end:
                fix_ts.append(t_end)
            for t in fix_ts:
                dist = (t - t_start) * spec.speed_mps
                x = bs.x0 + dist if eastbound else bs.x0 + pass_len - dist
                gx, gy = frame_rng.standard_normal(2) * spec.gps_noise_m
                track_fixes.append((t, x + gx, y_aisle + gy))
            for m in range(n_frames):
                dist = spec.image_spacing_m / 2 + m * spec.image_spacing_m
                x = bs.x0 + dist if eastbound else bs.x0 + pass_len - dist
                t = t_start + dist / spec.speed_mps
                for side in ("North", "South"):
                    facing = bg.facing_row(LocalPoint(x, y_aisle), side)
                    if facing is None:
                        continue
                    xs_v, ys_v = truth.vine_lookup(bs.block, facing)
                    y_vine = float(_step_lookup(bs.x0, bs.vine_spacing_m, ys_v)(np.array([x]))[0])
                    area = spec.area_per_tha * y_vine + spec.area_intercept_px2
                    if spec.area_noise_rel > 0:
                        area = max(0.0, area * (1 + spec.area_noise_rel * frame_rng.standard_normal()))
                    boxes = _blob_boxes(spec, area, frame_rng)
                    keep = frame_rng.random() < spec.keep_rate
                    if keep:
                        quality = spec.quality_threshold + (1 - spec.quality_threshold) * frame_rng.random()
                    else:
                        quality = spec.quality_threshold * 0.9 * frame_rng.random()
                    truth.frames.append(
                        FrameTruth(
                            id=frame_id,
                            block=bs.block,
                            side=side,
                            facing_row=facing,
                            x=x,
                            y=y_aisle,
                            t=t,
                            quality=float(quality),
                            boxes=boxes,
                            facing_yield_tha=y_vine,
                        )
                    )
                    frame_id += 1
            t_clock = t_end + 8.0  # turn to the next aisle

    track_fixes.sort(key=lambda f: f[0])

    # --- write artifacts --------------------------------------------------------
    paths = truth.paths
    paths["yield_csv"] = os.path.join(out_dir, "yield.csv")
    with open(paths["yield_csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "lat", "lon", "yield_raw", "block", "row_id"])
        geos = local_to_geodetic([LocalPoint(s.x, s.y) for s in truth.samples], origin)
        for s, (lat, lon) in zip(truth.samples, geos):
            w.writerow([repr(s.t), repr(lat), repr(lon), repr(s.recorded_tha), s.block, s.row_id])

    paths["gps_track"] = os.path.join(out_dir, "track.csv")
    with open(paths["gps_track"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "lat", "lon"])
        geos = local_to_geodetic([LocalPoint(x, y) for _, x, y in track_fixes], origin)
        for (t, _, _), (lat, lon) in zip(track_fixes, geos):
            w.writerow([repr(t), repr(lat), repr(lon)])

    paths["image_index"] = os.path.join(out_dir, "images.csv")
    with open(paths["image_index"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "path", "timestamp", "side", "quality"])
        for fr in truth.frames:
            rel = os.path.join("images", f"frame_{fr.id:06d}.npy")
            np.save(os.path.join(out_dir, rel),
                    _render_frame(spec, fr.boxes, np.random.default_rng([spec.seed, 5, fr.id])))
            w.writerow([fr.id, rel, repr(fr.t), fr.side, repr(fr.quality)])

    # detector outputs for every frame; hand labels for an evenly spread subset
    detections: dict[int, list[list[float]]] = {}
    labels: dict[int, list[list[float]]] = {}
    label_stride = max(1, len(truth.frames) // max(spec.label_count, 1))
    for fr in truth.frames:
        pred = []
        for b in fr.boxes:
            if det_rng.random() < spec.det_miss_rate:
                continue
            jitter = det_rng.standard_normal(4) * spec.det_box_jitter_px
            conf = 0.6 + 0.4 * det_rng.random()
            x0, y0, x1, y1 = (b[0] + jitter[0], b[1] + jitter[1], b[2] + jitter[2], b[3] + jitter[3])
            if x1 <= x0 or y1 <= y0:
                continue
            pred.append([float(x0), float(y0), float(x1), float(y1), float(conf)])
        if spec.det_fp_rate > 0 and det_rng.random() < spec.det_fp_rate:
            s = det_rng.uniform(2, 5)
            cx = det_rng.uniform(s, spec.frame_w - s)
            cy = det_rng.uniform(s, spec.frame_h - s)
            pred.append([cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2, float(0.3 + 0.3 * det_rng.random())])
        detections[fr.id] = pred
        if fr.id % label_stride == 0 and fr.boxes:
            labels[fr.id] = [[float(v) for v in b] for b in fr.boxes]

    paths["detections"] = os.path.join(out_dir, "detections.jsonl")
    with open(paths["detections"], "w") as fh:
        for image_id in sorted(detections):
            fh.write(json.dumps({"image_id": image_id, "boxes": detections[image_id]}) + "\n")
    paths["labels"] = os.path.join(out_dir, "labels.jsonl")
    with open(paths["labels"], "w") as fh:
        for image_id in sorted(labels):
            fh.write(json.dumps({"image_id": image_id, "boxes": labels[image_id]}) + "\n")

    paths["calibrations"] = os.path.join(out_dir, "calibrations.json")
    with open(paths["calibrations"], "w") as fh:
        json.dump(
            {"calibrations": [{"block": b, "winery_mean_tha": m}
                              for b, m in sorted(truth.calibrations.items())]},
            fh, indent=2, sort_keys=True,
        )

    # split regions: vertical slabs along x with unassigned bands between them
    all_x0 = min(bs.x0 for bs in spec.blocks)
    all_x1 = max(bs.x0 + bs.row_length_m for bs in spec.blocks)
    all_y0 = min(bs.y0 for bs in spec.blocks) - 2.0
    all_y1 = max(bs.y0 + (bs.n_rows - 1) * bs.row_spacing_m for bs in spec.blocks) + 2.0
    usable = all_x1 - all_x0 - 2 * spec.split_band_m
    f_train, f_val, _ = spec.split_fractions
    x_train_end = all_x0 + usable * f_train
    x_val_start = x_train_end + spec.split_band_m
    x_val_end = x_val_start + usable * f_val
    x_test_start = x_val_end + spec.split_band_m

    def slab(label: str, x0: float, x1: float) -> dict:
        return {
            "type": "Feature",
            "properties": {"label": label},
            "geometry": {
                "type": "Polygon",
                "coordinates": [[[x0, all_y0], [x1, all_y0], [x1, all_y1], [x0, all_y1], [x0, all_y0]]],
            },
        }

    paths["regions"] = os.path.join(out_dir, "regions.geojson")
    with open(paths["regions"], "w") as fh:
        json.dump(
            {
                "type": "FeatureCollection",
                "features": [
                    slab("train", all_x0 - 1.0, x_train_end),
                    slab("validation", x_val_start, x_val_end),
                    slab("test", x_test_start, all_x1 + 1.0),
                ],
            },
            fh, indent=2, sort_keys=True,
        )

    paths["zones"] = os.path.join(out_dir, "zones.geojson")
    with open(paths["zones"], "w") as fh:
        features = []
        for bs in spec.blocks:
            y0 = bs.y0 - 2.0
            y1 = bs.y0 + (bs.n_rows - 1) * bs.row_spacing_m + 2.0
            x0, x1 = bs.x0 - 1.0, bs.x0 + bs.row_length_m + 1.0
            features.append(
                {
                    "type": "Feature",
                    "properties": {"name": bs.block},
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]],
                    },
                }
            )
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=2, sort_keys=True)

    paths["truth_vines"] = os.path.join(out_dir, "truth_vines.csv")
    with open(paths["truth_vines"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "row_id", "x", "y", "yield_tha"])
        for v in vines:
            w.writerow([v.block, v.row_id, repr(v.x), repr(v.y), repr(v.yield_tha)])

    paths["images_dir"] = images_dir
    return truth
