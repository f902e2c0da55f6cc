"""Saliency maps, detection heatmaps, and yield-map emission."""

from __future__ import annotations

import json
from typing import Mapping, Sequence

import numpy as np

from .detection import Box
from .errors import ValidationError
from .metrics import SpatialBin
from .nn.models import CnnRegressor
from .nn.tensor import Tensor


def _normalize01(m: np.ndarray) -> np.ndarray:
    peak = float(m.max())
    if peak <= 0.0:
        return np.zeros_like(m)
    lo = float(m.min())
    if peak == lo:
        return np.ones_like(m)
    return (m - lo) / (peak - lo)


def bilinear_resize(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    from scipy.ndimage import zoom

    if m.shape == (out_h, out_w):
        return m.copy()
    return zoom(m, (out_h / m.shape[0], out_w / m.shape[1]), order=1,
                mode="nearest", grid_mode=True)


def grad_cam(model: CnnRegressor, pair: np.ndarray) -> np.ndarray:
    """Gradient-weighted activation map for one paired input, scaled to [0, 1].

    Channel weights are the spatial means of d(prediction)/d(activation)
    on the backbone's final activation map; the rectified weighted sum is
    upsampled bilinearly to the input size.  A map that is identically
    zero stays zero rather than being rescaled.
    """
    if not hasattr(model, "backbone"):
        raise ValidationError("checkpoint architecture has no designated activation layer")
    was_training = model.training
    model.eval()
    x = Tensor(np.asarray(pair)[None])
    preds, act = model.forward(x, retain_activation=True)
    preds.backward(np.ones_like(preds.data))
    model.train(was_training)
    if act.grad is None:
        raise ValidationError("no gradient reached the designated activation layer")

    weights = act.grad[0].mean(axis=(1, 2))  # (C,)
    cam = np.maximum((weights[:, None, None] * act.data[0]).sum(axis=0), 0.0)
    cam = bilinear_resize(cam, pair.shape[1], pair.shape[2])
    cam = np.maximum(cam, 0.0)
    return _normalize01(cam)


def detection_canvas(boxes: Sequence[Box], height: int, width: int) -> np.ndarray:
    """Binary map with 1 inside any box; boxes are clamped to the frame."""
    canvas = np.zeros((height, width))
    for b in boxes:
        x0 = max(int(np.floor(b.x_min)), 0)
        y0 = max(int(np.floor(b.y_min)), 0)
        x1 = min(int(np.ceil(b.x_max)), width)
        y1 = min(int(np.ceil(b.y_max)), height)
        if x1 > x0 and y1 > y0:
            canvas[y0:y1, x0:x1] = 1.0
    return canvas


def aggregate_heatmaps(groups: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    """Mean within each group, then mean of the group means.

    Every group gets equal weight regardless of how many maps it holds.
    """
    if not groups:
        raise ValidationError("no heatmap groups to aggregate")
    means = []
    for i, group in enumerate(groups):
        if not len(group):
            raise ValidationError(f"heatmap group {i} is empty")
        stack = np.stack([np.asarray(m) for m in group])
        means.append(stack.mean(axis=0))
    return np.stack(means).mean(axis=0)


def save_heatmap_array(path, heatmap: np.ndarray, provenance: dict | None = None) -> None:
    """Portable row-major float dump with a shape header (.npy).

    The .npy format cannot carry metadata, so provenance lands in a
    sidecar JSON next to it.
    """
    np.save(path, np.ascontiguousarray(heatmap, dtype=np.float64))
    if provenance:
        with open(f"{path}.meta.json", "w") as fh:
            json.dump({"_provenance": provenance, "shape": list(heatmap.shape)},
                      fh, sort_keys=True)


def save_heatmap_png(path, heatmap: np.ndarray, title: str = "",
                     provenance: dict | None = None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(heatmap, cmap="inferno", vmin=0.0, vmax=1.0)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.colorbar(im, ax=ax)
    meta = {"Software": "vineyield"}
    if provenance:
        meta["Comment"] = json.dumps(provenance, sort_keys=True)
    fig.savefig(path, dpi=120, metadata=meta)
    plt.close(fig)


# --- yield maps ---------------------------------------------------------------


def _bin_value(b: SpatialBin, channel: str) -> float:
    if channel == "measured":
        return b.mean_measured
    if channel == "predicted":
        return b.mean_predicted
    raise ValidationError(f"channel must be measured or predicted, got {channel!r}")


def emit_yield_map_geojson(path, bins: Sequence[SpatialBin], channel: str,
                           provenance: dict | None = None) -> None:
    if not bins:
        raise ValidationError("no bins to map")
    features = []
    for b in bins:
        ring = [
            [b.x0, b.y0],
            [b.x0 + b.size_m, b.y0],
            [b.x0 + b.size_m, b.y0 + b.size_m],
            [b.x0, b.y0 + b.size_m],
            [b.x0, b.y0],
        ]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "block": b.block,
                    "i": b.i,
                    "j": b.j,
                    "n": len(b.member_ids),
                    "yield_tha": _bin_value(b, channel),
                    "channel": channel,
                },
            }
        )
    payload = {"type": "FeatureCollection", "features": features}
    if provenance:
        payload["_provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


def emit_yield_map_png(path, bins: Sequence[SpatialBin], channel: str,
                       provenance: dict | None = None) -> None:
    if not bins:
        raise ValidationError("no bins to map")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Rectangle

    values = np.array([_bin_value(b, channel) for b in bins])
    vmin, vmax = float(values.min()), float(values.max())
    span = vmax - vmin if vmax > vmin else 1.0
    cmap = plt.get_cmap("viridis")

    fig, ax = plt.subplots(figsize=(8, 6))
    for b, v in zip(bins, values):
        ax.add_patch(
            Rectangle((b.x0, b.y0), b.size_m, b.size_m,
                      facecolor=cmap((v - vmin) / span), edgecolor="none")
        )
    xs = [b.x0 for b in bins] + [b.x0 + b.size_m for b in bins]
    ys = [b.y0 for b in bins] + [b.y0 + b.size_m for b in bins]
    ax.set_xlim(min(xs) - 5, max(xs) + 5)
    ax.set_ylim(min(ys) - 5, max(ys) + 5)
    ax.set_aspect("equal")
    ax.set_xlabel("east (m)")
    ax.set_ylabel("north (m)")
    ax.set_title(f"{channel} yield")
    sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(vmin=vmin, vmax=vmax))
    fig.colorbar(sm, ax=ax, label="t/ha")
    meta = {"Software": "vineyield"}
    if provenance:
        meta["Comment"] = json.dumps(provenance, sort_keys=True)
    fig.savefig(path, dpi=120, metadata=meta)
    plt.close(fig)


def emit_yield_map(path, bins: Sequence[SpatialBin], channel: str, fmt: str,
                   provenance: dict | None = None) -> None:
    if fmt == "geojson":
        emit_yield_map_geojson(path, bins, channel, provenance)
    elif fmt == "png":
        emit_yield_map_png(path, bins, channel, provenance)
    else:
        raise ValidationError(f"unsupported map format {fmt!r}")
