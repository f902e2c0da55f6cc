"""Pipeline configuration: one structured file, flag overrides, provenance."""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Mapping

import yaml

from .errors import ValidationError
from .geo import GeoFix
from .layout import FieldGeometry, field_geometry_from_dict

PATH_KEYS = (
    "yield_csv",
    "image_index",
    "gps_track",
    "detections",
    "labels",
    "calibrations",
    "regions",
    "zones",
    "images_dir",
)

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out_dir": "out",
    "association": {
        "half_width_m": 5.0,
        "split_buffer_m": 10.0,
        "quality_threshold": 0.5,
        "track_slack_s": 0.5,
    },
    "detcal": {"mode": "area", "iou_threshold": 0.5},
}


def _merge(base: dict, extra: Mapping) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str) -> dict:
    """Read a YAML config, apply defaults, resolve paths relative to the file.

    The pre-resolution mapping is kept under ``_source`` so provenance
    hashes describe the configuration content, not where it happens to
    sit on disk.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    cfg = _merge(DEFAULTS, raw)
    cfg["_source"] = _merge(DEFAULTS, raw)
    base = os.path.dirname(os.path.abspath(path))
    paths = dict(cfg.get("paths", {}))
    for key, value in paths.items():
        if value and not os.path.isabs(value):
            paths[key] = os.path.normpath(os.path.join(base, value))
    cfg["paths"] = paths
    if "out_dir" in cfg and not os.path.isabs(cfg["out_dir"]):
        cfg["out_dir"] = os.path.normpath(os.path.join(base, cfg["out_dir"]))
    return cfg


def config_hash(cfg: Mapping) -> str:
    source = cfg.get("_source", {k: v for k, v in cfg.items() if k != "_source"})
    canon = json.dumps(source, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def provenance(cfg: Mapping) -> dict:
    return {"config_hash": config_hash(cfg), "seed": int(cfg.get("seed", 0))}


def origin_from_config(cfg: Mapping) -> GeoFix:
    o = cfg.get("origin")
    if not o:
        raise ValidationError("config has no origin (lat/lon); synth writes one")
    return GeoFix(float(o["lat"]), float(o["lon"]), 0.0)


def geometry_from_config(cfg: Mapping) -> FieldGeometry:
    field_cfg = cfg.get("field")
    if not field_cfg:
        raise ValidationError("config has no field geometry section")
    return field_geometry_from_dict(field_cfg)


def require_path(cfg: Mapping, key: str) -> str:
    path = cfg.get("paths", {}).get(key)
    if not path:
        raise ValidationError(f"config paths.{key} is not set")
    if key != "images_dir" and not os.path.exists(path):
        raise ValidationError(f"config paths.{key} does not exist: {path}")
    return path
