"""Command-line pipeline: synth -> ingest -> split -> associate -> detcal /
train -> predict -> evaluate -> saliency / map.

Every subcommand reads one structured config (``--config``), honors flag
overrides, logs to stderr, writes data only to files, and stamps each
artifact with the config hash and seed.  Module errors exit nonzero with
a machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import association as assoc_mod
from . import config as config_mod
from . import detection as det_mod
from . import images as img_mod
from . import metrics as metrics_mod
from . import saliency as sal_mod
from . import synth as synth_mod
from . import yields as yields_mod
from .errors import ParseError, TrainingDiverged, ValidationError
from .nn import models as nn_models
from .nn import training as nn_training

log = logging.getLogger("vineyield")


def _out_path(cfg, name: str) -> str:
    os.makedirs(cfg["out_dir"], exist_ok=True)
    return os.path.join(cfg["out_dir"], name)


def _provenance_line(cfg) -> str:
    return "provenance " + json.dumps(config_mod.provenance(cfg), sort_keys=True)


# --- subcommands ---------------------------------------------------------------


def cmd_synth(cfg, args) -> None:
    """Generate a synthetic field plus a ready-to-run pipeline config."""
    spec_cfg = cfg.get("synth", {})
    profile = args.profile or spec_cfg.get("profile", "noisy")
    seed = int(cfg.get("seed", 0))
    out_dir = cfg["out_dir"]
    spec = synth_profile(profile, seed, spec_cfg)
    truth = synth_mod.generate_field(spec, out_dir)
    config_path = os.path.join(out_dir, "pipeline.yaml")
    write_pipeline_config(config_path, spec, truth, seed)
    log.info("synthetic field in %s (%d yield samples, %d frames)",
             out_dir, len(truth.samples), len(truth.frames))
    print(config_path)


def synth_profile(profile: str, seed: int, overrides: dict) -> synth_mod.FieldSpec:
    if profile == "zero-noise":
        spec = synth_mod.FieldSpec(
            blocks=(synth_mod.BlockSpec(block="B1", n_rows=6, row_length_m=160.0),),
            image_spacing_m=0.44,
            seed=seed,
        )
    elif profile == "noisy":
        # the harvester offset is exaggerated (3 samples) so that the value of
        # positional metadata is actually observable at desk scale
        spec = synth_mod.FieldSpec(
            blocks=(synth_mod.BlockSpec(block="B1", n_rows=8, row_length_m=160.0),),
            image_spacing_m=0.66,
            vine_noise_tha=1.0,
            area_noise_rel=0.08,
            gps_noise_m=0.04,
            smear=synth_mod.SmearKernel.triangular(offset_m=3.85),
            det_box_jitter_px=0.5,
            det_miss_rate=0.05,
            det_fp_rate=0.1,
            keep_rate=0.92,
            seed=seed,
        )
    else:
        raise ValidationError(f"unknown synth profile {profile!r}")
    if overrides:
        fields = {k: v for k, v in overrides.items() if k != "profile"}
        if "smear" in fields:
            fields["smear"] = synth_mod.SmearKernel(
                weights=tuple(fields["smear"].get("weights", (1.0,))),
                offset_m=float(fields["smear"].get("offset_m", 0.0)),
            )
        if "blocks" in fields:
            fields["blocks"] = tuple(synth_mod.BlockSpec(**b) for b in fields["blocks"])
        spec = synth_mod.FieldSpec(**{**spec.__dict__, **fields})
    return spec


def write_pipeline_config(path, spec, truth, seed: int) -> None:
    import yaml

    from .layout import field_geometry_to_dict

    cfg = {
        "seed": seed,
        "out_dir": "run",
        "origin": {"lat": truth.origin.lat, "lon": truth.origin.lon},
        "paths": {k: os.path.relpath(v, os.path.dirname(os.path.abspath(path)))
                  for k, v in truth.paths.items()},
        "field": field_geometry_to_dict(truth.geometry),
        "association": {
            "half_width_m": 5.0,
            "split_buffer_m": float(spec.split_band_m),
            "quality_threshold": float(spec.quality_threshold),
            "track_slack_s": 0.5,
        },
        "detcal": {"mode": "area", "iou_threshold": 0.5},
        "model": {
            "cnn": {
                "frame_h": spec.frame_h,
                "frame_w": spec.frame_w,
                "hidden": [64, 64],
                "dropout": 0.2,
                "backbone": {"stages": [[8, 2], [16, 2], [16, 2]], "in_channels": 3, "kernel": 3},
            },
            "transformer": {
                "frame_h": spec.frame_h,
                "frame_w": spec.frame_w,
                "token_dim": (spec.frame_h // 4) * (spec.frame_w // 4),
                "depth": 2,
                "heads": 8,
                "mlp_ratio": 2,
                "fusion": True,
                "backbone": {"stages": [[8, 2], [16, 2], [16, 1]], "in_channels": 3, "kernel": 3},
            },
        },
        "train": {
            "cnn": {"epochs": 4, "batch_size": 12, "lr": 1e-3, "loss": "adaptive_robust",
                    "augment": True, "dtype": "float32"},
            "transformer": {"epochs": 6, "batch_size": 6, "lr": 1e-3, "loss": "mse",
                            "grad_accumulation": 2, "dtype": "float32"},
        },
    }
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def cmd_ingest(cfg, args) -> None:
    """Parse, clean, and calibrate the yield stream; emit clean.csv + report."""
    origin = config_mod.origin_from_config(cfg)
    geometry = config_mod.geometry_from_config(cfg)
    points = yields_mod.parse_yield_csv(config_mod.require_path(cfg, "yield_csv"), origin=origin)
    kept, _, report = yields_mod.filter_artifacts(points, geometry)
    kept, outliers = yields_mod.remove_outliers_iqr(kept)
    report = yields_mod.RemovalReport(
        off_row=report.off_row, in_gap=report.in_gap,
        sparse_row=report.sparse_row, iqr_outlier=len(outliers),
    )
    calibrations = yields_mod.read_calibrations_json(config_mod.require_path(cfg, "calibrations"))
    kept = yields_mod.calibrate_block_means(kept, calibrations)

    clean_path = _out_path(cfg, "clean.csv")
    yields_mod.write_clean_csv(clean_path, kept, provenance=_provenance_line(cfg))
    with open(_out_path(cfg, "removal_report.json"), "w") as fh:
        json.dump(
            {
                "_provenance": config_mod.provenance(cfg),
                "input_points": len(points),
                "kept": len(kept),
                "removed": {
                    "off_row": report.off_row,
                    "in_gap": report.in_gap,
                    "sparse_row": report.sparse_row,
                    "iqr_outlier": report.iqr_outlier,
                },
            },
            fh, indent=2, sort_keys=True,
        )
    log.info("ingest: %d -> %d points (%d removed)", len(points), len(kept), report.total)


def cmd_split(cfg, args) -> None:
    """Label cleaned points by split region; emit labeled.csv + adjacency report."""
    points = yields_mod.read_clean_csv(_out_path(cfg, "clean.csv"))
    regions = assoc_mod.read_regions_geojson(config_mod.require_path(cfg, "regions"))
    buffer_m = float(cfg["association"]["split_buffer_m"])
    labeled, report = assoc_mod.spatial_split(points, regions, buffer_m=buffer_m)
    yields_mod.write_clean_csv(_out_path(cfg, "labeled.csv"), labeled,
                               provenance=_provenance_line(cfg))
    with open(_out_path(cfg, "split_report.json"), "w") as fh:
        json.dump(
            {
                "_provenance": config_mod.provenance(cfg),
                "counts": dict(report.counts),
                "adjacency_warnings": [
                    {"point_id": w.point_id, "split": w.point_split,
                     "test_id": w.test_id, "distance_m": w.distance_m}
                    for w in report.adjacency
                ],
            },
            fh, indent=2, sort_keys=True,
        )
    log.info("split counts: %s (%d adjacency warnings)", dict(report.counts), len(report.adjacency))


def _load_placed_images(cfg):
    import dataclasses

    origin = config_mod.origin_from_config(cfg)
    index_path = config_mod.require_path(cfg, "image_index")
    frames = img_mod.parse_image_index_csv(index_path)
    if (cfg["association"].get("quality_from_blur")
            and not img_mod.index_has_quality_column(index_path)):
        # heuristic stand-in for frames that arrive unscored (not field protocol)
        scores = img_mod.blur_scores([f.load_pixels() for f in frames])
        frames = [dataclasses.replace(f, quality=float(s)) for f, s in zip(frames, scores)]
        log.info("filled %d missing quality scores from the blur heuristic", len(frames))
    track = img_mod.parse_track_csv(config_mod.require_path(cfg, "gps_track"))
    slack = float(cfg["association"]["track_slack_s"])
    placed, dropped = img_mod.georeference_images(frames, track, origin, slack_s=slack)
    kept, tossed = img_mod.filter_quality(placed, float(cfg["association"]["quality_threshold"]))
    log.info("images: %d placed (%d outside track), %d pass quality (%d tossed)",
             len(placed), dropped, len(kept), len(tossed))
    return kept


def cmd_associate(cfg, args) -> None:
    """Nearest and window association dumps for the labeled yield points."""
    points = yields_mod.read_clean_csv(_out_path(cfg, "labeled.csv"))
    geometry = config_mod.geometry_from_config(cfg)
    images = _load_placed_images(cfg)
    half_width = float(cfg["association"]["half_width_m"])
    prov = config_mod.provenance(cfg)

    nearest, dropped_n = assoc_mod.associate_nearest(images, points, geometry)
    assoc_mod.write_associations_jsonl(_out_path(cfg, "assoc_nearest.jsonl"), nearest, prov)
    windows, dropped_w = assoc_mod.associate_window(images, points, geometry, half_width)
    assoc_mod.write_associations_jsonl(_out_path(cfg, "assoc_window.jsonl"), windows, prov)
    with open(_out_path(cfg, "assoc_report.json"), "w") as fh:
        json.dump(
            {
                "_provenance": prov,
                "nearest": {"kept": len(nearest), "dropped": dropped_n},
                "window": {"kept": len(windows), "dropped": dropped_w,
                           "half_width_m": half_width},
                "estimated_vines": assoc_mod.estimate_vine_count(points, geometry),
            },
            fh, indent=2, sort_keys=True,
        )
    log.info("associations: %d nearest (%d dropped), %d windows (%d dropped)",
             len(nearest), dropped_n, len(windows), dropped_w)


def _points_by_split(points):
    by_id = {p.id: p for p in points}
    split_of = {p.id: p.split for p in points}
    return by_id, split_of


def cmd_detcal(cfg, args) -> None:
    """AP validation, origin-fixed fit on the train split, detection predictions."""
    mode = args.mode or cfg["detcal"]["mode"]
    points = yields_mod.read_clean_csv(_out_path(cfg, "labeled.csv"))
    by_id, split_of = _points_by_split(points)
    nearest = [a for a in assoc_mod.read_associations_jsonl(_out_path(cfg, "assoc_nearest.jsonl"))]
    detections = det_mod.read_detections_jsonl(config_mod.require_path(cfg, "detections"))
    labels = det_mod.read_detections_jsonl(config_mod.require_path(cfg, "labels"))

    ap = det_mod.average_precision(
        {i: detections.get(i, ()) for i in labels}, labels,
        iou_threshold=float(cfg["detcal"]["iou_threshold"]),
    )

    train_assocs = [a for a in nearest if split_of.get(a.yield_id) == "train"]
    values, skipped = det_mod.aggregate_for_points(train_assocs, detections, mode)
    xs = [values[a.yield_id] for a in train_assocs if a.yield_id in values]
    ys = [by_id[a.yield_id].yield_tha for a in train_assocs if a.yield_id in values]
    fit = det_mod.fit_origin_linear(xs, ys, mode=mode)
    det_mod.save_fit_json(_out_path(cfg, "fit.json"), fit, config_mod.provenance(cfg))

    predictions, skipped_pred = det_mod.predict_yield_from_detections(nearest, detections, fit)
    write_predictions_csv(_out_path(cfg, "predictions_detection.csv"), predictions, cfg)
    with open(_out_path(cfg, "detcal_report.json"), "w") as fh:
        json.dump(
            {
                "_provenance": config_mod.provenance(cfg),
                "ap": ap,
                "mode": mode,
                "slope": fit.slope,
                "n_train_points": len(xs),
                "skipped_train": skipped,
                "skipped_predict": skipped_pred,
            },
            fh, indent=2, sort_keys=True,
        )
    log.info("detcal: AP=%.4f slope=%.5f (%s mode) on %d train points", ap, fit.slope, mode, len(xs))


def write_predictions_csv(path, predictions: dict[int, float], cfg) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_provenance_line(cfg)}\n")
        w = csv.writer(fh)
        w.writerow(["id", "predicted_tha"])
        for yid in sorted(predictions):
            w.writerow([yid, repr(float(predictions[yid]))])


def read_predictions_csv(path) -> dict[int, float]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = {}
    for row in csv.DictReader(lines):
        out[int(row["id"])] = float(row["predicted_tha"])
    return out


def _model_configs(cfg):
    mc = cfg.get("model", {})
    cnn_cfg = nn_models.CnnRegressorConfig.from_dict(mc["cnn"]) if "cnn" in mc else nn_models.CnnRegressorConfig()
    tr_cfg = nn_models.TransformerConfig.from_dict(mc["transformer"]) if "transformer" in mc else nn_models.TransformerConfig()
    return cnn_cfg, tr_cfg


def _train_config(cfg, arch: str) -> nn_training.TrainConfig:
    section = cfg.get("train", {}).get(arch, {})
    return nn_training.TrainConfig.from_dict(section) if section else nn_training.TrainConfig()


def _image_store(cfg) -> nn_training.ImageStore:
    frames = img_mod.parse_image_index_csv(config_mod.require_path(cfg, "image_index"))
    return nn_training.ImageStore({f.id: f.path for f in frames})


def _checkpoint_name(model: str, fusion: bool | None) -> str:
    if model == "cnn":
        return "model_cnn.npz"
    return f"model_transformer_{'fusion' if fusion else 'nofusion'}.npz"


def cmd_train(cfg, args) -> None:
    """Train the CNN or the windowed transformer on the labeled field."""
    model_name = args.model or "transformer"
    fusion = None if model_name == "cnn" else (args.fusion != "off")
    seed = int(cfg["seed"])
    points = yields_mod.read_clean_csv(_out_path(cfg, "labeled.csv"))
    targets = {p.id: p.yield_tha for p in points}
    split_of = {p.id: p.split for p in points}
    store = _image_store(cfg)
    cnn_cfg, tr_cfg = _model_configs(cfg)

    if model_name == "cnn":
        assocs = assoc_mod.read_associations_jsonl(_out_path(cfg, "assoc_nearest.jsonl"))
        items = nn_training.pair_items(assocs, targets)
        train_items = [it for it in items if split_of[it.yield_id] == "train"]
        val_items = [it for it in items if split_of[it.yield_id] == "validation"]
        model = nn_models.CnnRegressor(cnn_cfg, seed=seed, dtype=_dtype(cfg, "cnn"))
        ckpt = nn_training.fit(model, "cnn", train_items, val_items, store,
                               _train_config(cfg, "cnn"), seed, log=log.info)
    elif model_name == "transformer":
        tr_cfg = nn_models.TransformerConfig.from_dict({**tr_cfg.to_dict(), "fusion": bool(fusion)})
        assocs = assoc_mod.read_associations_jsonl(_out_path(cfg, "assoc_window.jsonl"))
        items = nn_training.window_items(assocs, targets)
        train_items = [it for it in items if split_of[it.yield_id] == "train"]
        val_items = [it for it in items if split_of[it.yield_id] == "validation"]
        model = nn_models.WindowTransformer(tr_cfg, seed=seed, dtype=_dtype(cfg, "transformer"))
        ckpt = nn_training.fit(model, "transformer", train_items, val_items, store,
                               _train_config(cfg, "transformer"), seed, log=log.info)
    else:
        raise ValidationError(f"unknown model {model_name!r}")

    ckpt.provenance = config_mod.provenance(cfg)
    out = _out_path(cfg, _checkpoint_name(model_name, fusion))
    nn_training.save_checkpoint(out, ckpt)
    log.info("checkpoint written: %s (best epoch %d)", out, ckpt.best_epoch)


def _dtype(cfg, arch: str):
    name = cfg.get("train", {}).get(arch, {}).get("dtype", "float32")
    return np.float32 if name == "float32" else np.float64


def cmd_predict(cfg, args) -> None:
    """Predictions for every associated yield point from a trained checkpoint."""
    model_name = args.model or "transformer"
    fusion = None if model_name == "cnn" else (args.fusion != "off")
    ckpt = nn_training.load_checkpoint(_out_path(cfg, _checkpoint_name(model_name, fusion)))
    model = ckpt.build_model(dtype=np.float32)
    points = yields_mod.read_clean_csv(_out_path(cfg, "labeled.csv"))
    targets = {p.id: p.yield_tha for p in points}
    store = _image_store(cfg)

    if model_name == "cnn":
        assocs = assoc_mod.read_associations_jsonl(_out_path(cfg, "assoc_nearest.jsonl"))
        items = nn_training.pair_items(assocs, targets)
        predictions = {
            it.yield_id: nn_training.infer_cnn(it, model, store, ckpt.y_mean, ckpt.y_std)
            for it in items
        }
        suffix = "cnn"
    else:
        assocs = assoc_mod.read_associations_jsonl(_out_path(cfg, "assoc_window.jsonl"))
        items = nn_training.window_items(assocs, targets)
        predictions = nn_training.infer_windows(items, model, store, ckpt.y_mean, ckpt.y_std)
        suffix = f"transformer_{'fusion' if fusion else 'nofusion'}"
    write_predictions_csv(_out_path(cfg, f"predictions_{suffix}.csv"), predictions, cfg)
    log.info("%d predictions written for %s", len(predictions), suffix)


def cmd_evaluate(cfg, args) -> None:
    """Metrics at all-points/10 m/20 m for one predictions file and split."""
    pred_path = args.predictions or _out_path(cfg, "predictions_detection.csv")
    split = args.split or "test"
    predictions = read_predictions_csv(pred_path)
    points = yields_mod.read_clean_csv(_out_path(cfg, "labeled.csv"))
    zones = metrics_mod.read_zones_geojson(config_mod.require_path(cfg, "zones"))

    chosen = [p for p in points if (split == "all" or p.split == split)]
    chosen = [p for p in chosen if p.id in predictions]
    missing = [p.id for p in points if (split == "all" or p.split == split)
               if p.id not in predictions]
    if not chosen:
        raise ValidationError(
            f"no predictions match split {split!r}; missing ids start with {missing[:10]}"
        )

    levels = {}
    bins_requested = [0, 10, 20] if args.bin is None else [int(args.bin)]
    for size in bins_requested:
        key = "all_points" if size == 0 else f"{size}m"
        levels[key] = metrics_mod.metrics_at_level(chosen, predictions, float(size), zones).to_dict()

    name = os.path.splitext(os.path.basename(pred_path))[0].replace("predictions_", "")
    out = _out_path(cfg, f"metrics_{name}_{split}.json")
    with open(out, "w") as fh:
        json.dump(
            {
                "_provenance": config_mod.provenance(cfg),
                "predictions_file": os.path.basename(pred_path),
                "split": split,
                "n_missing_predictions": len(missing),
                "levels": levels,
            },
            fh, indent=2, sort_keys=True,
        )
    log.info("metrics -> %s", out)
    print(out)


def cmd_saliency(cfg, args) -> None:
    """Grad-CAM and detection heatmaps aggregated with equal point weights."""
    split = args.split or "test"
    limit = args.limit
    ckpt = nn_training.load_checkpoint(_out_path(cfg, "model_cnn.npz"))
    model = ckpt.build_model(dtype=np.float32)
    points = yields_mod.read_clean_csv(_out_path(cfg, "labeled.csv"))
    split_of = {p.id: p.split for p in points}
    assocs = [a for a in assoc_mod.read_associations_jsonl(_out_path(cfg, "assoc_nearest.jsonl"))
              if split == "all" or split_of.get(a.yield_id) == split]
    if limit:
        assocs = assocs[: int(limit)]
    store = _image_store(cfg)
    detections = det_mod.read_detections_jsonl(config_mod.require_path(cfg, "detections"))

    cam_groups, det_groups = [], []
    frame_h = model.config.frame_h
    frame_w = model.config.frame_w
    for a in assocs:
        cams = []
        for n in a.north:
            for s in a.south:
                pair = np.concatenate([store.get(n), store.get(s)], axis=2)
                cams.append(sal_mod.grad_cam(model, pair))
        cam_groups.append(cams)
        canvases = [
            sal_mod.detection_canvas(detections.get(i, ()), frame_h, frame_w)
            for i in (*a.north, *a.south)
        ]
        det_groups.append(canvases)

    prov = config_mod.provenance(cfg)
    cam_map = sal_mod.aggregate_heatmaps(cam_groups)
    det_map = sal_mod.aggregate_heatmaps(det_groups)
    sal_mod.save_heatmap_array(_out_path(cfg, f"saliency_cam_{split}.npy"), cam_map, prov)
    sal_mod.save_heatmap_array(_out_path(cfg, f"saliency_detection_{split}.npy"), det_map, prov)
    sal_mod.save_heatmap_png(_out_path(cfg, f"saliency_cam_{split}.png"), cam_map,
                             title=f"mean activation map ({split})", provenance=prov)
    sal_mod.save_heatmap_png(_out_path(cfg, f"saliency_detection_{split}.png"), det_map,
                             title=f"mean detection canvas ({split})", provenance=prov)
    log.info("saliency maps for %d yield points (split %s)", len(assocs), split)


def cmd_map(cfg, args) -> None:
    """Yield map (GeoJSON or PNG) from spatially binned measured/predicted data."""
    pred_path = args.predictions or _out_path(cfg, "predictions_detection.csv")
    split = args.split or "test"
    bin_size = float(args.bin or 10)
    channel = args.channel
    fmt = args.format or "geojson"
    predictions = read_predictions_csv(pred_path)
    points = yields_mod.read_clean_csv(_out_path(cfg, "labeled.csv"))
    zones = metrics_mod.read_zones_geojson(config_mod.require_path(cfg, "zones"))
    chosen = [p for p in points if (split == "all" or p.split == split) and p.id in predictions]
    if not chosen:
        raise ValidationError(f"no points with predictions in split {split!r}")
    bins = metrics_mod.spatial_aggregate(chosen, predictions, bin_size, zones)
    out = _out_path(cfg, f"map_{channel}_{int(bin_size)}m.{fmt}")
    sal_mod.emit_yield_map(out, bins, channel, fmt, config_mod.provenance(cfg))
    log.info("map -> %s (%d bins)", out, len(bins))
    print(out)


# --- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vineyield",
                                     description="vineyard yield estimation pipeline")
    parser.add_argument("--config", required=True, help="pipeline YAML config")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--out", help="override output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic field")
    p.add_argument("--profile", choices=["zero-noise", "noisy"])

    sub.add_parser("ingest", help="clean and calibrate the yield stream")
    sub.add_parser("split", help="assign spatial split labels")
    sub.add_parser("associate", help="nearest and window association dumps")

    p = sub.add_parser("detcal", help="detection AP validation and origin fit")
    p.add_argument("--mode", choices=["count", "area"])

    for name in ("train", "predict"):
        p = sub.add_parser(name, help=f"{name} a regression model")
        p.add_argument("--model", choices=["cnn", "transformer"], required=True)
        p.add_argument("--fusion", choices=["on", "off"], default="on")

    p = sub.add_parser("evaluate", help="metrics at all/10 m/20 m levels")
    p.add_argument("--predictions", help="predictions CSV (default detcal output)")
    p.add_argument("--split", choices=["train", "validation", "test", "all"])
    p.add_argument("--bin", type=int, choices=[0, 10, 20], help="single level only")

    p = sub.add_parser("saliency", help="Grad-CAM and detection heatmaps")
    p.add_argument("--split", choices=["train", "validation", "test", "all"])
    p.add_argument("--limit", type=int, help="cap the number of yield points")

    p = sub.add_parser("map", help="emit a measured/predicted yield map")
    p.add_argument("--channel", choices=["measured", "predicted"], default="predicted")
    p.add_argument("--predictions")
    p.add_argument("--split", choices=["train", "validation", "test", "all"])
    p.add_argument("--bin", type=int, choices=[10, 20])
    p.add_argument("--format", choices=["geojson", "png"])

    return parser


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "split": cmd_split,
    "associate": cmd_associate,
    "detcal": cmd_detcal,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "saliency": cmd_saliency,
    "map": cmd_map,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth" and not os.path.exists(args.config):
            # synth bootstraps a workspace; an absent config means defaults
            cfg = dict(config_mod.DEFAULTS)
            cfg["out_dir"] = os.path.abspath(args.out or "synth_field")
            cfg["paths"] = {}
        else:
            cfg = config_mod.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
            cfg.setdefault("_source", {})["seed"] = args.seed
        if args.out:
            cfg["out_dir"] = os.path.abspath(args.out)
        COMMANDS[args.command](cfg, args)
        return 0
    except (ValidationError, ParseError, TrainingDiverged, FileNotFoundError, KeyError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
