"""Training loops, optimizers, checkpoints, and inference helpers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..association import NearestAssociation, WindowAssociation
from ..errors import TrainingDiverged, ValidationError
from .models import (
    CnnRegressor,
    CnnRegressorConfig,
    TransformerConfig,
    WindowTransformer,
)
from .robust import robust_loss
from .tensor import Tensor


class Adam:
    """Adaptive-moment gradient descent."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1**self.t)
            vhat = self.v[i] / (1 - self.b2**self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-2):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


def make_optimizer(name: str, params, lr: float):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return SGD(params, lr=lr)
    raise ValidationError(f"unknown optimizer {name!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 6
    lr: float = 1e-4
    optimizer: str = "adam"
    loss: str = "mse"  # or "adaptive_robust"
    grad_accumulation: int = 1
    robust_c: float = 1.0
    augment: bool = False
    standardize_targets: bool = True
    dtype: str = "float32"
    max_steps_per_epoch: int | None = None

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "optimizer": self.optimizer,
            "loss": self.loss,
            "grad_accumulation": self.grad_accumulation,
            "robust_c": self.robust_c,
            "augment": self.augment,
            "standardize_targets": self.standardize_targets,
            "dtype": self.dtype,
            "max_steps_per_epoch": self.max_steps_per_epoch,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**{k: d[k] for k in TrainConfig().to_dict() if k in d})


class ImageStore:
    """Loads frame arrays as channels-first float and caches them."""

    def __init__(self, records: Mapping[int, str] | None = None, dtype=np.float32):
        self.paths = dict(records or {})
        self.dtype = dtype
        self._cache: dict[int, np.ndarray] = {}

    @staticmethod
    def from_records(records) -> "ImageStore":
        return ImageStore({r.id: r.path for r in records})

    def put(self, image_id: int, pixels: np.ndarray) -> None:
        self._cache[image_id] = self._to_chw(pixels)

    def _to_chw(self, px: np.ndarray) -> np.ndarray:
        arr = np.asarray(px, dtype=self.dtype)
        if arr.ndim == 3 and arr.shape[2] in (1, 3):
            arr = arr.transpose(2, 0, 1)
        return arr

    def get(self, image_id: int) -> np.ndarray:
        if image_id not in self._cache:
            if image_id not in self.paths:
                raise ValidationError(f"no pixels registered for image {image_id}")
            self._cache[image_id] = self._to_chw(np.load(self.paths[image_id]))
        return self._cache[image_id]


# --- augmentation -------------------------------------------------------------


def random_hflip(frame: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    if rng.random() < p:
        return frame[:, :, ::-1].copy()
    return frame


def random_median_blur(frame: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    if rng.random() >= p:
        return frame
    from scipy.ndimage import median_filter

    k = 3 if rng.random() < 0.5 else 5
    return median_filter(frame, size=(1, k, k))


def augment_frame(frame: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return random_median_blur(random_hflip(frame, rng), rng)


# --- datasets -----------------------------------------------------------------


@dataclass(frozen=True)
class PairItem:
    yield_id: int
    north: tuple[int, ...]
    south: tuple[int, ...]
    target: float


@dataclass(frozen=True)
class WindowItem:
    yield_id: int
    image_ids: tuple[int, ...]
    position: tuple[float, ...]
    orientation: tuple[float, ...]
    target: float


def pair_items(
    assocs: Sequence[NearestAssociation], targets: Mapping[int, float]
) -> list[PairItem]:
    return [
        PairItem(a.yield_id, a.north, a.south, float(targets[a.yield_id]))
        for a in assocs
        if a.yield_id in targets
    ]


def window_items(
    assocs: Sequence[WindowAssociation], targets: Mapping[int, float]
) -> list[WindowItem]:
    out = []
    for a in assocs:
        if a.yield_id not in targets:
            continue
        out.append(
            WindowItem(
                a.yield_id,
                tuple(m.image_id for m in a.members),
                tuple(m.position for m in a.members),
                tuple(m.orientation for m in a.members),
                float(targets[a.yield_id]),
            )
        )
    return out


def build_pair(
    item: PairItem, store: ImageStore, rng: np.random.Generator | None,
    augment: bool = False,
) -> np.ndarray:
    """One (3, H, 2W) input: a North and a South frame, North on the left.

    With an rng the frames are drawn at random from the available ones;
    without, the lowest-id frame on each side is used.
    """
    if rng is None:
        n_id, s_id = item.north[0], item.south[0]
    else:
        n_id = item.north[int(rng.integers(len(item.north)))]
        s_id = item.south[int(rng.integers(len(item.south)))]
    north = store.get(n_id)
    south = store.get(s_id)
    if augment and rng is not None:
        north = augment_frame(north, rng)
        south = augment_frame(south, rng)
    return np.concatenate([north, south], axis=2)


def validation_pair(item: PairItem, store: ImageStore, seed: int) -> np.ndarray:
    """Deterministic pair choice so validation is comparable across epochs."""
    rng = np.random.default_rng((seed, item.yield_id))
    return build_pair(item, store, rng, augment=False)


# --- checkpoints --------------------------------------------------------------


@dataclass
class Checkpoint:
    arch: str  # "cnn" | "transformer"
    model_config: dict
    state: dict[str, np.ndarray]
    seed: int
    y_mean: float
    y_std: float
    train_config: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    provenance: dict = field(default_factory=dict)

    def build_model(self, dtype=np.float64):
        if self.arch == "cnn":
            model = CnnRegressor(CnnRegressorConfig.from_dict(self.model_config),
                                 seed=self.seed, dtype=dtype)
        elif self.arch == "transformer":
            model = WindowTransformer(TransformerConfig.from_dict(self.model_config),
                                      seed=self.seed, dtype=dtype)
        else:
            raise ValidationError(f"unknown architecture {self.arch!r}")
        model.load_state_dict(self.state)
        model.eval()
        return model


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "arch": ckpt.arch,
        "model_config": ckpt.model_config,
        "seed": ckpt.seed,
        "y_mean": ckpt.y_mean,
        "y_std": ckpt.y_std,
        "train_config": ckpt.train_config,
        "history": ckpt.history,
        "best_epoch": ckpt.best_epoch,
        "provenance": ckpt.provenance,
    }
    arrays = {f"param/{k}": v for k, v in ckpt.state.items()}
    arrays["meta_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode())
        state = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    return Checkpoint(
        arch=meta["arch"],
        model_config=meta["model_config"],
        state=state,
        seed=int(meta["seed"]),
        y_mean=float(meta["y_mean"]),
        y_std=float(meta["y_std"]),
        train_config=meta["train_config"],
        history=meta["history"],
        best_epoch=int(meta["best_epoch"]),
        provenance=meta["provenance"],
    )


# --- the fit loop -------------------------------------------------------------


def _target_stats(items, standardize: bool) -> tuple[float, float]:
    if not standardize:
        return 0.0, 1.0
    ys = np.array([it.target for it in items], dtype=np.float64)
    std = float(ys.std())
    return float(ys.mean()), std if std > 0 else 1.0


def fit(
    model,
    arch: str,
    train_items: Sequence,
    val_items: Sequence,
    store: ImageStore,
    cfg: TrainConfig,
    seed: int,
    log: Callable[[str], None] | None = None,
) -> Checkpoint:
    """Mini-batch training with per-epoch validation and best-state selection.

    All randomness (batch order, frame sampling, augmentation, dropout)
    derives from ``seed``.  A non-finite loss aborts immediately.
    """
    if not train_items or not val_items:
        raise ValidationError("both train and validation splits must be nonempty")
    rng = np.random.default_rng(seed)
    y_mean, y_std = _target_stats(train_items, cfg.standardize_targets)
    params = model.parameters()

    criterion_params: list[Tensor] = []
    if cfg.loss == "adaptive_robust":
        alpha_raw = Tensor(np.array(1.0, dtype=model.cls.dtype if hasattr(model, "cls") else np.float64),
                           requires_grad=True)
        criterion_params = [alpha_raw]

        def criterion(residuals: Tensor) -> Tensor:
            return robust_loss(residuals, alpha_raw.clamp(0.0, 2.0), cfg.robust_c,
                               adaptive=True).mean()
    elif cfg.loss == "mse":

        def criterion(residuals: Tensor) -> Tensor:
            return (residuals * residuals).mean()
    else:
        raise ValidationError(f"unknown loss {cfg.loss!r}")

    optimizer = make_optimizer(cfg.optimizer, params + criterion_params, cfg.lr)

    def batch_loss(batch, training: bool, batch_rng) -> Tensor:
        if arch == "cnn":
            if training:
                pairs = np.stack([build_pair(it, store, batch_rng, cfg.augment) for it in batch])
            else:
                pairs = np.stack([validation_pair(it, store, seed) for it in batch])
            preds = model(Tensor(pairs))
            targets = Tensor(np.array([(it.target - y_mean) / y_std for it in batch],
                                      dtype=preds.dtype))
            return criterion(preds - targets)
        # transformer: windows vary in length, so forward one at a time
        losses = []
        for it in batch:
            frames = np.stack([store.get(i) for i in it.image_ids])
            pred = model.forward_window(Tensor(frames), np.array(it.position),
                                        np.array(it.orientation))
            target = (it.target - y_mean) / y_std
            losses.append(criterion(pred - Tensor(np.array(target, dtype=pred.dtype))))
        total = losses[0]
        for loss in losses[1:]:
            total = total + loss
        return total * (1.0 / len(losses))

    def validation_loss() -> float:
        model.eval()
        total, count = 0.0, 0
        bs = max(cfg.batch_size, 1)
        for start in range(0, len(val_items), bs):
            batch = val_items[start : start + bs]
            loss = batch_loss(batch, training=False, batch_rng=None)
            total += loss.item() * len(batch)
            count += len(batch)
        model.train(True)
        return total / count

    best_val = math.inf
    best_state = model.state_dict()
    best_epoch = -1
    history = []
    step = 0
    model.train(True)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_items))
        epoch_loss, n_batches = 0.0, 0
        accum = 0
        optimizer.zero_grad()
        max_batches = len(order) // max(cfg.batch_size, 1) or 1
        if cfg.max_steps_per_epoch is not None:
            max_batches = min(max_batches, cfg.max_steps_per_epoch * cfg.grad_accumulation)
        for b in range(max_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if idx.size == 0:
                break
            batch = [train_items[i] for i in idx]
            loss = batch_loss(batch, training=True, batch_rng=rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch} batch {b}"
                )
            scaled = loss * (1.0 / cfg.grad_accumulation)
            scaled.backward()
            epoch_loss += value
            n_batches += 1
            accum += 1
            if accum == cfg.grad_accumulation:
                optimizer.step()
                optimizer.zero_grad()
                accum = 0
                step += 1
        if accum:
            optimizer.step()
            optimizer.zero_grad()
            step += 1
        val = validation_loss()
        history.append({"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1),
                        "val_loss": val, "steps": step})
        if log:
            log(f"epoch {epoch}: train {epoch_loss / max(n_batches, 1):.6f} val {val:.6f}")
        if val < best_val:
            best_val = val
            best_state = model.state_dict()
            best_epoch = epoch

    model.load_state_dict(best_state)
    model.eval()
    model_config = model.config.to_dict()
    return Checkpoint(
        arch=arch,
        model_config=model_config,
        state=best_state,
        seed=seed,
        y_mean=y_mean,
        y_std=y_std,
        train_config=cfg.to_dict(),
        history=history,
        best_epoch=best_epoch,
    )


# --- inference ----------------------------------------------------------------


def infer_cnn(item: PairItem, model: CnnRegressor, store: ImageStore,
              y_mean: float = 0.0, y_std: float = 1.0) -> float:
    """Mean prediction over every North x South frame combination."""
    if not item.north or not item.south:
        raise ValidationError(f"yield point {item.yield_id}: missing a side")
    pairs = np.stack(
        [
            np.concatenate([store.get(n), store.get(s)], axis=2)
            for n in item.north
            for s in item.south
        ]
    )
    preds = model.predict_pairs(pairs)
    return float(preds.mean()) * y_std + y_mean


def infer_windows(
    items: Sequence[WindowItem], model: WindowTransformer, store: ImageStore,
    y_mean: float = 0.0, y_std: float = 1.0,
) -> dict[int, float]:
    out = {}
    for it in items:
        frames = np.stack([store.get(i) for i in it.image_ids])
        raw = model.predict_window(frames, np.array(it.position), np.array(it.orientation))
        out[it.yield_id] = raw * y_std + y_mean
    return out
