"""The two end-to-end regressors: paired-frame CNN and windowed transformer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .layers import (
    Conv2d,
    Dropout,
    EncoderBlock,
    LayerNorm,
    Linear,
    Module,
    PositionalFusion,
)
from .tensor import Tensor, concat


@dataclass(frozen=True)
class BackboneConfig:
    """Small convolution stack standing in for a pretrained feature extractor."""

    stages: tuple[tuple[int, int], ...] = ((8, 2), (16, 2), (32, 2), (64, 2))
    in_channels: int = 3
    kernel: int = 3

    def out_channels(self) -> int:
        return self.stages[-1][0]

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        for _, stride in self.stages:
            h = (h + 2 * (self.kernel // 2) - self.kernel) // stride + 1
            w = (w + 2 * (self.kernel // 2) - self.kernel) // stride + 1
        return h, w

    def to_dict(self) -> dict:
        return {"stages": [list(s) for s in self.stages], "in_channels": self.in_channels, "kernel": self.kernel}

    @staticmethod
    def from_dict(d: dict) -> "BackboneConfig":
        return BackboneConfig(
            stages=tuple(tuple(s) for s in d["stages"]),
            in_channels=int(d.get("in_channels", 3)),
            kernel=int(d.get("kernel", 3)),
        )


class ConvBackbone(Module):
    def __init__(self, config: BackboneConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.config = config
        layers = []
        prev = config.in_channels
        for channels, stride in config.stages:
            layers.append(
                Conv2d(prev, channels, rng, kernel=config.kernel, stride=stride,
                       padding=config.kernel // 2, dtype=dtype)
            )
            prev = channels
        self.layers = layers

    def __call__(self, x: Tensor, retain_last: bool = False) -> Tensor:
        for layer in self.layers:
            x = layer(x).relu()
        # the final (post-rectification) map is the saliency target layer
        if retain_last:
            x.retain_grad()
        return x


@dataclass(frozen=True)
class CnnRegressorConfig:
    """Paired-frame regressor: backbone, then a two-layer MLP head."""

    backbone: BackboneConfig = BackboneConfig()
    frame_h: int = 64
    frame_w: int = 64  # per side; the model input is twice as wide
    hidden: tuple[int, int] = (1024, 1024)
    dropout: float = 0.2

    def __post_init__(self):
        if any(h < 1 for h in self.hidden):
            raise ValidationError("head widths must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ValidationError(f"dropout {self.dropout} outside [0, 1)")

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone.to_dict(),
            "frame_h": self.frame_h,
            "frame_w": self.frame_w,
            "hidden": list(self.hidden),
            "dropout": self.dropout,
        }

    @staticmethod
    def from_dict(d: dict) -> "CnnRegressorConfig":
        return CnnRegressorConfig(
            backbone=BackboneConfig.from_dict(d["backbone"]),
            frame_h=int(d["frame_h"]),
            frame_w=int(d["frame_w"]),
            hidden=tuple(d["hidden"]),
            dropout=float(d["dropout"]),
        )


class CnnRegressor(Module):
    """North|South pair (concatenated along width, North left) -> raw yield scalar."""

    def __init__(self, config: CnnRegressorConfig, seed: int = 0, dtype=np.float64):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        self.backbone = ConvBackbone(config.backbone, rng, dtype)
        oh, ow = config.backbone.out_hw(config.frame_h, 2 * config.frame_w)
        flat = config.backbone.out_channels() * oh * ow
        self.fc1 = Linear(flat, config.hidden[0], rng, dtype)
        self.drop1 = Dropout(config.dropout, rng)
        self.fc2 = Linear(config.hidden[0], config.hidden[1], rng, dtype)
        self.drop2 = Dropout(config.dropout, rng)
        self.out = Linear(config.hidden[1], 1, rng, dtype)

    def forward(self, pairs: Tensor, retain_activation: bool = False) -> tuple[Tensor, Tensor]:
        """pairs: (N, 3, H, 2W) -> ((N,) predictions, final activation map)."""
        act = self.backbone(pairs, retain_last=retain_activation)
        n = act.shape[0]
        x = act.reshape(n, -1)
        x = self.drop1(self.fc1(x).relu())
        x = self.drop2(self.fc2(x).relu())
        return self.out(x).reshape(n), act

    def __call__(self, pairs: Tensor) -> Tensor:
        return self.forward(pairs)[0]

    def predict_pairs(self, pairs: np.ndarray) -> np.ndarray:
        """Eval-mode forward over a stacked (N, 3, H, 2W) array."""
        was_training = self.training
        self.eval()
        out = self.forward(Tensor(pairs))[0].data.copy()
        self.train(was_training)
        return out


@dataclass(frozen=True)
class TransformerConfig:
    """Windowed regressor: shared backbone features as tokens, class-token decode."""

    backbone: BackboneConfig = BackboneConfig(stages=((8, 2), (16, 2), (32, 1), (32, 1)))
    frame_h: int = 64
    frame_w: int = 64
    token_dim: int = 256
    depth: int = 2
    heads: int = 8
    mlp_ratio: int = 4
    fusion: bool = True

    def __post_init__(self):
        if self.token_dim % self.heads != 0:
            raise ValidationError(
                f"token dim {self.token_dim} not divisible by {self.heads} heads"
            )
        oh, ow = self.backbone.out_hw(self.frame_h, self.frame_w)
        if oh * ow != self.token_dim:
            raise ValidationError(
                f"backbone yields {oh}x{ow} maps ({oh * ow} values after the "
                f"filter-dimension mean); token dim {self.token_dim} must match"
            )

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone.to_dict(),
            "frame_h": self.frame_h,
            "frame_w": self.frame_w,
            "token_dim": self.token_dim,
            "depth": self.depth,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "fusion": self.fusion,
        }

    @staticmethod
    def from_dict(d: dict) -> "TransformerConfig":
        return TransformerConfig(
            backbone=BackboneConfig.from_dict(d["backbone"]),
            frame_h=int(d["frame_h"]),
            frame_w=int(d["frame_w"]),
            token_dim=int(d["token_dim"]),
            depth=int(d["depth"]),
            heads=int(d["heads"]),
            mlp_ratio=int(d["mlp_ratio"]),
            fusion=bool(d["fusion"]),
        )


class WindowTransformer(Module):
    """All frames in a yield point's window -> one yield scalar.

    Tokens are backbone activation maps averaged along the filter
    dimension and flattened; with fusion enabled each token is linearly
    combined with its position and orientation scalars before the
    encoder.  The decoder reads only the (zero-initialized, learned)
    class token.
    """

    def __init__(self, config: TransformerConfig, seed: int = 0, dtype=np.float64):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        self.backbone = ConvBackbone(config.backbone, rng, dtype)
        self.fusion = PositionalFusion(dtype) if config.fusion else None
        self.cls = Tensor(np.zeros((1, config.token_dim), dtype=dtype), requires_grad=True)
        self.blocks = [
            EncoderBlock(config.token_dim, config.heads, config.mlp_ratio, rng, dtype)
            for _ in range(config.depth)
        ]
        self.decoder = Linear(config.token_dim, 1, rng, dtype)

    def tokens_from_frames(self, frames: Tensor) -> Tensor:
        """(n, 3, H, W) frames -> (n, token_dim) tokens."""
        maps = self.backbone(frames)  # (n, C, h, w)
        pooled = maps.mean(axis=1)  # filter-dimension mean -> (n, h, w)
        n = pooled.shape[0]
        return pooled.reshape(n, self.config.token_dim)

    def forward_window(
        self,
        frames: Tensor,
        position: np.ndarray | None,
        orientation: np.ndarray | None,
        tokens: Tensor | None = None,
    ) -> Tensor:
        if tokens is None:
            if frames.shape[0] == 0:
                raise ValidationError("cannot run the transformer on an empty window")
            tokens = self.tokens_from_frames(frames)
        if self.fusion is not None:
            if position is None or orientation is None:
                raise ValidationError("fusion enabled but positional scalars missing")
            tokens = self.fusion(
                tokens,
                Tensor(np.asarray(position, dtype=tokens.dtype)),
                Tensor(np.asarray(orientation, dtype=tokens.dtype)),
            )
        seq = concat([self.cls, tokens], axis=0)
        for block in self.blocks:
            seq = block(seq)
        encoded = seq[0:1, :]
        return self.decoder(encoded).reshape(())

    def predict_window(self, frames: np.ndarray, position, orientation) -> float:
        was_training = self.training
        self.eval()
        out = float(self.forward_window(Tensor(frames), position, orientation).data)
        self.train(was_training)
        return out
