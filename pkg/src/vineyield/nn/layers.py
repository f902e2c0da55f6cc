"""Neural building blocks on top of the Tensor engine."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor, concat, conv2d, gelu, softmax


class Module:
    """Parameter container with torch-like traversal and train/eval modes."""

    def __init__(self) -> None:
        self.training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value.train(mode)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) ^ set(state)
        if missing:
            raise ValueError(f"state dict mismatch on keys: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.w = _uniform_fan_in(rng, (in_features, out_features), in_features, dtype)
        self.b = _uniform_fan_in(rng, (out_features,), in_features, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        kernel: int = 3,
        stride: int = 1,
        padding: int = 1,
        dtype=np.float64,
    ):
        super().__init__()
        fan_in = in_channels * kernel * kernel
        self.w = _uniform_fan_in(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype)
        self.b = _uniform_fan_in(rng, (out_channels,), fan_in, dtype)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Dropout(Module):
    """Inverted dropout; identity in eval mode."""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"dropout rate {rate} outside [0, 1)")
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * Tensor(mask)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self.gamma + self.beta


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over a (tokens, dim) sequence."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, dtype)
        self.wk = Linear(dim, dim, rng, dtype)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)
        self.last_attention: np.ndarray | None = None

    def __call__(self, x: Tensor) -> Tensor:
        n, d = x.shape
        q = self.wq(x).reshape(n, self.heads, self.head_dim).transpose((1, 0, 2))
        k = self.wk(x).reshape(n, self.heads, self.head_dim).transpose((1, 0, 2))
        v = self.wv(x).reshape(n, self.heads, self.head_dim).transpose((1, 0, 2))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.head_dim))
        attn = softmax(scores, axis=-1)  # (heads, n, n)
        self.last_attention = attn.data.copy()
        mixed = attn @ v  # (heads, n, head_dim)
        merged = mixed.transpose((1, 0, 2)).reshape(n, d)
        return self.wo(merged)


class EncoderBlock(Module):
    """Post-norm transformer encoder block: attention then MLP, both residual.

    Post-norm (normalize after each residual sum) is deliberate: the
    positional metadata enters the tokens as a per-token uniform shift,
    and a pre-norm block's leading mean subtraction would cancel that
    shift exactly, making the metadata invisible to attention.
    """

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.ln1 = LayerNorm(dim, dtype)
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dtype)
        self.ln2 = LayerNorm(dim, dtype)
        self.fc1 = Linear(dim, dim * mlp_ratio, rng, dtype)
        self.fc2 = Linear(dim * mlp_ratio, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.ln1(x + self.attn(x))
        return self.ln2(x + self.fc2(gelu(self.fc1(x))))


class PositionalFusion(Module):
    """Width-1 convolution mixing each feature with its two position scalars.

    One shared weight per input channel (feature, position, orientation)
    plus a bias; starts as the identity on the feature channel so enabling
    fusion changes nothing until training moves the scalar weights.
    """

    def __init__(self, dtype=np.float64):
        super().__init__()
        self.w_feature = Tensor(np.ones((), dtype=dtype), requires_grad=True)
        self.w_position = Tensor(np.zeros((), dtype=dtype), requires_grad=True)
        self.w_orientation = Tensor(np.zeros((), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros((), dtype=dtype), requires_grad=True)

    def __call__(self, features: Tensor, position: Tensor, orientation: Tensor) -> Tensor:
        n, d = features.shape
        pos_col = position.reshape(n, 1)
        ori_col = orientation.reshape(n, 1)
        return (
            features * self.w_feature
            + pos_col * self.w_position
            + ori_col * self.w_orientation
            + self.bias
        )


def combine_positional(
    features: Tensor, position_scalars: Tensor, orientation_scalars: Tensor, fusion: PositionalFusion
) -> Tensor:
    """Functional face of :class:`PositionalFusion` (broadcast is over dim)."""
    return fusion(features, position_scalars, orientation_scalars)
