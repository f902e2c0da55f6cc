"""Reverse-mode automatic differentiation over numpy arrays.

Every operation records vector-Jacobian closures on its output; calling
``backward()`` on a scalar walks the graph in reverse topological order
and accumulates gradients into the leaves that asked for them.  Arrays
stay in whatever float precision they were created with (float64 for
verification, float32 for training throughput).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_links", "_retain")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._retain = False
        self._links: list[tuple["Tensor", Callable[[np.ndarray], np.ndarray]]] = []

    def retain_grad(self) -> "Tensor":
        """Keep the gradient on this (possibly interior) node after backward."""
        self._retain = True
        return self

    # --- construction helpers -------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, links) -> "Tensor":
        out = Tensor(data)
        out._links = [(p, fn) for p, fn in links if p.requires_grad or p._links]
        out.requires_grad = bool(out._links)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Graph-free view of this tensor; shares the underlying array."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # --- autograd ---------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._links:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): grad.astype(self.data.dtype, copy=True)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if (node.requires_grad and not node._links) or node._retain:
                node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in node._links:
                contribution = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contribution
                else:
                    grads[key] = contribution

    # --- arithmetic -------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))

    def __add__(self, other):
        o = self._coerce(other)
        data = self.data + o.data
        return Tensor._result(
            data,
            [
                (self, lambda g: _unbroadcast(g, self.shape)),
                (o, lambda g: _unbroadcast(g, o.shape)),
            ],
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, [(self, lambda g: -g)])

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        o = self._coerce(other)
        data = self.data * o.data
        return Tensor._result(
            data,
            [
                (self, lambda g: _unbroadcast(g * o.data, self.shape)),
                (o, lambda g: _unbroadcast(g * self.data, o.shape)),
            ],
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        data = self.data / o.data
        return Tensor._result(
            data,
            [
                (self, lambda g: _unbroadcast(g / o.data, self.shape)),
                (o, lambda g: _unbroadcast(-g * self.data / (o.data**2), o.shape)),
            ],
        )

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            # a ** b == exp(b * log(a)); composition keeps the graph simple
            return (self.log() * exponent).exp()
        data = self.data**exponent
        return Tensor._result(
            data, [(self, lambda g: g * exponent * self.data ** (exponent - 1))]
        )

    def __matmul__(self, other):
        o = self._coerce(other)
        data = self.data @ o.data

        def grad_a(g):
            ga = g @ np.swapaxes(o.data, -1, -2)
            return _unbroadcast(ga, self.shape)

        def grad_b(g):
            gb = np.swapaxes(self.data, -1, -2) @ g
            return _unbroadcast(gb, o.shape)

        return Tensor._result(data, [(self, grad_a), (o, grad_b)])

    # --- elementwise ------------------------------------------------------

    def exp(self):
        data = np.exp(self.data)
        return Tensor._result(data, [(self, lambda g: g * data)])

    def log(self):
        return Tensor._result(np.log(self.data), [(self, lambda g: g / self.data)])

    def sqrt(self):
        data = np.sqrt(self.data)
        return Tensor._result(data, [(self, lambda g: g * 0.5 / data)])

    def tanh(self):
        data = np.tanh(self.data)
        return Tensor._result(data, [(self, lambda g: g * (1.0 - data**2))])

    def erf(self):
        data = _erf(self.data)
        coeff = 2.0 / math.sqrt(math.pi)
        return Tensor._result(
            data, [(self, lambda g: g * coeff * np.exp(-self.data**2))]
        )

    def abs(self):
        return Tensor._result(
            np.abs(self.data), [(self, lambda g: g * np.sign(self.data))]
        )

    def relu(self):
        mask = self.data > 0
        return Tensor._result(self.data * mask, [(self, lambda g: g * mask)])

    def clamp(self, lo: float, hi: float):
        data = np.clip(self.data, lo, hi)
        mask = (self.data >= lo) & (self.data <= hi)
        return Tensor._result(data, [(self, lambda g: g * mask)])

    # --- shape ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._result(
            self.data.reshape(shape), [(self, lambda g: g.reshape(old))]
        )

    def swapaxes(self, a: int, b: int):
        return Tensor._result(
            np.swapaxes(self.data, a, b), [(self, lambda g: np.swapaxes(g, a, b))]
        )

    def transpose(self, axes: Sequence[int]):
        inverse = np.argsort(axes)
        return Tensor._result(
            np.transpose(self.data, axes), [(self, lambda g: np.transpose(g, inverse))]
        )

    def __getitem__(self, key):
        data = self.data[key]
        shape = self.shape

        def grad_fn(g):
            out = np.zeros(shape, dtype=g.dtype)
            np.add.at(out, key, g)
            return out

        return Tensor._result(data, [(self, grad_fn)])

    # --- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def grad_fn(g):
            if axis is None:
                return np.broadcast_to(g, shape).astype(g.dtype)
            gg = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(gg, shape).astype(g.dtype)

        return Tensor._result(data, [(self, grad_fn)])

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.size
        elif isinstance(axis, tuple):
            count = int(np.prod([self.shape[a] for a in axis]))
        else:
            count = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max_const(self, axis=None, keepdims: bool = False) -> "Tensor":
        """Max treated as a constant (no gradient); used for stable softmax."""
        return Tensor(self.data.max(axis=axis, keepdims=keepdims))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    links = []
    start = 0
    for t in tensors:
        width = t.shape[axis]
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(start, start + width)
        links.append((t, (lambda s: lambda g: g[tuple(s)])(tuple(sl))))
        start += width
    return Tensor._result(data, links)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    shifted = t - t.max_const(axis=axis, keepdims=True)
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def gelu(t: Tensor) -> Tensor:
    return t * 0.5 * ((t * (1.0 / math.sqrt(2.0))).erf() + 1.0)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 1) -> Tensor:
    """2D convolution, NCHW layout, square kernel, via im2col.

    x: (N, C, H, W); w: (F, C, kh, kw); b: (F,) or None.
    """
    from numpy.lib.stride_tricks import sliding_window_view

    n, c, h, wdt = x.shape
    f, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {c2}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wmat = w.data.reshape(f, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def grad_x(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        dcols = gmat @ wmat  # (N*OH*OW, C*kh*kw)
        dcols = dcols.reshape(n, oh, ow, c, kh, kw)
        dxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                dxp[:, :, di : di + oh * stride : stride, dj : dj + ow * stride : stride] += (
                    dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
                )
        if padding:
            return dxp[:, :, padding:-padding, padding:-padding]
        return dxp

    def grad_w(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        return (gmat.T @ cols).reshape(f, c, kh, kw)

    links = [(x, grad_x), (w, grad_w)]
    if b is not None:
        links.append((b, lambda g: g.sum(axis=(0, 2, 3))))
    return Tensor._result(out, links)


def table_interp(t: Tensor, knots: np.ndarray, values: np.ndarray) -> Tensor:
    """Piecewise-linear table lookup with the segment slope as gradient."""
    x = np.clip(t.data, knots[0], knots[-1])
    idx = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, len(knots) - 2)
    x0 = knots[idx]
    slope = (values[idx + 1] - values[idx]) / (knots[idx + 1] - knots[idx])
    data = values[idx] + slope * (x - x0)
    in_range = (t.data >= knots[0]) & (t.data <= knots[-1])
    return Tensor._result(
        data.astype(t.dtype), [(t, lambda g: (g * slope * in_range).astype(t.dtype))]
    )


def stack_params(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
