"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(
    fn: Callable[[], Tensor],
    wrt: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare reverse-mode gradients of a scalar ``fn()`` to central differences.

    Perturbs each checked coordinate by +/- h and compares
    (f(x+h) - f(x-h)) / 2h to the accumulated gradient.  Large tensors can
    be spot-checked by sampling ``max_coords`` coordinates.  Returns the
    largest |ad - fd| over the checked coordinates, scaled by the largest
    finite-difference magnitude seen (so the result reads as a relative
    error of the gradient as a whole).
    """
    for t in wrt:
        t.zero_grad()
    out = fn()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()

    worst_abs = 0.0
    scale = 0.0
    rng = rng or np.random.default_rng(0)
    for t in wrt:
        flat = t.data.reshape(-1)
        # an unused input legitimately has a zero gradient; the finite
        # differences below will agree if that is really the case
        gflat = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            worst_abs = max(worst_abs, abs(float(gflat[i]) - fd))
            scale = max(scale, abs(fd), abs(float(gflat[i])))
    if scale == 0.0:
        return worst_abs
    return worst_abs / scale
