"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Rng, Tensor

__all__ = ["numerical_gradient", "gradient_check"]


def numerical_gradient(f, x: Tensor, h=1e-5, coords=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``coords`` limits the evaluation to a subset of flat coordinate indices;
    unevaluated entries are returned as NaN.
    """
    flat = x.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    indices = range(flat.size) if coords is None else coords
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        up = f(x).item()
        flat[i] = orig - h
        down = f(x).item()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(x.shape)


def gradient_check(f, x: Tensor, h=1e-5, sample=None, rng: Rng | None = None) -> float:
    """Max relative error between analytic and numeric gradients of ``f`` at ``x``.

    Per-coordinate error is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    ``sample`` caps the number of coordinates checked (drawn via ``rng``), which
    keeps whole-model checks affordable.
    """
    if not x.requires_grad:
        raise ValueError("gradient_check target must require gradients")
    x.zero_grad()
    out = f(x)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("gradient_check: f(x) is not finite")
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    coords = None
    if sample is not None and sample < x.size:
        if rng is None:
            rng = Rng(0)
        coords = sorted(int(i) for i in rng.permutation(x.size)[:sample])
    numeric = numerical_gradient(f, x, h=h, coords=coords)

    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    checked = ~np.isnan(n)
    denom = np.maximum(1e-8, np.abs(a[checked]) + np.abs(n[checked]))
    if not checked.any():
        return 0.0
    return float(np.max(np.abs(a[checked] - n[checked]) / denom))
