"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor


def numerical_grad(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(loss_fn().data)
        flat[i] = orig - h
        down = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max entry error scaled by the larger of the two gradients' max magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between backprop and central differences.

    ``loss_fn`` must rebuild the graph on every call and return a scalar.
    Parameters should be float64; single precision cannot resolve ``h``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    if loss.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued closure")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"grad_check: non-finite loss {loss.data!r}")
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numerical_grad(loss_fn, p, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
