"""Central finite differences, used as the oracle for backprop."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f()
        flat[k] = orig - h
        fm = f()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor) over the whole array."""
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def gradcheck(loss_fn: Callable[[], Tensor], inputs: Sequence[Tensor],
              h: float = 1e-5) -> float:
    """Worst backprop vs finite-difference discrepancy.

    Normalised by the largest gradient magnitude over all inputs, so an input
    whose true gradient is exactly zero does not turn FD noise into a huge ratio.
    """
    for t in inputs:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    numeric = [numerical_grad(lambda: float(loss_fn().data), t.data, h) for t in inputs]
    scale = max(max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
                for a, n in zip(analytic, numeric))
    scale = max(scale, 1e-8)
    return max(float(np.abs(a - n).max(initial=0.0)) for a, n in zip(analytic, numeric)) / scale
