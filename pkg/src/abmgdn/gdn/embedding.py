from __future__ import annotations

import numpy as np


def sinusoidal_embedding(tau, dim: int = 256, base: float = 1e4) -> np.ndarray:
    """Interleaved ``[sin(tau w_0), cos(tau w_0), sin(tau w_1), ...]``, ``w_k = base^(-2k/dim)``.

    Scalar tau gives a ``[dim]`` vector, an array of taus gives ``[len, dim]``.
    """
    if dim < 2 or dim % 2:
        raise ValueError(f"embedding dim must be even and positive, got {dim}")
    tau = np.asarray(tau, dtype=np.float64)
    freqs = base ** (-np.arange(dim // 2) * 2.0 / dim)
    angles = tau[..., None] * freqs
    out = np.empty(tau.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out
