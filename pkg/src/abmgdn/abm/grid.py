"""Torus lattice helpers shared by both simulators."""

from __future__ import annotations

import numpy as np

MOORE = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
VON_NEUMANN = ((1, 0), (-1, 0), (0, 1), (0, -1))

# Off-grid agents carry this coordinate in the position arrays; record views
# expose it as ``position=None`` instead.
OFF_GRID = -1


def cell_counts(pos: np.ndarray, labels: np.ndarray, L: int, n_labels: int) -> np.ndarray:
    """``[L, L, n_labels]`` agent counts per cell, skipping off-grid rows."""
    counts = np.zeros((L, L, n_labels), dtype=np.int64)
    on = pos[:, 0] != OFF_GRID
    np.add.at(counts, (pos[on, 0], pos[on, 1], labels[on]), 1)
    return counts


def neighbourhood_sum(counts: np.ndarray, offsets) -> np.ndarray:
    """For every cell, the sum of ``counts`` over the offset cells (torus)."""
    total = np.zeros_like(counts)
    for dx, dy in offsets:
        total += np.roll(counts, shift=(-dx, -dy), axis=(0, 1))
    return total


def neighbour_pairs(pos: np.ndarray, members: np.ndarray, L: int, offsets) -> tuple[np.ndarray, np.ndarray]:
    """All (source j, target i) with j in an offset cell of i; both in ``members``.

    Several agents may share a cell; all of them are returned. Own cell is
    never included, so there are no self-edges.
    """
    idx = np.flatnonzero(members)
    if idx.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    cell = pos[idx, 0] * L + pos[idx, 1]
    order = np.argsort(cell, kind="stable")
    sorted_cells = cell[order]
    sorted_agents = idx[order]
    start = np.searchsorted(sorted_cells, np.arange(L * L), side="left")
    stop = np.searchsorted(sorted_cells, np.arange(L * L), side="right")
    srcs, dsts = [], []
    for dx, dy in offsets:
        nx = (pos[idx, 0] + dx) % L
        ny = (pos[idx, 1] + dy) % L
        ncell = nx * L + ny
        lo, hi = start[ncell], stop[ncell]
        k = hi - lo
        if not k.any():
            continue
        dst = np.repeat(idx, k)
        offs = np.arange(k.sum()) - np.repeat(np.cumsum(k) - k, k)
        src = sorted_agents[np.repeat(lo, k) + offs]
        srcs.append(src)
        dsts.append(dst)
    if not srcs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    order = np.lexsort((src, dst))
    return src[order], dst[order]
