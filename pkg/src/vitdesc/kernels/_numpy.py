"""Pure-numpy implementations of the hot kernels.

These are the reference versions; the compiled extension in ``_fastcore``
implements the same contracts.  All argmin/argmax decisions break ties at
the lowest index so both backends agree exactly on integer outputs.
"""

from __future__ import annotations

import numpy as np

_BLOCK_ROWS = 4096


def assign_nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row under squared Euclidean distance.

    Returns (labels int64, squared distance float64).  Distances use the
    |x|^2 - 2 x.c + |c|^2 expansion, clamped at zero.
    """
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    sqd = np.empty(n, dtype=np.float64)
    c2 = np.einsum("kd,kd->k", centroids, centroids)
    for start in range(0, n, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, n)
        block = points[start:stop]
        x2 = np.einsum("nd,nd->n", block, block)
        d2 = x2[:, None] + c2[None, :] - 2.0 * (block @ centroids.T)
        idx = np.argmin(d2, axis=1)
        labels[start:stop] = idx
        np.maximum(d2[np.arange(stop - start), idx], 0.0, out=sqd[start:stop])
    return labels, sqd


def cosine_argmax(queries: np.ndarray, bank: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index and similarity of the most cosine-similar bank row per query.

    Both inputs must already have unit rows.
    """
    n = queries.shape[0]
    idx = np.empty(n, dtype=np.int64)
    sim = np.empty(n, dtype=np.float64)
    for start in range(0, n, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, n)
        sims = queries[start:stop] @ bank.T
        best = np.argmax(sims, axis=1)
        idx[start:stop] = best
        sim[start:stop] = sims[np.arange(stop - start), best]
    return idx, sim


def group_sums(points: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster sums and member counts, accumulated in a fixed order."""
    sums = np.zeros((k, points.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, points)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


def log_bin_gather(data: np.ndarray, levels: int, base: int) -> np.ndarray:
    """Concatenate each cell with its 8 neighbors at dilations base**(l-1).

    Out-of-grid neighbors contribute zero slots.  Slot order: the cell
    itself, then per level the offsets (-d,-d) (-d,0) (-d,+d) (0,-d) (0,+d)
    (+d,-d) (+d,0) (+d,+d).
    """
    h, w, d = data.shape
    out = np.zeros((h, w, d * (1 + 8 * levels)), dtype=data.dtype)
    out[:, :, :d] = data
    slot = 1
    for level in range(1, levels + 1):
        dil = base ** (level - 1)
        for dy in (-dil, 0, dil):
            for dx in (-dil, 0, dil):
                if dy == 0 and dx == 0:
                    continue
                dst_y = slice(max(0, -dy), min(h, h - dy))
                dst_x = slice(max(0, -dx), min(w, w - dx))
                src_y = slice(max(0, dy), min(h, h + dy))
                src_x = slice(max(0, dx), min(w, w + dx))
                out[dst_y, dst_x, slot * d:(slot + 1) * d] = data[src_y, src_x]
                slot += 1
    return out
