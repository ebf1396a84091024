"""k-means over descriptor bags with deterministic seeding and elbow selection.

Seeding consumes only ``rng.random()`` draws from a fixed pure-numpy path, and
every tie-break is by lowest index, so a (matrix, k, seed) triple produces the
same model on any kernel backend and any thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .store import DescriptorField, DescriptorMatrix, LabelMask

__all__ = [
    "ClusterModel",
    "kmeans",
    "assign",
    "elbow_select_k",
    "l2_normalize_rows",
]

DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-4
DEFAULT_DROP_THRESHOLD = 0.05
DEFAULT_K_RANGE = (2, 12)

# Relative slack for the per-iteration monotonicity assertion.  Lloyd's
# algorithm is monotone in exact arithmetic; anything beyond rounding noise
# (or a NaN, which fails every comparison) is a genuine numerical failure.
_MONOTONE_RTOL = 1e-9


@dataclass(frozen=True)
class ClusterModel:
    """Fitted k-means model over one descriptor bag."""

    k: int
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    iterations: int

    def __post_init__(self) -> None:
        c = np.ascontiguousarray(self.centroids, dtype=np.float64)
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        if c.shape[0] != self.k:
            raise ValueError(f"expected {self.k} centroids, got {c.shape[0]}")
        if lab.min(initial=0) < 0 or lab.max(initial=0) >= self.k:
            raise ValueError("labels out of range for k")
        c.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "labels", lab)


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Rows scaled to unit L2 norm; zero rows stay zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, eps)


def _as_rows(matrix: DescriptorMatrix | np.ndarray) -> np.ndarray:
    if isinstance(matrix, DescriptorMatrix):
        return np.asarray(matrix.data, dtype=np.float64)
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array of row vectors")
    return arr


def _check_monotone(inertia: float, prev: float) -> None:
    if not math.isfinite(inertia):
        raise ArithmeticError(f"non-finite k-means inertia {inertia!r}")
    if not inertia <= prev * (1.0 + _MONOTONE_RTOL) + 1e-12:
        raise ArithmeticError(
            f"k-means inertia increased from {prev!r} to {inertia!r}")


def _seed_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # k-means++: each next centroid drawn with probability proportional to
    # squared distance from the nearest one chosen so far.  Distances are
    # computed here in plain numpy (never via the backend kernels) so the
    # draw sequence cannot depend on the backend.
    n = x.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = min(int(rng.random() * n), n - 1)
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining mass at distance zero (duplicated points).
            idx = min(int(rng.random() * n), n - 1)
        else:
            r = rng.random() * total
            idx = min(int(np.searchsorted(np.cumsum(d2), r, side="right")), n - 1)
        chosen[j] = idx
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].astype(np.float64, copy=True)


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator,
           max_iters: int, tol: float,
           backend: str | None) -> tuple[np.ndarray, np.ndarray, float, int]:
    centroids = _seed_centroids(x, k, rng)
    prev = float("inf")
    iterations = 0
    for iterations in range(1, max_iters + 1):
        labels, sqd = kernels.assign_nearest(x, centroids, backend=backend)
        inertia = float(sqd.sum())
        _check_monotone(inertia, prev)
        prev = inertia
        sums, counts = kernels.group_sums(x, labels, k, backend=backend)
        new_centroids = centroids.copy()
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        empties = np.flatnonzero(~nonempty)
        if empties.size:
            # Reseed each empty centroid to the point currently farthest from
            # its assigned centroid; stable sort keeps ties at lowest index.
            order = np.argsort(-sqd, kind="stable")
            for slot, src in zip(empties, order):
                new_centroids[slot] = x[src]
        movement = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if movement < tol:
            break
    # Final assignment so labels and inertia reflect the returned centroids.
    labels, sqd = kernels.assign_nearest(x, centroids, backend=backend)
    inertia = float(sqd.sum())
    _check_monotone(inertia, prev)
    return centroids, labels, inertia, iterations


def kmeans(matrix: DescriptorMatrix | np.ndarray, k: int, seed: int = 0,
           max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
           restarts: int = 1, backend: str | None = None) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding.

    With ``restarts > 1`` the seeding rng is consumed sequentially across
    runs and the lowest-inertia model wins, so a larger restart count never
    changes the result of the runs it shares with a smaller one.

    Raises ArithmeticError if inertia ever increases between iterations.
    """
    x = _as_rows(matrix)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot cluster an empty matrix")
    if k <= 0:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows ({n})")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    # Rows are put in a canonical (lexicographic) order before seeding, so
    # the fitted partition cannot depend on how the caller ordered them.
    order = np.lexsort(x.T[::-1])
    canonical = x[order]

    rng = np.random.default_rng(seed)
    best: tuple[np.ndarray, np.ndarray, float, int] | None = None
    for _ in range(restarts):
        result = _lloyd(canonical, k, rng, max_iters, tol, backend)
        if best is None or result[2] < best[2]:
            best = result
    centroids, canonical_labels, inertia, iterations = best
    labels = np.empty_like(canonical_labels)
    labels[order] = canonical_labels
    return ClusterModel(k=k, centroids=centroids, labels=labels,
                        inertia=inertia, iterations=iterations)


def assign(model: ClusterModel, field: DescriptorField,
           backend: str | None = None) -> LabelMask:
    """Label every cell of a field with its nearest centroid."""
    dim = model.centroids.shape[1]
    if field.meta.descriptor_dim != dim:
        raise ValueError(
            f"field dim {field.meta.descriptor_dim} does not match "
            f"centroid dim {dim}")
    labels, _ = kernels.assign_nearest(field.rows(), model.centroids,
                                       backend=backend)
    grid = labels.reshape(field.meta.grid_h, field.meta.grid_w).astype(np.int32)
    return LabelMask(field.meta, grid)


def elbow_select_k(matrix: DescriptorMatrix | np.ndarray,
                   k_min: int = DEFAULT_K_RANGE[0],
                   k_max: int = DEFAULT_K_RANGE[1],
                   seed: int = 0,
                   drop_threshold: float = DEFAULT_DROP_THRESHOLD,
                   max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
                   restarts: int = 1, backend: str | None = None) -> int:
    """Smallest k whose relative inertia improvement falls below the threshold.

    improvement(k) = (inertia(k) - inertia(k+1)) / inertia(k), taken as 0
    when inertia(k) is 0 (a perfect fit cannot improve).  Returns k_max when
    no k in [k_min, k_max) qualifies.
    """
    x = _as_rows(matrix)
    if not 1 <= k_min < k_max:
        raise ValueError(f"need 1 <= k_min < k_max, got [{k_min}, {k_max}]")
    if k_max > x.shape[0]:
        raise ValueError(f"k_max={k_max} exceeds the number of rows ({x.shape[0]})")
    inertias = {
        k: kmeans(x, k, seed=seed, max_iters=max_iters, tol=tol,
                  restarts=restarts, backend=backend).inertia
        for k in range(k_min, k_max + 1)
    }
    for k in range(k_min, k_max):
        cur = inertias[k]
        improvement = max(0.0, (cur - inertias[k + 1]) / cur) if cur > 0.0 else 0.0
        if improvement < drop_threshold:
            return k
    return k_max
