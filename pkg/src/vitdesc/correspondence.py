"""Semantic point correspondences via cosine nearest neighbors.

Two modes: best-buddies pairs (mutual nearest neighbors between two whole
fields) and keypoint matching (nearest neighbor of each query point in the
target field, over context-binned descriptors).  All searches are exact;
ties break to the lowest linear index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .binning import BinningConfig, log_bin
from .store import (
    DescriptorField,
    DescriptorMatrix,
    FieldMeta,
    patch_center_px,
    pixel_to_patch,
)

__all__ = ["MatchSet", "nearest_neighbor", "best_buddies", "match_keypoints"]


def _unit_rows(rows: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"{what} must be a non-empty 2-D row matrix")
    norms = np.linalg.norm(arr, axis=1)
    if (norms == 0.0).any():
        raise ValueError(f"{what} contains zero-norm rows")
    return arr / norms[:, None]


@dataclass(frozen=True)
class MatchSet:
    """Mutual-NN pairs between a source and a target field.

    Each pair is ((src_row, src_col), (tgt_row, tgt_col), cosine similarity);
    every source and target cell appears in at most one pair.
    """

    pairs: tuple[tuple[tuple[int, int], tuple[int, int], float], ...]
    src_meta: FieldMeta
    tgt_meta: FieldMeta


def nearest_neighbor(query: np.ndarray, bank: DescriptorMatrix | np.ndarray,
                     backend: str | None = None) -> tuple[int, float]:
    """Index and similarity of the bank row closest to query under cosine."""
    rows = bank.data if isinstance(bank, DescriptorMatrix) else bank
    b = _unit_rows(rows, "bank")
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if q.shape[1] != b.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} does not match bank dim {b.shape[1]}")
    q = _unit_rows(q, "query")
    idx, sim = kernels.cosine_argmax(q, b, backend=backend)
    return int(idx[0]), float(sim[0])


def best_buddies(m_field: DescriptorField, q_field: DescriptorField,
                 backend: str | None = None) -> MatchSet:
    """All pairs (m, q) that are each other's cosine nearest neighbor."""
    if m_field.meta.descriptor_dim != q_field.meta.descriptor_dim:
        raise ValueError(
            f"descriptor dim mismatch: {m_field.meta.descriptor_dim} vs "
            f"{q_field.meta.descriptor_dim}")
    m = _unit_rows(m_field.rows(), "source field")
    q = _unit_rows(q_field.rows(), "target field")
    fwd, fwd_sim = kernels.cosine_argmax(m, q, backend=backend)
    bwd, _ = kernels.cosine_argmax(q, m, backend=backend)
    m_w = m_field.meta.grid_w
    q_w = q_field.meta.grid_w
    pairs = []
    for i in range(m.shape[0]):
        j = int(fwd[i])
        if int(bwd[j]) == i:
            pairs.append((divmod(i, m_w), divmod(j, q_w), float(fwd_sim[i])))
    return MatchSet(tuple(pairs), m_field.meta, q_field.meta)


def match_keypoints(src_kps: Sequence[tuple[float, float]],
                    src_field: DescriptorField,
                    tgt_field: DescriptorField,
                    cfg: BinningConfig | None = None,
                    backend: str | None = None,
                    with_similarity: bool = False):
    """Map source pixel keypoints to target pixel locations.

    Both fields are context-binned, each (y, x) keypoint is snapped to its
    patch, and the patch center of the cosine nearest neighbor in the target
    is returned.  Pass BinningConfig(levels=0) to match raw descriptors.
    """
    if src_field.meta.descriptor_dim != tgt_field.meta.descriptor_dim:
        raise ValueError("descriptor dim mismatch between source and target")
    binning = cfg or BinningConfig()
    src_binned = log_bin(src_field, binning, backend=backend)
    tgt_binned = log_bin(tgt_field, binning, backend=backend)
    bank = _unit_rows(tgt_binned.rows(), "target field")

    src_rows = src_binned.rows()
    grid_w = src_field.meta.grid_w
    queries = np.empty((len(src_kps), src_rows.shape[1]), dtype=np.float64)
    for i, (y, x) in enumerate(src_kps):
        r, c = pixel_to_patch(y, x, src_field.meta)
        queries[i] = src_rows[r * grid_w + c]
    if len(src_kps) == 0:
        return []
    queries = _unit_rows(queries, "source keypoints")
    idx, sim = kernels.cosine_argmax(queries, bank, backend=backend)

    out = []
    for i in range(len(src_kps)):
        r, c = divmod(int(idx[i]), tgt_field.meta.grid_w)
        center = patch_center_px(r, c, tgt_field.meta)
        out.append((center, float(sim[i])) if with_similarity else center)
    return out
