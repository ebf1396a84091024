"""Evaluation measures: mask overlap, clustering agreement, keypoint accuracy,
and landmark regression over part masks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._blas import single_thread_blas
from .store import LabelMask

__all__ = [
    "jaccard",
    "precision_px",
    "nmi_ari",
    "pck",
    "LandmarkRegressionResult",
    "landmark_regression_error",
    "part_centroid_features",
]

_RIDGE_LAMBDA = 1e-4


def _paired_binary(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return p, g


def jaccard(pred, gt) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    p, g = _paired_binary(pred, gt)
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(p, g).sum()) / union


def precision_px(pred, gt) -> float:
    """Fraction of positions where the two binary masks agree."""
    p, g = _paired_binary(pred, gt)
    if p.size == 0:
        raise ValueError("empty masks")
    return float((p == g).mean())


def _contingency(pred_labels, gt_labels) -> np.ndarray:
    pred = np.asarray(pred_labels).reshape(-1)
    gt = np.asarray(gt_labels).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError("label lists differ in length")
    _, pi = np.unique(pred, return_inverse=True)
    _, gi = np.unique(gt, return_inverse=True)
    table = np.zeros((pi.max() + 1, gi.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, gi), 1)
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi_ari(pred_labels, gt_labels, foreground_only: bool = False,
            background_label: int = 0) -> tuple[float, float]:
    """Normalized mutual information (arithmetic mean) and adjusted Rand index.

    With foreground_only, samples whose ground-truth label equals
    background_label are dropped before scoring.
    """
    pred = np.asarray(pred_labels).reshape(-1)
    gt = np.asarray(gt_labels).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError("label lists differ in length")
    if foreground_only:
        keep = gt != background_label
        pred, gt = pred[keep], gt[keep]
    n = pred.shape[0]
    if n == 0:
        raise ValueError("no samples left to score")
    if n == 1:
        return 1.0, 1.0

    table = _contingency(pred, gt)
    a = table.sum(axis=1)
    b = table.sum(axis=0)

    mi = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            nij = table[i, j]
            if nij:
                mi += (nij / n) * math.log(n * nij / (a[i] * b[j]))
    mi = max(0.0, mi)
    h_pred = _entropy(a, n)
    h_gt = _entropy(b, n)
    if h_pred == 0.0 and h_gt == 0.0:
        nmi = 1.0
    elif mi == 0.0:
        nmi = 0.0
    else:
        nmi = min(1.0, mi / ((h_pred + h_gt) / 2.0))

    def comb2(v):
        return (v * (v - 1)) // 2

    sum_comb = int(comb2(table).sum())
    comb_a = int(comb2(a).sum())
    comb_b = int(comb2(b).sum())
    total = comb2(n)
    expected = comb_a * comb_b / total
    max_index = (comb_a + comb_b) / 2.0
    if max_index == expected:
        ari = 1.0
    else:
        ari = (sum_comb - expected) / (max_index - expected)
    return nmi, ari


def pck(pred_kps, gt_kps, alpha: float, image_h: int, image_w: int) -> float:
    """Percentage of predictions within alpha*max(h, w) of ground truth.

    The radius is inclusive: a prediction exactly on the boundary counts.
    """
    pred = np.asarray(pred_kps, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_kps, dtype=np.float64).reshape(-1, 2)
    if pred.shape != gt.shape:
        raise ValueError("keypoint lists differ in length")
    if pred.shape[0] == 0:
        raise ValueError("no keypoints to score")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    radius = alpha * max(image_h, image_w)
    dist = np.linalg.norm(pred - gt, axis=1)
    return float(100.0 * (dist <= radius).mean())


@dataclass(frozen=True)
class LandmarkRegressionResult:
    """Mean test error (x100 in normalized coordinates) plus fit diagnostics."""

    error: float
    used_ridge: bool


def part_centroid_features(mask: LabelMask, num_parts: int) -> np.ndarray:
    """Per-part centroid coordinates, normalized to [0, 1] by image dims.

    Returns a flat (2*num_parts,) vector of (y, x) centroids over each part's
    patch centers; parts absent from the mask fall back to the mean center of
    the whole grid.
    """
    meta = mask.meta
    half = (meta.patch_size_px - 1) / 2.0
    ys = (np.arange(meta.grid_h) * meta.stride_px + half) / meta.image_height_px
    xs = (np.arange(meta.grid_w) * meta.stride_px + half) / meta.image_width_px
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    fallback = (float(yy.mean()), float(xx.mean()))
    feats = np.empty(2 * num_parts, dtype=np.float64)
    for p in range(1, num_parts + 1):
        member = mask.labels == p
        if member.any():
            feats[2 * (p - 1)] = yy[member].mean()
            feats[2 * (p - 1) + 1] = xx[member].mean()
        else:
            feats[2 * (p - 1)], feats[2 * (p - 1) + 1] = fallback
    return feats


def landmark_regression_error(part_masks: Sequence[LabelMask],
                              landmarks: Sequence[np.ndarray],
                              train_indices: Sequence[int],
                              test_indices: Sequence[int],
                              num_parts: int | None = None) -> LandmarkRegressionResult:
    """Linear landmark regression from part centroids, scored on a test split.

    Landmarks are pixel (y, x) arrays of identical length per image; they are
    normalized by their image dims, regressed from stacked part centroids via
    least squares with a bias term, and scored as mean L2 error x100 on the
    test images.  A rank-deficient design triggers a ridge refit (bias term
    unpenalized), reported in the result.
    """
    if len(part_masks) != len(landmarks):
        raise ValueError("one landmark array per mask is required")
    if not train_indices or not test_indices:
        raise ValueError("train and test splits must be non-empty")
    if num_parts is None:
        num_parts = max(int(m.labels.max()) for m in part_masks)
    if num_parts < 1:
        raise ValueError("no parts present in the masks")

    n_landmarks = np.asarray(landmarks[0]).reshape(-1, 2).shape[0]
    feats = []
    targets = []
    for mask, lms in zip(part_masks, landmarks):
        pts = np.asarray(lms, dtype=np.float64).reshape(-1, 2)
        if pts.shape[0] != n_landmarks:
            raise ValueError("landmark count differs across images")
        norm = pts / (mask.meta.image_height_px, mask.meta.image_width_px)
        feats.append(part_centroid_features(mask, num_parts))
        targets.append(norm.reshape(-1))
    x = np.asarray(feats)
    y = np.asarray(targets)

    train = np.asarray(train_indices, dtype=np.int64)
    test = np.asarray(test_indices, dtype=np.int64)
    design = np.hstack([np.ones((train.size, 1)), x[train]])
    with single_thread_blas():
        weights, _, rank, _ = np.linalg.lstsq(design, y[train], rcond=None)
        used_ridge = bool(rank < design.shape[1])
        if used_ridge:
            # Penalize everything except the bias column.
            penalty = np.eye(design.shape[1]) * _RIDGE_LAMBDA
            penalty[0, 0] = 0.0
            weights = np.linalg.solve(design.T @ design + penalty,
                                      design.T @ y[train])

        test_design = np.hstack([np.ones((test.size, 1)), x[test]])
        pred = test_design @ weights
    diff = (pred - y[test]).reshape(test.size, n_landmarks, 2)
    error = float(100.0 * np.linalg.norm(diff, axis=2).mean())
    return LandmarkRegressionResult(error=error, used_ridge=used_ridge)
