"""Common-foreground segmentation by saliency voting over shared clusters.

Descriptors from all images are clustered jointly; each image then scores
every cluster by the mean saliency of its patches there, and clusters salient
in enough images become the common foreground.  An optional color-model
refinement sharpens the patch-resolution masks to pixel resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .clustering import (
    DEFAULT_DROP_THRESHOLD,
    DEFAULT_K_RANGE,
    ClusterModel,
    elbow_select_k,
    kmeans,
    l2_normalize_rows,
)
from .store import (
    DescriptorField,
    LabelMask,
    SaliencyField,
    pixel_to_patch_grid,
    stack_fields,
)

__all__ = [
    "VotingConfig",
    "CosegResult",
    "segment_saliency",
    "vote_foreground",
    "build_masks",
    "upsample_mask",
    "refine_mask",
    "refine_parts",
    "cosegment",
]

# Variance floor for the color models; flat-color regions otherwise collapse
# the likelihood to a delta.
_VAR_FLOOR = 1e-4


@dataclass(frozen=True)
class VotingConfig:
    """Saliency threshold and the fraction of images a cluster must win.

    summed_saliency switches to the alternative reading where per-image
    saliencies are summed once and compared against tau directly.
    """

    tau: float = 0.2
    vote_fraction: float = 0.75
    summed_saliency: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if not 0.0 < self.vote_fraction <= 1.0:
            raise ValueError("vote_fraction must be in (0, 1]")


def segment_saliency(labels: LabelMask, saliency: SaliencyField,
                     cluster_id: int) -> float | None:
    """Mean saliency over the cluster's patches in one image; None if absent."""
    if labels.labels.shape != saliency.values.shape:
        raise ValueError(
            f"label grid {labels.labels.shape} does not match "
            f"saliency grid {saliency.values.shape}")
    member = labels.labels == cluster_id
    if not member.any():
        return None
    return float(saliency.values[member].mean())


def vote_foreground(per_image_saliencies: Mapping[int, Sequence[float | None]],
                    cfg: VotingConfig, num_images: int) -> frozenset[int]:
    """Clusters salient in at least vote_fraction of all images.

    Absent entries (None) never vote; the denominator stays num_images.
    """
    if num_images <= 0:
        raise ValueError("num_images must be positive")
    foreground = set()
    for cluster, values in per_image_saliencies.items():
        present = [v for v in values if v is not None]
        if cfg.summed_saliency:
            if sum(present) >= cfg.tau:
                foreground.add(cluster)
        else:
            votes = sum(1 for v in present if v >= cfg.tau)
            if votes >= cfg.vote_fraction * num_images:
                foreground.add(cluster)
    return frozenset(foreground)


def build_masks(labels: Sequence[LabelMask],
                fg: Iterable[int]) -> list[LabelMask]:
    """Binary per-patch masks: 1 where the cluster label is foreground."""
    fg_set = frozenset(fg)
    out = []
    for mask in labels:
        binary = np.isin(mask.labels, sorted(fg_set)).astype(np.int32)
        out.append(LabelMask(mask.meta, binary))
    return out


def upsample_mask(mask: LabelMask) -> np.ndarray:
    """Nearest-patch upsampling of a label grid to pixel resolution."""
    meta = mask.meta
    ys = np.arange(meta.image_height_px, dtype=np.float64)
    xs = np.arange(meta.image_width_px, dtype=np.float64)
    rows, _ = pixel_to_patch_grid(ys, np.zeros_like(ys), meta)
    _, cols = pixel_to_patch_grid(np.zeros_like(xs), xs, meta)
    return mask.labels[np.ix_(rows, cols)]


def _color_log_likelihood(pixels: np.ndarray, member: np.ndarray) -> np.ndarray:
    """Log-likelihood of every pixel under a diagonal Gaussian fit to member."""
    sel = pixels[member.reshape(-1)]
    mean = sel.mean(axis=0)
    var = np.maximum(sel.var(axis=0), _VAR_FLOOR)
    ll = -0.5 * (((pixels - mean) ** 2) / var + np.log(var)).sum(axis=1)
    return ll.reshape(member.shape)


def _as_pixel_array(image_rgb: np.ndarray, mask: LabelMask) -> np.ndarray:
    img = np.asarray(image_rgb, dtype=np.float64)
    expected = (mask.meta.image_height_px, mask.meta.image_width_px, 3)
    if img.shape != expected:
        raise ValueError(f"image shape {img.shape} does not match {expected}")
    return img.reshape(-1, 3)


def refine_mask(mask: LabelMask, image_rgb: np.ndarray) -> np.ndarray:
    """Color-model refinement of a binary patch mask to pixel resolution.

    Fits one diagonal-covariance Gaussian in RGB to the seed foreground and
    one to the seed background, relabels pixels by likelihood, and keeps only
    connected components touching the seed foreground.  A degenerate seed
    (all one class) is returned unchanged.
    """
    seed = upsample_mask(mask) > 0
    if seed.all() or not seed.any():
        return seed
    pixels = _as_pixel_array(image_rgb, mask)
    ll_fg = _color_log_likelihood(pixels, seed)
    ll_bg = _color_log_likelihood(pixels, ~seed)
    relabeled = ll_fg > ll_bg
    components, count = ndimage.label(relabeled)
    if count == 0:
        return relabeled
    touching = np.unique(components[relabeled & seed])
    keep = np.zeros(count + 1, dtype=bool)
    keep[touching] = True
    keep[0] = False
    return keep[components]


def refine_parts(part_mask: LabelMask, image_rgb: np.ndarray) -> np.ndarray:
    """Per-part variant: refine the foreground, then argmax per-part color models.

    Parts without seed pixels are skipped; ties go to the lowest part id.
    Returns a pixel-resolution label array with 0 as background.
    """
    binary = LabelMask(part_mask.meta, (part_mask.labels > 0).astype(np.int32))
    fg = refine_mask(binary, image_rgb)
    seed = upsample_mask(part_mask)
    out = np.zeros(fg.shape, dtype=np.int32)
    if not fg.any():
        return out
    pixels = _as_pixel_array(image_rgb, part_mask)
    part_ids = [int(p) for p in np.unique(seed) if p > 0]
    if not part_ids:
        return out
    scores = np.stack([_color_log_likelihood(pixels, seed == p)
                       for p in part_ids])
    choice = np.argmax(scores, axis=0)
    out[fg] = np.asarray(part_ids, dtype=np.int32)[choice[fg]]
    return out


@dataclass(frozen=True)
class CosegResult:
    """Everything the voting pipeline produced for one image set."""

    image_ids: tuple[str, ...]
    chosen_k: int
    model: ClusterModel
    cluster_masks: tuple[LabelMask, ...]
    masks: tuple[LabelMask, ...]
    foreground: tuple[int, ...]
    saliencies: dict[int, tuple[float | None, ...]]


def cosegment(fields: Sequence[DescriptorField],
              saliencies: Mapping[str, SaliencyField],
              k: int | None = None,
              voting: VotingConfig | None = None,
              seed: int = 0,
              normalize: bool = True,
              k_range: tuple[int, int] = DEFAULT_K_RANGE,
              drop_threshold: float = DEFAULT_DROP_THRESHOLD,
              restarts: int = 1,
              backend: str | None = None) -> CosegResult:
    """Cluster all descriptors jointly, vote foreground, build binary masks.

    Fields tagged augmented contribute rows to clustering only; masks and
    votes come from the unaugmented fields, which need a saliency field each.
    """
    cfg = voting or VotingConfig()
    primary = [f for f in fields if not f.meta.augmented]
    augmented = [f for f in fields if f.meta.augmented]
    if not primary:
        raise ValueError("no unaugmented descriptor fields given")
    for f in primary:
        sal = saliencies.get(f.meta.image_id)
        if sal is None:
            raise ValueError(f"missing saliency field for {f.meta.image_id!r}")
        if (sal.meta.grid_h, sal.meta.grid_w) != (f.meta.grid_h, f.meta.grid_w):
            raise ValueError(f"saliency grid mismatch for {f.meta.image_id!r}")

    bag = stack_fields(list(primary) + list(augmented))
    rows = l2_normalize_rows(bag.data) if normalize else np.asarray(
        bag.data, dtype=np.float64)

    if k is None:
        k_min, k_max = k_range
        k_max = min(k_max, rows.shape[0])
        if k_min >= k_max:
            chosen_k = max(1, min(k_min, rows.shape[0]))
        else:
            chosen_k = elbow_select_k(rows, k_min, k_max, seed=seed,
                                      drop_threshold=drop_threshold,
                                      restarts=restarts, backend=backend)
    else:
        chosen_k = k
    model = kmeans(rows, chosen_k, seed=seed, restarts=restarts,
                   backend=backend)

    cluster_masks = []
    for i, f in enumerate(primary):
        sl = bag.row_slice_of_field(i)
        grid = model.labels[sl].reshape(f.meta.grid_h, f.meta.grid_w)
        cluster_masks.append(LabelMask(f.meta, grid.astype(np.int32)))

    per_cluster: dict[int, tuple[float | None, ...]] = {}
    for cluster in range(chosen_k):
        per_cluster[cluster] = tuple(
            segment_saliency(mask, saliencies[f.meta.image_id], cluster)
            for f, mask in zip(primary, cluster_masks))
    fg = vote_foreground(per_cluster, cfg, num_images=len(primary))
    masks = build_masks(cluster_masks, fg)

    return CosegResult(
        image_ids=tuple(f.meta.image_id for f in primary),
        chosen_k=chosen_k,
        model=model,
        cluster_masks=tuple(cluster_masks),
        masks=tuple(masks),
        foreground=tuple(sorted(fg)),
        saliencies=per_cluster,
    )
