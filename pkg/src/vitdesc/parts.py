"""Part discovery: re-cluster the common foreground into a fixed part count.

Clusters are renumbered into part ids by descending membership (ties by
lowest centroid norm, then cluster index) so the same inputs and seed always
yield the same part labeling.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .clustering import kmeans, l2_normalize_rows
from .store import DescriptorField, LabelMask

__all__ = ["part_segment"]


def part_segment(fields: Sequence[DescriptorField],
                 fg_masks: Sequence[LabelMask],
                 num_parts: int, seed: int = 0,
                 normalize: bool = True,
                 restarts: int = 1,
                 backend: str | None = None) -> list[LabelMask]:
    """Cluster foreground descriptors into parts; labels are {0..num_parts}.

    Background stays 0; part j of the output corresponds to the j-th largest
    cluster.  Images with an empty foreground get an all-background mask.
    """
    if num_parts <= 0:
        raise ValueError("num_parts must be positive")
    if len(fields) != len(fg_masks):
        raise ValueError("one foreground mask per field is required")

    selections = []
    blocks = []
    for field, mask in zip(fields, fg_masks):
        if mask.labels.shape != (field.meta.grid_h, field.meta.grid_w):
            raise ValueError(
                f"mask grid {mask.labels.shape} does not match field grid for "
                f"{field.meta.image_id!r}")
        flat = mask.labels.reshape(-1) > 0
        selections.append(flat)
        blocks.append(field.rows()[flat])

    bag = np.concatenate(blocks, axis=0)
    if bag.shape[0] < num_parts:
        raise ValueError(
            f"only {bag.shape[0]} foreground patches for {num_parts} parts")
    rows = l2_normalize_rows(bag) if normalize else np.asarray(
        bag, dtype=np.float64)
    model = kmeans(rows, num_parts, seed=seed, restarts=restarts,
                   backend=backend)

    counts = np.bincount(model.labels, minlength=num_parts)
    norms = np.linalg.norm(model.centroids, axis=1)
    order = sorted(range(num_parts),
                   key=lambda j: (-int(counts[j]), float(norms[j]), j))
    part_of_cluster = np.empty(num_parts, dtype=np.int32)
    for position, cluster in enumerate(order):
        part_of_cluster[cluster] = position + 1

    out = []
    offset = 0
    for field, flat in zip(fields, selections):
        n = int(flat.sum())
        grid = np.zeros(flat.shape[0], dtype=np.int32)
        grid[flat] = part_of_cluster[model.labels[offset:offset + n]]
        offset += n
        out.append(LabelMask(field.meta,
                             grid.reshape(field.meta.grid_h, field.meta.grid_w)))
    return out
