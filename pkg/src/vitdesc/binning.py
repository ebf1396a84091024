"""Log-binned descriptor aggregation.

Each patch descriptor is concatenated with the descriptors of its ring
neighbours at exponentially growing dilations, giving every patch a cheap
summary of its spatial context.  Output dimension is ``D * (1 + 8 * levels)``;
neighbours falling outside the grid leave their slot at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .store import DescriptorField, with_descriptor_dim

__all__ = ["BinningConfig", "log_bin"]

# Ring offsets for one level, in row-major order.  Slot layout in the output
# vector follows this order exactly, level by level.
NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)


@dataclass(frozen=True)
class BinningConfig:
    """Hierarchy depth and growth factor for context aggregation."""

    levels: int = 2
    dilation_base: int = 2

    def __post_init__(self):
        if self.levels < 0:
            raise ValueError("levels must be >= 0")
        if self.dilation_base < 1:
            raise ValueError("dilation_base must be >= 1")

    def output_dim(self, descriptor_dim: int) -> int:
        return descriptor_dim * (1 + 8 * self.levels)


def log_bin(field: DescriptorField, config: BinningConfig | None = None,
            backend: str | None = None) -> DescriptorField:
    """Concatenate each patch with its dilated ring neighbourhoods.

    Level 0 is the patch's own descriptor; level ``l`` (1-based) gathers the
    eight neighbours at dilation ``dilation_base ** (l - 1)``.
    """
    cfg = config or BinningConfig()
    meta = field.meta
    out = kernels.log_bin_gather(field.data, cfg.levels, cfg.dilation_base,
                                 backend=backend)
    new_meta = with_descriptor_dim(meta, cfg.output_dim(meta.descriptor_dim))
    return DescriptorField(new_meta, out)
