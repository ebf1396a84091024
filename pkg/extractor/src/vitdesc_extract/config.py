"""Extraction configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

from .vitd import FACETS


@dataclass(frozen=True)
class ExtractConfig:
    """What to pull out of the model and how.

    ``stride_px`` of None means the model's own patch size (non-overlapping
    grid).  ``image_load_size`` of None keeps images at their original size;
    otherwise the shorter side is resized to it, aspect preserved, no crop.
    ``n_augment`` extra descriptor copies per image come from seeded random
    crops (side scale 0.8 to 1.0) and horizontal flips, written with the
    augmented header flag so the consumer clusters them but never emits masks
    for them.

    Model-dependent checks (stride vs patch size, layer range, head indices)
    happen when an extractor is built; this type only validates what it can
    see on its own.
    """

    model_id: str
    layers: tuple[int, ...] = (11,)
    facets: tuple[str, ...] = ("key",)
    stride_px: int | None = None
    image_load_size: int | None = None
    saliency: bool = True
    n_augment: int = 0
    augment_seed: int = 0
    # None averages CLS attention over all heads; a subset is for ablations.
    head_subset: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(int(x) for x in self.layers))
        object.__setattr__(self, "facets", tuple(self.facets))
        if not self.layers:
            raise ValueError("at least one layer is required")
        if len(set(self.layers)) != len(self.layers):
            raise ValueError(f"duplicate layer indices in {self.layers}")
        if any(x < 0 for x in self.layers):
            raise ValueError(f"layer indices must be >= 0, got {self.layers}")
        if not self.facets:
            raise ValueError("at least one facet is required")
        bad = [f for f in self.facets if f not in FACETS]
        if bad:
            raise ValueError(f"unknown facets {bad}; valid: {FACETS}")
        if len(set(self.facets)) != len(self.facets):
            raise ValueError(f"duplicate facets in {self.facets}")
        if self.stride_px is not None and self.stride_px <= 0:
            raise ValueError(f"stride_px must be positive, got {self.stride_px}")
        if self.image_load_size is not None and self.image_load_size <= 0:
            raise ValueError(f"image_load_size must be positive, got {self.image_load_size}")
        if self.n_augment < 0:
            raise ValueError(f"n_augment must be >= 0, got {self.n_augment}")
        if self.head_subset is not None:
            object.__setattr__(self, "head_subset",
                               tuple(int(h) for h in self.head_subset))
            if not self.head_subset:
                raise ValueError("head_subset must be None or non-empty")
            if any(h < 0 for h in self.head_subset):
                raise ValueError(f"head indices must be >= 0, got {self.head_subset}")

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "layers": list(self.layers),
            "facets": list(self.facets),
            "stride_px": self.stride_px,
            "image_load_size": self.image_load_size,
            "saliency": self.saliency,
            "n_augment": self.n_augment,
            "augment_seed": self.augment_seed,
            "head_subset": None if self.head_subset is None else list(self.head_subset),
        }
