"""Shared builders for synthetic fields used across the test suite."""

import numpy as np

from vitdesc.store import DescriptorField, FieldMeta, SaliencyField


def make_meta(image_id="img", image_h=32, image_w=32, patch=8, stride=4,
              layer=11, facet="key", dim=16, augmented=False):
    return FieldMeta(
        image_id=image_id,
        image_height_px=image_h,
        image_width_px=image_w,
        patch_size_px=patch,
        stride_px=stride,
        layer_index=layer,
        facet=facet,
        model_id="toy/vit-tiny",
        descriptor_dim=dim,
        augmented=augmented,
    )


def random_field(meta, rng):
    data = rng.normal(size=(meta.grid_h, meta.grid_w, meta.descriptor_dim))
    return DescriptorField(meta, data.astype(np.float32))


def field_from_grid(meta, grid):
    return DescriptorField(meta, np.asarray(grid, dtype=np.float32))


def saliency_like(field, values):
    meta = make_meta(image_id=field.meta.image_id,
                     image_h=field.meta.image_height_px,
                     image_w=field.meta.image_width_px,
                     patch=field.meta.patch_size_px,
                     stride=field.meta.stride_px,
                     layer=field.meta.layer_index,
                     facet=field.meta.facet,
                     dim=1)
    return SaliencyField(meta, np.asarray(values, dtype=np.float32))
