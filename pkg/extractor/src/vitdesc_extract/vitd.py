"""Standalone VITD writer.

The descriptor toolkit that consumes these files ships its own reader; this
module duplicates the container layout instead of importing that package, so
the extractor can run on inference-only machines.  The two sides share only
the bytes:

    magic "VITD" | version u32 LE | header length u32 LE | UTF-8 JSON header
    | row-major float32 LE payload (row, col, channel)

The JSON header fields and their names are part of the contract and must not
drift; the consumer's reader validates all of them.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"VITD"
FORMAT_VERSION = 1
FACETS = ("key", "query", "value", "token")

_PREFIX = struct.Struct("<4sII")


def grid_shape(image_h: int, image_w: int, patch: int, stride: int) -> tuple[int, int]:
    """Patch-grid dimensions for an image under (patch, stride) extraction."""
    if patch <= 0 or stride <= 0:
        raise ValueError("patch and stride must be positive")
    if stride > patch:
        raise ValueError(f"stride {stride} exceeds patch size {patch}")
    if image_h < patch or image_w < patch:
        raise ValueError(f"image {image_h}x{image_w} smaller than patch {patch}")
    return ((image_h - patch) // stride + 1, (image_w - patch) // stride + 1)


def write_vitd(
    path: str | Path,
    *,
    image_id: str,
    image_h: int,
    image_w: int,
    patch: int,
    stride: int,
    layer: int,
    facet: str,
    model_id: str,
    payload: np.ndarray,
    kind: str = "descriptor",
    augmented: bool = False,
) -> Path:
    """Validate and write one field; returns the final path.

    ``payload`` is (grid_h, grid_w, dim) for descriptors or (grid_h, grid_w)
    for saliency.  The write is atomic (temp file in the target directory,
    then rename), so a reader listing the directory mid-batch never sees a
    partial file.
    """
    if kind not in ("descriptor", "saliency"):
        raise ValueError(f"unknown field kind {kind!r}")
    if facet not in FACETS:
        raise ValueError(f"facet must be one of {FACETS}, got {facet!r}")
    if layer < 0:
        raise ValueError(f"layer must be >= 0, got {layer}")
    gh, gw = grid_shape(image_h, image_w, patch, stride)

    arr = np.ascontiguousarray(payload, dtype="<f4")
    if kind == "saliency":
        if arr.ndim == 3 and arr.shape[-1] == 1:
            arr = arr[..., 0]
        if arr.shape != (gh, gw):
            raise ValueError(f"saliency shape {arr.shape}, expected {(gh, gw)}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("saliency values must lie in [0, 1]")
        dim = 1
    else:
        if arr.ndim != 3 or arr.shape[:2] != (gh, gw):
            raise ValueError(
                f"descriptor shape {arr.shape}, expected ({gh}, {gw}, dim)")
        dim = arr.shape[2]
    if not np.isfinite(arr).all():
        raise ValueError("payload contains non-finite values")

    header = {
        "kind": kind,
        "image_id": image_id,
        "image_height_px": int(image_h),
        "image_width_px": int(image_w),
        "patch_size_px": int(patch),
        "stride_px": int(stride),
        "layer_index": int(layer),
        "facet": facet,
        "model_id": model_id,
        "descriptor_dim": int(dim),
        "augmented": bool(augmented),
        "grid_h": gh,
        "grid_w": gw,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".vitd.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
            fh.write(blob)
            fh.write(arr.tobytes(order="C"))
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return path
