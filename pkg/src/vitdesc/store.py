"""Binary container and geometry for dense patch descriptor fields.

A field is one image's grid of per-patch vectors for a single (layer, facet)
pair, produced by a strided patch extractor.  Files use the VITD container:

    magic "VITD" | version u32 LE | header length u32 LE | UTF-8 JSON header
    | row-major float32 LE payload (row, col, channel)

The JSON header carries the field metadata plus the grid dimensions, so the
payload stays a raw, bit-exact float block.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np

MAGIC = b"VITD"
FORMAT_VERSION = 1
FACETS = ("key", "query", "value", "token")

_HEADER_PREFIX = struct.Struct("<4sII")


class FieldInvariantError(ValueError):
    """A field violates its invariants (bad shape, non-finite values, ...)."""


class FieldFormatError(ValueError):
    """A file is not a valid VITD container."""


@dataclass(frozen=True)
class FieldMeta:
    """Geometry and provenance of one descriptor field.

    ``patch_size_px`` is the extractor's patch side P; ``stride_px`` the
    extraction stride s (s <= P, overlapping patches densify the grid).
    ``augmented`` marks fields that only feed clustering, never mask output.
    """

    image_id: str
    image_height_px: int
    image_width_px: int
    patch_size_px: int
    stride_px: int
    layer_index: int
    facet: str
    model_id: str
    descriptor_dim: int
    augmented: bool = False

    def __post_init__(self) -> None:
        for name in ("image_height_px", "image_width_px", "patch_size_px",
                     "stride_px", "descriptor_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise FieldInvariantError(f"{name} must be a positive integer, got {value!r}")
        if self.stride_px > self.patch_size_px:
            raise FieldInvariantError(
                f"stride_px {self.stride_px} exceeds patch_size_px {self.patch_size_px}")
        if self.layer_index < 0:
            raise FieldInvariantError(f"layer_index must be >= 0, got {self.layer_index}")
        if self.facet not in FACETS:
            raise FieldInvariantError(f"facet must be one of {FACETS}, got {self.facet!r}")
        if self.grid_h < 1 or self.grid_w < 1:
            raise FieldInvariantError(
                f"image {self.image_height_px}x{self.image_width_px} too small for "
                f"patch {self.patch_size_px}")

    @property
    def grid_h(self) -> int:
        return (self.image_height_px - self.patch_size_px) // self.stride_px + 1

    @property
    def grid_w(self) -> int:
        return (self.image_width_px - self.patch_size_px) // self.stride_px + 1


def _as_grid_array(values: np.ndarray, meta: FieldMeta,
                   channels: int | None) -> np.ndarray:
    """Grid-shaped float32 view: (H, W, channels), or (H, W) when channels is None."""
    arr = np.asarray(values, dtype=np.float32)
    if channels is None:
        if arr.ndim == 3 and arr.shape[-1] == 1:
            arr = arr[..., 0]
        expected = (meta.grid_h, meta.grid_w)
    else:
        if channels == 1 and arr.ndim == 2:
            arr = arr[..., None]
        expected = (meta.grid_h, meta.grid_w, channels)
    if arr.shape != expected:
        raise FieldInvariantError(f"data shape {arr.shape} does not match grid {expected}")
    if not np.isfinite(arr).all():
        raise FieldInvariantError("field contains non-finite values")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DescriptorField:
    """grid_h x grid_w x D float32 descriptors for one (image, layer, facet)."""

    meta: FieldMeta
    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _as_grid_array(self.data, self.meta,
                                                        self.meta.descriptor_dim))

    def rows(self) -> np.ndarray:
        """Row-major (grid_h*grid_w, D) view of the descriptors."""
        return self.data.reshape(-1, self.meta.descriptor_dim)


@dataclass(frozen=True)
class SaliencyField:
    """grid_h x grid_w scalar saliency in [0, 1] (descriptor_dim must be 1)."""

    meta: FieldMeta
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.meta.descriptor_dim != 1:
            raise FieldInvariantError("saliency fields require descriptor_dim == 1")
        arr = _as_grid_array(self.values, self.meta, None)
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise FieldInvariantError("saliency values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class LabelMask:
    """Per-patch integer labels on a field's grid; 0 is reserved for background."""

    meta: FieldMeta
    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if not np.issubdtype(arr.dtype, np.integer):
            raise FieldInvariantError(f"labels must be integers, got dtype {arr.dtype}")
        if arr.shape != (self.meta.grid_h, self.meta.grid_w):
            raise FieldInvariantError(
                f"labels shape {arr.shape} does not match grid "
                f"({self.meta.grid_h}, {self.meta.grid_w})")
        if arr.min(initial=0) < 0:
            raise FieldInvariantError("labels must be non-negative")
        arr = np.ascontiguousarray(arr, dtype=np.int32)
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def image_id(self) -> str:
        return self.meta.image_id


Field = Union[DescriptorField, SaliencyField]


def _field_payload(field_obj: Field) -> np.ndarray:
    if isinstance(field_obj, SaliencyField):
        return field_obj.values
    return field_obj.data


def _validate_values(field_obj: Field) -> None:
    payload = _field_payload(field_obj)
    if not np.isfinite(payload).all():
        raise FieldInvariantError("field contains non-finite values")
    if isinstance(field_obj, SaliencyField):
        if payload.size and (payload.min() < 0.0 or payload.max() > 1.0):
            raise FieldInvariantError("saliency values must lie in [0, 1]")


def _header_dict(field_obj: Field) -> dict:
    meta = field_obj.meta
    return {
        "kind": "saliency" if isinstance(field_obj, SaliencyField) else "descriptor",
        "image_id": meta.image_id,
        "image_height_px": meta.image_height_px,
        "image_width_px": meta.image_width_px,
        "patch_size_px": meta.patch_size_px,
        "stride_px": meta.stride_px,
        "layer_index": meta.layer_index,
        "facet": meta.facet,
        "model_id": meta.model_id,
        "descriptor_dim": meta.descriptor_dim,
        "augmented": meta.augmented,
        "grid_h": meta.grid_h,
        "grid_w": meta.grid_w,
    }


def write_field(field_obj: Field, path: str | Path) -> None:
    """Serialize a field to a VITD file.

    Refuses to write fields that violate their invariants (non-finite values,
    out-of-range saliency).
    """
    _validate_values(field_obj)
    header = json.dumps(_header_dict(field_obj), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    payload = _field_payload(field_obj)
    if payload.dtype.byteorder == ">":  # pragma: no cover - big-endian hosts only
        payload = payload.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def read_field(path: str | Path) -> Field:
    """Load and validate a VITD file, returning the stored field.

    Raises FieldFormatError on bad magic, unsupported version, header/payload
    shape mismatch or non-finite values.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_PREFIX.size:
        raise FieldFormatError(f"{path}: file shorter than the fixed header")
    magic, version, header_len = _HEADER_PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FieldFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FieldFormatError(f"{path}: unsupported format version {version}")
    header_end = _HEADER_PREFIX.size + header_len
    if header_end > len(raw):
        raise FieldFormatError(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(raw[_HEADER_PREFIX.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"{path}: malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise FieldFormatError(f"{path}: header is not a JSON object")

    try:
        kind = header.get("kind", "descriptor")
        meta = FieldMeta(
            image_id=str(header["image_id"]),
            image_height_px=int(header["image_height_px"]),
            image_width_px=int(header["image_width_px"]),
            patch_size_px=int(header["patch_size_px"]),
            stride_px=int(header["stride_px"]),
            layer_index=int(header["layer_index"]),
            facet=str(header["facet"]),
            model_id=str(header["model_id"]),
            descriptor_dim=int(header["descriptor_dim"]),
            augmented=bool(header.get("augmented", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FieldFormatError(f"{path}: invalid header: {exc}") from exc
    if kind not in ("descriptor", "saliency"):
        raise FieldFormatError(f"{path}: unknown field kind {kind!r}")
    if (int(header.get("grid_h", meta.grid_h)) != meta.grid_h
            or int(header.get("grid_w", meta.grid_w)) != meta.grid_w):
        raise FieldFormatError(f"{path}: header grid dims disagree with geometry")

    expected = meta.grid_h * meta.grid_w * meta.descriptor_dim * 4
    body = raw[header_end:]
    if len(body) != expected:
        raise FieldFormatError(
            f"{path}: payload holds {len(body)} bytes, expected {expected}")
    values = np.frombuffer(body, dtype="<f4").reshape(
        meta.grid_h, meta.grid_w, meta.descriptor_dim)
    if not np.isfinite(values).all():
        raise FieldFormatError(f"{path}: payload contains non-finite values")
    try:
        if kind == "saliency":
            return SaliencyField(meta=meta, values=values[..., 0])
        return DescriptorField(meta=meta, data=values)
    except FieldInvariantError as exc:
        raise FieldFormatError(f"{path}: {exc}") from exc


def patch_center_px(row: int, col: int, meta: FieldMeta) -> tuple[float, float]:
    """Pixel coordinates (y, x) of the center of grid cell (row, col)."""
    if not (0 <= row < meta.grid_h and 0 <= col < meta.grid_w):
        raise IndexError(
            f"cell ({row}, {col}) outside grid {meta.grid_h}x{meta.grid_w}")
    half = (meta.patch_size_px - 1) / 2.0
    return (row * meta.stride_px + half, col * meta.stride_px + half)


def _nearest_cell(coord: float, half: float, stride: int, limit: int) -> int:
    # Nearest patch center; exact midpoints resolve to the lower index.
    q = (coord - half) / stride
    idx = int(math.ceil(q - 0.5))
    return min(max(idx, 0), limit - 1)


def pixel_to_patch(y: float, x: float, meta: FieldMeta) -> tuple[int, int]:
    """Grid cell whose patch center is nearest to pixel (y, x); clamped to the grid."""
    if not (0 <= y < meta.image_height_px and 0 <= x < meta.image_width_px):
        raise ValueError(
            f"pixel ({y}, {x}) outside image "
            f"{meta.image_height_px}x{meta.image_width_px}")
    half = (meta.patch_size_px - 1) / 2.0
    return (_nearest_cell(y, half, meta.stride_px, meta.grid_h),
            _nearest_cell(x, half, meta.stride_px, meta.grid_w))


def pixel_to_patch_grid(ys: np.ndarray, xs: np.ndarray, meta: FieldMeta) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pixel_to_patch over coordinate arrays (no bounds check)."""
    half = (meta.patch_size_px - 1) / 2.0
    rows = np.ceil((np.asarray(ys, dtype=np.float64) - half) / meta.stride_px - 0.5)
    cols = np.ceil((np.asarray(xs, dtype=np.float64) - half) / meta.stride_px - 0.5)
    rows = np.clip(rows, 0, meta.grid_h - 1).astype(np.int64)
    cols = np.clip(cols, 0, meta.grid_w - 1).astype(np.int64)
    return rows, cols


@dataclass(frozen=True)
class DescriptorMatrix:
    """Stacked bag of descriptors with per-row (image, row, col) provenance.

    Row order is deterministic: fields in input order, cells row-major.
    """

    data: np.ndarray
    image_ids: tuple[str, ...]
    field_index: np.ndarray
    grid_rows: np.ndarray
    grid_cols: np.ndarray

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def provenance(self, i: int) -> tuple[str, int, int]:
        return (self.image_ids[self.field_index[i]],
                int(self.grid_rows[i]), int(self.grid_cols[i]))

    def iter_provenance(self) -> Iterator[tuple[str, int, int]]:
        for i in range(self.n):
            yield self.provenance(i)

    def row_slice_of_field(self, index: int) -> slice:
        start = int(np.searchsorted(self.field_index, index, side="left"))
        stop = int(np.searchsorted(self.field_index, index, side="right"))
        return slice(start, stop)


def stack_fields(fields: Sequence[DescriptorField]) -> DescriptorMatrix:
    """Concatenate fields into one bag-of-descriptors matrix."""
    if not fields:
        raise ValueError("stack_fields requires at least one field")
    dim = fields[0].meta.descriptor_dim
    for f in fields:
        if f.meta.descriptor_dim != dim:
            raise ValueError(
                f"descriptor dim mismatch: {f.meta.descriptor_dim} vs {dim}")
    blocks = [f.rows() for f in fields]
    counts = [b.shape[0] for b in blocks]
    field_index = np.repeat(np.arange(len(fields), dtype=np.int32), counts)
    rows = np.concatenate([
        np.repeat(np.arange(f.meta.grid_h, dtype=np.int32), f.meta.grid_w)
        for f in fields
    ])
    cols = np.concatenate([
        np.tile(np.arange(f.meta.grid_w, dtype=np.int32), f.meta.grid_h)
        for f in fields
    ])
    data = np.ascontiguousarray(np.concatenate(blocks, axis=0))
    data.flags.writeable = False
    return DescriptorMatrix(
        data=data,
        image_ids=tuple(f.meta.image_id for f in fields),
        field_index=field_index,
        grid_rows=rows,
        grid_cols=cols,
    )


def with_descriptor_dim(meta: FieldMeta, dim: int) -> FieldMeta:
    """Copy of meta with a different descriptor dimension."""
    return replace(meta, descriptor_dim=dim)
