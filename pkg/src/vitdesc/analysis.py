"""PCA over descriptor bags and per-image principal-component maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from ._blas import single_thread_blas
from .store import DescriptorField, DescriptorMatrix, FieldMeta

__all__ = ["PCAResult", "pca", "render_component_maps", "components_field"]


@dataclass(frozen=True)
class PCAResult:
    """Orthonormal components with projections and per-component variance."""

    components: np.ndarray
    projected: np.ndarray
    explained_variance: np.ndarray
    mean: np.ndarray
    degenerate: bool

    def project(self, rows: np.ndarray) -> np.ndarray:
        with single_thread_blas():
            return (np.asarray(rows, dtype=np.float64) - self.mean) @ self.components.T


def pca(matrix: DescriptorMatrix | np.ndarray, n_components: int) -> PCAResult:
    """Mean-centered PCA via SVD.

    Components are orthonormal with non-increasing explained variance; the
    largest-magnitude entry of each component is made positive so repeated
    runs render identical maps.  Zero-variance input sets the degenerate flag.
    """
    x = matrix.data if isinstance(matrix, DescriptorMatrix) else matrix
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    n, d = x.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not 1 <= n_components <= min(n, d):
        raise ValueError(f"n_components must be in [1, {min(n, d)}]")

    mean = x.mean(axis=0)
    centered = x - mean
    with single_thread_blas():
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        components = vt[:n_components]
        variance = (s[:n_components] ** 2) / (n - 1)

        flip = np.empty(n_components)
        for i in range(n_components):
            flip[i] = 1.0 if components[i][np.argmax(np.abs(components[i]))] >= 0 else -1.0
        components = components * flip[:, None]
        projected = centered @ components.T
    degenerate = bool(s.size == 0 or s[0] ** 2 / (n - 1) <= 1e-12)
    return PCAResult(components=components, projected=projected,
                     explained_variance=variance, mean=mean,
                     degenerate=degenerate)


def _normalize_01(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def render_component_maps(fields: Sequence[DescriptorField], result: PCAResult,
                          out_dir: str | Path) -> list[Path]:
    """Write per-image maps of component 1 (grayscale) and 2-4 (RGB).

    Normalization is min-max over the whole field set per component, so maps
    are comparable across images.  With fewer than 4 components the RGB map
    is skipped.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_components = result.components.shape[0]
    projections = [
        result.project(f.rows()).reshape(f.meta.grid_h, f.meta.grid_w, -1)
        for f in fields
    ]
    lows = np.min([p.min(axis=(0, 1)) for p in projections], axis=0)
    highs = np.max([p.max(axis=(0, 1)) for p in projections], axis=0)

    written = []
    for f, proj in zip(fields, projections):
        gray = _normalize_01(proj[:, :, 0], lows[0], highs[0])
        path = out / f"{f.meta.image_id}_pc1.png"
        Image.fromarray((gray * 255).round().astype(np.uint8), "L").save(path)
        written.append(path)
        if n_components >= 4:
            rgb = np.stack([
                _normalize_01(proj[:, :, c], lows[c], highs[c])
                for c in (1, 2, 3)
            ], axis=-1)
            path = out / f"{f.meta.image_id}_pc2-4.png"
            Image.fromarray((rgb * 255).round().astype(np.uint8), "RGB").save(path)
            written.append(path)
    return written


def components_field(result: PCAResult, like: FieldMeta) -> DescriptorField:
    """Pack the component vectors as a 1 x n descriptor field for reuse."""
    n, d = result.components.shape
    meta = FieldMeta(
        image_id="pca_components",
        image_height_px=1,
        image_width_px=n,
        patch_size_px=1,
        stride_px=1,
        layer_index=like.layer_index,
        facet=like.facet,
        model_id=like.model_id,
        descriptor_dim=d,
    )
    return DescriptorField(meta, result.components.reshape(1, n, d).astype(np.float32))
