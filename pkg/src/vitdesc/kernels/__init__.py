"""Kernel backend selection.

The compiled extension is preferred when it built; the numpy fallback is
always available.  ``VITDESC_KERNEL=numpy|compiled`` forces a backend (used
by the benchmark and the cross-backend tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy as numpy_backend

try:
    from . import _fastcore as compiled_backend
except ImportError:
    compiled_backend = None


def available_backends() -> tuple[str, ...]:
    return ("numpy", "compiled") if compiled_backend is not None else ("numpy",)


def _select():
    forced = os.environ.get("VITDESC_KERNEL", "").strip().lower()
    if forced == "numpy":
        return numpy_backend, "numpy"
    if forced == "compiled":
        if compiled_backend is None:
            raise ImportError("VITDESC_KERNEL=compiled but the extension is not built")
        return compiled_backend, "compiled"
    if forced:
        raise ValueError(f"unknown VITDESC_KERNEL value {forced!r}")
    if compiled_backend is not None:
        return compiled_backend, "compiled"
    return numpy_backend, "numpy"


_active, BACKEND = _select()


def get_backend(name: str | None = None):
    """Backend module by name ('numpy' or 'compiled'); active one if None."""
    if name is None:
        return _active
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        if compiled_backend is None:
            raise ValueError("compiled backend is not built")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")


def _c64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def assign_nearest(points: np.ndarray, centroids: np.ndarray,
                   backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    impl = get_backend(backend)
    return impl.assign_nearest(_c64(points), _c64(centroids))


def cosine_argmax(queries: np.ndarray, bank: np.ndarray,
                  backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    impl = get_backend(backend)
    return impl.cosine_argmax(_c64(queries), _c64(bank))


def group_sums(points: np.ndarray, labels: np.ndarray, k: int,
               backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    impl = get_backend(backend)
    return impl.group_sums(_c64(points), np.ascontiguousarray(labels, dtype=np.int64), k)


def log_bin_gather(data: np.ndarray, levels: int, base: int,
                   backend: str | None = None) -> np.ndarray:
    impl = get_backend(backend)
    return impl.log_bin_gather(np.ascontiguousarray(data, dtype=np.float32), levels, base)
