"""Single-threaded BLAS sections for bit-reproducible linear algebra.

Multi-threaded LAPACK reductions (SVD, least squares, large matmuls) change
their low-order bits with the thread count.  Outputs of this package are
contracted to be bit-identical across reruns regardless of threading, so the
few dense solves run inside a single-thread BLAS window.
"""

from __future__ import annotations

from contextlib import contextmanager

from threadpoolctl import threadpool_limits


@contextmanager
def single_thread_blas():
    with threadpool_limits(limits=1, user_api="blas"):
        yield
