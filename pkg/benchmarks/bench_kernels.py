"""Compare the compiled kernel backend against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--quick]

Each op is timed over several repeats (best-of) on sizes chosen to resemble
real descriptor workloads, and both backends are checked for agreement on
every input before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from vitdesc import kernels


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def check_agreement(results_a, results_b, op: str) -> None:
    for a, b in zip(results_a, results_b):
        if not np.array_equal(np.asarray(a), np.asarray(b)):
            if not np.allclose(a, b, rtol=0, atol=1e-10):
                raise SystemExit(f"backend mismatch in {op}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true",
                        help="smaller sizes, fewer repeats")
    args = parser.parse_args()

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled backend unavailable; timing numpy only\n")

    scale = 0.2 if args.quick else 1.0
    repeats = 3 if args.quick else 5
    n = int(20000 * scale)
    d = 128
    k = 16
    rng = np.random.default_rng(0)
    points = rng.normal(size=(n, d))
    centroids = rng.normal(size=(k, d))
    labels = rng.integers(0, k, size=n)
    queries = rng.normal(size=(int(2000 * scale), d))
    bank = rng.normal(size=(int(2000 * scale), d))
    q_unit = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    b_unit = bank / np.linalg.norm(bank, axis=1, keepdims=True)
    side = int(40 * max(scale, 0.5))
    grid = rng.normal(size=(side, side, 64))

    cases = {
        f"assign_nearest ({n}x{d}, k={k})":
            lambda be: kernels.assign_nearest(points, centroids, backend=be),
        f"group_sums ({n}x{d}, k={k})":
            lambda be: kernels.group_sums(points, labels, k, backend=be),
        f"cosine_argmax ({queries.shape[0]}x{d} vs {bank.shape[0]})":
            lambda be: kernels.cosine_argmax(q_unit, b_unit, backend=be),
        f"log_bin_gather ({side}x{side}x64, levels=2)":
            lambda be: kernels.log_bin_gather(grid, 2, 2, backend=be),
    }

    width = max(len(name) for name in cases)
    header = f"{'op'.ljust(width)}  " + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for name, fn in cases.items():
        if len(backends) == 2:
            check_agreement(fn("numpy"), fn("compiled"), name)
        timings = [best_of(lambda: fn(be), repeats) for be in backends]
        row = f"{name.ljust(width)}  " + "".join(f"{t * 1e3:>10.2f}ms" for t in timings)
        if len(timings) == 2:
            row += f"{timings[0] / timings[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
