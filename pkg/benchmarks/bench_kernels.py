#!/usr/bin/env python3
"""Time each hot kernel on the pure-Python and compiled backends.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--quick]

The workloads mirror interactive use: a chip-scale SLIC sweep, a
segment-count LAP solve, and a UMAP layout for a tile's worth of chips.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from terralabel.kernels import pykernels

try:
    from terralabel.kernels import _core
except ImportError:
    _core = None


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def workloads(quick: bool):
    rng = np.random.default_rng(0)

    n = 60 if quick else 120
    cost = rng.uniform(0.0, 2.0, size=(n, n))
    yield f"lap_solve {n}x{n}", lambda impl: (lambda: impl.lap_solve(cost))

    h = w = 128 if quick else 256
    s = 120 if quick else 500
    iters = 3 if quick else 10
    feat = rng.normal(size=(h, w, 3))
    centers = np.column_stack([rng.normal(size=(s, 3)),
                               rng.uniform(0, h - 1, size=s),
                               rng.uniform(0, w - 1, size=s)])
    window = int(np.ceil(2.0 * np.sqrt(h * w / s)))
    yield (f"slic_iterate {h}x{w}, S={s}, {iters} iters",
           lambda impl: (lambda: impl.slic_iterate(feat, centers, 0.05,
                                                   window, iters)))

    pts = 300 if quick else 1000
    edges = pts * 15
    epochs = 50 if quick else 200
    pos = rng.normal(scale=1e-2, size=(pts, 2))
    head = rng.integers(0, pts, size=edges)
    tail = rng.integers(0, pts, size=edges)
    eps = rng.uniform(1.0, 5.0, size=edges)
    yield (f"umap_optimize {pts} pts, {edges} edges, {epochs} epochs",
           lambda impl: (lambda: impl.umap_optimize(pos.copy(), head, tail,
                                                    eps.copy(), 1.577, 0.895,
                                                    1.0, 5, 1.0, epochs, 0)))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="smaller workloads, fewer repeats")
    args = parser.parse_args()
    repeats = 2 if args.quick else 3

    name_w = 48
    print(f"{'kernel':<{name_w}} {'python':>10} {'cython':>10} {'speedup':>9}")
    for name, make in workloads(args.quick):
        t_py = _time(make(pykernels), repeats)
        if _core is None:
            print(f"{name:<{name_w}} {t_py:>9.4f}s {'n/a':>10} {'n/a':>9}")
            continue
        t_cy = _time(make(_core), repeats)
        print(f"{name:<{name_w}} {t_py:>9.4f}s {t_cy:>9.4f}s "
              f"{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
