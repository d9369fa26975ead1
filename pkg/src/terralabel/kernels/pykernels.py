"""Pure-Python/numpy fallback implementations of the hot kernels.

Semantics match ``_core.pyx`` exactly: the LAP solver returns the same
assignment, SLIC the same labels (up to float summation order in centroid
updates), and the UMAP layout the same coordinates bit-for-bit (both
backends run the identical splitmix64 RNG and float64 update sequence).
"""

from __future__ import annotations

import numpy as np

_INF = np.inf
_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# LAP (Hungarian) — shortest augmenting path with dual potentials
# ---------------------------------------------------------------------------


def lap_solve(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect assignment on a square cost matrix.

    Returns (col4row, total) where col4row[i] is the column assigned to
    row i. Raises ValueError on non-finite input or an infeasible matrix.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise ValueError(f"lap_solve expects a square matrix, got {cost.shape}")
    if n == 0:
        raise ValueError("lap_solve: empty cost matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("lap_solve: cost matrix contains non-finite values")

    u = np.zeros(n)
    v = np.zeros(n)
    path = np.full(n, -1, dtype=np.int64)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)

    for cur_row in range(n):
        shortest = np.full(n, _INF)
        remaining = np.ones(n, dtype=bool)
        scanned_rows: list[int] = []
        scanned_cols: list[int] = []
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            scanned_rows.append(i)
            rem = np.nonzero(remaining)[0]
            reduced = min_val + cost[i, rem] - u[i] - v[rem]
            better = reduced < shortest[rem]
            upd = rem[better]
            path[upd] = i
            shortest[upd] = reduced[better]

            s = shortest[rem]
            lowest = s.min()
            ties = rem[s == lowest]
            free = ties[row4col[ties] == -1]
            j = int(free[0]) if free.size else int(ties[0])
            min_val = float(lowest)
            if not np.isfinite(min_val):
                raise ValueError("lap_solve: infeasible cost matrix")
            if row4col[j] == -1:
                sink = j
            else:
                i = int(row4col[j])
            remaining[j] = False
            scanned_cols.append(j)

        u[cur_row] += min_val
        for r in scanned_rows:
            if r != cur_row:
                u[r] += min_val - shortest[col4row[r]]
        for c in scanned_cols:
            v[c] -= min_val - shortest[c]

        j = sink
        while True:
            r = int(path[j])
            row4col[j] = r
            col4row[r], j = j, int(col4row[r])
            if r == cur_row:
                break

    # sequential accumulation in row order, matching the compiled backend
    # bit for bit (pairwise summation would differ in the last ulp)
    total = 0.0
    for i in range(n):
        total += float(cost[i, col4row[i]])
    return col4row, total


# ---------------------------------------------------------------------------
# SLIC assignment/update sweep
# ---------------------------------------------------------------------------


def slic_iterate(feat: np.ndarray, centers: np.ndarray, spatial_scale: float,
                 window: int, iters: int) -> tuple[np.ndarray, np.ndarray]:
    """Run ``iters`` SLIC assignment + centroid-update sweeps.

    feat: [H, W, 3] working-space image (float64).
    centers: [S, 5] rows of (f0, f1, f2, row, col); modified copy returned.
    spatial_scale: multiplier on squared pixel distance (``(compactness/S)²``).
    window: half-width of the search window around each centroid, in pixels.

    Distance is ``Σ (feat − c)² + spatial_scale · ((r − cr)² + (c − cc)²)``;
    ties keep the lower centroid id (centroids scanned in ascending order
    with strict improvement). Pixels outside every window are assigned to
    the globally nearest centroid after each sweep.
    """
    feat = np.ascontiguousarray(feat, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    h, w, _ = feat.shape
    s = centers.shape[0]
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    labels = np.full((h, w), -1, dtype=np.int64)

    for _ in range(iters):
        best = np.full((h, w), _INF)
        labels.fill(-1)
        for k in range(s):
            cr, cc = centers[k, 3], centers[k, 4]
            # symmetric bounds (|r - cr| <= window) keep the candidate set
            # invariant under 90-degree rotations of the input
            r0 = max(int(np.ceil(cr - window)), 0)
            r1 = min(int(np.floor(cr + window)) + 1, h)
            c0 = max(int(np.ceil(cc - window)), 0)
            c1 = min(int(np.floor(cc + window)) + 1, w)
            if r0 >= r1 or c0 >= c1:
                continue
            patch = feat[r0:r1, c0:c1]
            dcolor = ((patch - centers[k, :3]) ** 2).sum(axis=2)
            dr = (rows[r0:r1] - cr) ** 2
            dc = (cols[c0:c1] - cc) ** 2
            dist = dcolor + spatial_scale * (dr[:, None] + dc[None, :])
            win_best = best[r0:r1, c0:c1]
            improved = dist < win_best
            win_best[improved] = dist[improved]
            labels[r0:r1, c0:c1][improved] = k

        orphan = labels < 0
        if orphan.any():
            orc, occ = np.nonzero(orphan)
            pts = feat[orc, occ]
            d = ((pts[:, None, :] - centers[None, :, :3]) ** 2).sum(axis=2)
            d += spatial_scale * ((orc[:, None] - centers[None, :, 3]) ** 2 +
                                  (occ[:, None] - centers[None, :, 4]) ** 2)
            labels[orc, occ] = d.argmin(axis=1)

        for k in range(s):
            mask = labels == k
            count = mask.sum()
            if count == 0:
                continue
            rr, cc2 = np.nonzero(mask)
            centers[k, :3] = feat[rr, cc2].mean(axis=0)
            centers[k, 3] = rr.mean()
            centers[k, 4] = cc2.mean()

    return labels, centers


# ---------------------------------------------------------------------------
# UMAP layout SGD
# ---------------------------------------------------------------------------


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _clip4(x: float) -> float:
    if x > 4.0:
        return 4.0
    if x < -4.0:
        return -4.0
    return x


def umap_optimize(positions: np.ndarray, head: np.ndarray, tail: np.ndarray,
                  epochs_per_sample: np.ndarray, a: float, b: float,
                  gamma: float, negative_sample_rate: int, initial_alpha: float,
                  n_epochs: int, seed: int) -> np.ndarray:
    """Stochastic attract/repel layout optimization (in place).

    One attractive update per due edge (both endpoints move), followed by
    ``negative_sample_rate`` repulsive updates against random vertices.
    Deterministic for a fixed seed; identical across backends.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    head = np.asarray(head, dtype=np.int64)
    tail = np.asarray(tail, dtype=np.int64)
    eps = np.asarray(epochs_per_sample, dtype=np.float64)
    n_edges = head.shape[0]
    n_vertices = pos.shape[0]
    epoch_of_next = eps.copy()
    eps_neg = eps / float(negative_sample_rate)
    epoch_of_next_neg = eps_neg.copy()
    state = (seed * 0x9E3779B97F4A7C15 + 1) & _MASK64

    for epoch in range(n_epochs):
        alpha = initial_alpha * (1.0 - epoch / float(n_epochs))
        for e in range(n_edges):
            if epoch_of_next[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            d2 = dx * dx + dy * dy
            if d2 > 0.0:
                coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2 ** b + 1.0)
                gx = _clip4(coeff * dx) * alpha
                gy = _clip4(coeff * dy) * alpha
                pos[i, 0] += gx
                pos[i, 1] += gy
                pos[j, 0] -= gx
                pos[j, 1] -= gy
            epoch_of_next[e] += eps[e]

            n_neg = int((epoch - epoch_of_next_neg[e]) / eps_neg[e])
            for _ in range(n_neg):
                state, rnd = _splitmix64(state)
                k = rnd % n_vertices
                dx = pos[i, 0] - pos[k, 0]
                dy = pos[i, 1] - pos[k, 1]
                d2 = dx * dx + dy * dy
                if d2 > 0.0:
                    coeff = (2.0 * gamma * b) / ((0.001 + d2) * (a * d2 ** b + 1.0))
                    gx = _clip4(coeff * dx)
                    gy = _clip4(coeff * dy)
                elif i == k:
                    continue
                else:
                    gx = 4.0
                    gy = 4.0
                pos[i, 0] += gx * alpha
                pos[i, 1] += gy * alpha
            epoch_of_next_neg[e] += n_neg * eps_neg[e]

    positions[:] = pos
    return positions
