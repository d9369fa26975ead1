"""UMAP 2-D projections from similarity matrices or raw embedding vectors.

Chip-level projections start from the precomputed chip similarity matrix
(distance = 1 − similarity, clamped to [0, 2]); segment-level projections
start from embedding vectors under Euclidean distance. Both go through
the same pipeline: exact KNN, smooth-kNN calibration of per-point kernel
widths, probabilistic-union symmetrization, then the attract/repel SGD
layout in ``terralabel.kernels``.

The layout is deterministic for a fixed seed: random Gaussian init
(sigma = 1e-2) rather than spectral, and a single-threaded SGD loop with
its own counter-based RNG shared bit-for-bit by both kernel backends.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import curve_fit
from scipy.spatial.distance import cdist

from . import kernels

log = logging.getLogger(__name__)

SIGMA_TOL = 1e-3
_SIGMA_FLOOR = 1e-8


class ProjectionError(ValueError):
    pass


def knn_from_distances(dist: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest neighbours per point from a dense distance matrix.

    Self is excluded; equal distances break toward the lower id. Returns
    (indices [n, k], distances [n, k]) sorted nearest-first.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.ndim != 2 or dist.shape[1] != n:
        raise ProjectionError(f"distance matrix must be square, got {dist.shape}")
    if not 1 <= k < n:
        raise ProjectionError(f"need 1 <= k < n, got k={k}, n={n}")
    masked = dist.copy()
    np.fill_diagonal(masked, np.inf)
    idx = np.argsort(masked, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(masked, idx, axis=1)


def solve_sigma(dists: np.ndarray, rho: float, target: float,
                steps: int = 64) -> tuple[float, bool]:
    """Bisect sigma so that sum_j exp(-max(0, d_j - rho)/sigma) = target.

    Returns (sigma, converged); a non-bracketable target leaves sigma at
    the last midpoint (clamped above the floor) with converged=False.
    """
    gaps = np.maximum(np.asarray(dists, dtype=np.float64) - rho, 0.0)

    def weight_sum(s: float) -> float:
        return float(np.exp(-gaps / s).sum())

    lo, hi, mid = 0.0, np.inf, 1.0
    for _ in range(steps):
        val = weight_sum(mid)
        if abs(val - target) < 1e-5:
            break
        if val > target:
            hi = mid
            mid = (lo + hi) / 2.0
        else:
            lo = mid
            mid = mid * 2.0 if np.isinf(hi) else (lo + hi) / 2.0
    sigma = max(mid, _SIGMA_FLOOR)
    return sigma, abs(weight_sum(sigma) - target) <= SIGMA_TOL


@dataclass
class FuzzyGraph:
    """Symmetrized weighted KNN graph; edges stored once with head < tail."""
    n: int
    heads: np.ndarray
    tails: np.ndarray
    weights: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray


def fuzzy_graph(neighbours: np.ndarray, distances: np.ndarray) -> FuzzyGraph:
    """Smooth-kNN weights, symmetrized by the probabilistic union a+b-ab."""
    neighbours = np.asarray(neighbours)
    distances = np.asarray(distances, dtype=np.float64)
    n, k = neighbours.shape
    target = np.log2(k) if k > 1 else 1.0
    rho = distances.min(axis=1)
    sigma = np.empty(n)
    clamped = 0
    for i in range(n):
        sigma[i], ok = solve_sigma(distances[i], rho[i], target)
        if not ok:
            clamped += 1
    if clamped:
        log.warning("fuzzy_graph: sigma bisection clamped for %d/%d points",
                    clamped, n)

    w = np.exp(-np.maximum(distances - rho[:, None], 0.0) / sigma[:, None])
    rows = np.repeat(np.arange(n), k)
    mat = sparse.coo_matrix((w.ravel(), (rows, neighbours.ravel())),
                            shape=(n, n)).tocsr()
    tr = mat.T.tocsr()
    union = mat + tr - mat.multiply(tr)
    upper = sparse.triu(union, k=1).tocoo()
    return FuzzyGraph(n, upper.row.astype(np.int64),
                      upper.col.astype(np.int64),
                      upper.data.astype(np.float64), rho, sigma)


def fit_ab(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares fit of 1/(1 + a d^2b) to the min_dist membership curve."""
    xv = np.linspace(0.0, spread * 3.0, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    (a, b), _ = curve_fit(curve, xv, yv)
    return float(a), float(b)


def optimize_layout(graph: FuzzyGraph, epochs: int = 200,
                    min_dist: float = 0.1, seed: int = 42,
                    negative_sample_rate: int = 5,
                    init: np.ndarray | None = None) -> np.ndarray:
    """SGD attract/repel layout; bit-identical for a fixed seed."""
    if graph.n < 1:
        raise ProjectionError("empty graph")
    if init is None:
        rng = np.random.default_rng(seed)
        pos = rng.normal(0.0, 1e-2, size=(graph.n, 2))
    else:
        pos = np.array(init, dtype=np.float64)
        if pos.shape != (graph.n, 2):
            raise ProjectionError(f"init shape {pos.shape} != ({graph.n}, 2)")
    if graph.weights.size == 0 or epochs == 0:
        return pos
    a, b = fit_ab(min_dist)
    w = graph.weights
    keep = w >= w.max() / float(epochs)  # edges sampled at least once
    eps = w.max() / w[keep]
    kernels.umap_optimize(pos, graph.heads[keep], graph.tails[keep], eps,
                          a, b, 1.0, negative_sample_rate, 1.0, epochs, seed)
    return pos


@dataclass
class Projection2D:
    ids: list[str]
    coords: np.ndarray  # [n, 2]
    level: str  # "chip" | "segment"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape != (len(self.ids), 2):
            raise ProjectionError(
                f"coords shape {self.coords.shape} does not match "
                f"{len(self.ids)} ids")
        if len(set(self.ids)) != len(self.ids):
            raise ProjectionError("duplicate point ids")
        if not np.all(np.isfinite(self.coords)):
            raise ProjectionError("non-finite coordinates")
        if self.level not in ("chip", "segment"):
            raise ProjectionError(f"unknown level {self.level!r}")


def _project(ids: list[str], dist: np.ndarray, level: str, n_neighbors: int,
             min_dist: float, epochs: int, seed: int) -> Projection2D:
    n = len(ids)
    if n < 2:
        raise ProjectionError(f"need at least 2 points, got {n}")
    k = min(n_neighbors, n - 1)
    idx, nd = knn_from_distances(dist, k)
    graph = fuzzy_graph(idx, nd)
    coords = optimize_layout(graph, epochs=epochs, min_dist=min_dist, seed=seed)
    return Projection2D(list(ids), coords, level,
                        {"n_neighbors": k, "min_dist": min_dist,
                         "epochs": epochs, "seed": seed})


def project_similarity(sim, n_neighbors: int = 15, min_dist: float = 0.1,
                       epochs: int = 200, seed: int = 42) -> Projection2D:
    """Chip-level projection of a SimilarityMatrix (distance = 1 − s)."""
    dist = np.clip(1.0 - np.asarray(sim.values, dtype=np.float64), 0.0, 2.0)
    np.fill_diagonal(dist, 0.0)
    return _project(sim.chip_ids, dist, "chip", n_neighbors, min_dist,
                    epochs, seed)


def project_vectors(ids: list[str], vectors: np.ndarray,
                    n_neighbors: int = 15, min_dist: float = 0.1,
                    epochs: int = 200, seed: int = 42) -> Projection2D:
    """Segment-level projection of embedding vectors (Euclidean)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] != len(ids):
        raise ProjectionError(
            f"vectors shape {vectors.shape} does not match {len(ids)} ids")
    dist = cdist(vectors, vectors)
    return _project(list(ids), dist, "segment", n_neighbors, min_dist,
                    epochs, seed)


def write_projection(proj: Projection2D, path) -> None:
    Path(path).write_text(json.dumps({
        "level": proj.level,
        "params": proj.params,
        "points": [{"id": pid, "x": float(x), "y": float(y)}
                   for pid, (x, y) in zip(proj.ids, proj.coords)],
    }))


def read_projection(path) -> Projection2D:
    raw = json.loads(Path(path).read_text())
    ids = [p["id"] for p in raw["points"]]
    coords = np.array([[p["x"], p["y"]] for p in raw["points"]], dtype=np.float64)
    if not raw["points"]:
        coords = coords.reshape(0, 2)
    return Projection2D(ids, coords, raw["level"], raw.get("params", {}))
