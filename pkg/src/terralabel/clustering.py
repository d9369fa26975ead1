"""Fuzzy C-means over subsampled pixel spectra.

Spectra are z-scored per band before clustering; the fitted model keeps the
moments so prediction applies the same transform. Memberships follow the
standard FCM update with fuzziness m (u_ik ∝ d_ik^(-2/(m-1))), centers are
membership^m weighted means, and seeding uses k-means++ with a fixed seed so
a fit is reproducible bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

DEFAULT_FUZZINESS = 2.0
DEFAULT_STRIDE = 56


class ClusteringError(ValueError):
    pass


def subsample_pixels(data: np.ndarray, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """Every stride-th pixel of a [bands, H, W] raster in row-major order.

    Returns [ceil(H*W / stride), bands] float32 spectra.
    """
    bands = data.shape[0]
    flat = data.reshape(bands, -1)
    return np.ascontiguousarray(flat[:, ::stride].T, dtype=np.float32)


def sample_store(store, stride: int = DEFAULT_STRIDE, split: str = "train") -> np.ndarray:
    """Concatenated per-chip subsamples for one split of a chip store."""
    parts = [subsample_pixels(store.load_chip(cid).data, stride)
             for cid in store.chip_ids(split=split)]
    if not parts:
        raise ClusteringError(f"store has no chips in split {split!r}")
    return np.concatenate(parts, axis=0)


@dataclass
class FCMModel:
    n_classes: int
    m: float
    band_mean: np.ndarray  # [bands]
    band_std: np.ndarray   # [bands]
    centers: np.ndarray    # [C, bands], z-scored space
    objective: list[float] = field(default_factory=list)
    n_iter: int = 0

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({
            "n_classes": self.n_classes,
            "m": self.m,
            "band_mean": [float(x) for x in self.band_mean],
            "band_std": [float(x) for x in self.band_std],
            "centers": [[float(x) for x in row] for row in self.centers],
            "objective": self.objective,
            "n_iter": self.n_iter,
        }, indent=1))

    @classmethod
    def load(cls, path) -> "FCMModel":
        raw = json.loads(Path(path).read_text())
        return cls(raw["n_classes"], raw["m"],
                   np.asarray(raw["band_mean"], dtype=np.float64),
                   np.asarray(raw["band_std"], dtype=np.float64),
                   np.asarray(raw["centers"], dtype=np.float64),
                   list(raw["objective"]), raw["n_iter"])


def _zscore(X: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (X.astype(np.float64) - mean) / std


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D^2-weighted draws after a uniform first pick."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:  # all points coincide with chosen centers
            centers[i:] = centers[0]
            break
        centers[i] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
    return centers


def fcm_memberships(Xz: np.ndarray, centers: np.ndarray, m: float) -> np.ndarray:
    """[n, C] membership matrix; rows sum to 1, zero distance gives one-hot."""
    d2 = cdist(Xz, centers, "sqeuclidean")
    with np.errstate(divide="ignore", invalid="ignore"):
        power = d2 ** (-1.0 / (m - 1.0))
        U = power / power.sum(axis=1, keepdims=True)
    zero = d2 <= 0.0
    rows = zero.any(axis=1)
    if rows.any():  # points sitting exactly on >=1 center
        hit = zero[rows].astype(np.float64)
        U[rows] = hit / hit.sum(axis=1, keepdims=True)
    return U


def fcm_objective(Xz: np.ndarray, centers: np.ndarray, U: np.ndarray, m: float) -> float:
    return float(np.sum(U ** m * cdist(Xz, centers, "sqeuclidean")))


def fcm_fit(X: np.ndarray, n_classes: int, m: float = DEFAULT_FUZZINESS,
            max_iter: int = 300, tol: float = 1e-4, seed: int = 0) -> FCMModel:
    """Fit fuzzy C-means to [n, bands] spectra.

    Stops when the largest center coordinate shift drops below tol. The
    recorded objective J(U_t, C_t) is non-increasing by construction of the
    alternating updates.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < n_classes:
        raise ClusteringError(
            f"need at least {n_classes} spectra of shape [n, bands], got {X.shape}")
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), 1e-6)
    Xz = _zscore(X, mean, std)

    rng = np.random.default_rng(seed)
    centers = _kmeanspp(Xz, n_classes, rng)
    objective: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        U = fcm_memberships(Xz, centers, m)
        objective.append(fcm_objective(Xz, centers, U, m))
        Um = U ** m
        weights = Um.sum(axis=0)
        new_centers = (Um.T @ Xz) / np.maximum(weights, 1e-12)[:, None]
        shift = float(np.max(np.abs(new_centers - centers)))
        centers = new_centers
        if shift < tol:
            break
    return FCMModel(n_classes, m, mean, std, centers, objective, it)


def fcm_predict(model: FCMModel, X: np.ndarray) -> np.ndarray:
    """Memberships [n, C] for new spectra under a fitted model."""
    Xz = _zscore(np.asarray(X, dtype=np.float64), model.band_mean, model.band_std)
    return fcm_memberships(Xz, model.centers, model.m)


def hard_labels(memberships: np.ndarray) -> np.ndarray:
    return np.argmax(memberships, axis=1)


def predict_chip(model: FCMModel, chip_data: np.ndarray) -> np.ndarray:
    """Per-pixel membership maps [C, H, W] for a [bands, H, W] chip."""
    bands, h, w = chip_data.shape
    U = fcm_predict(model, chip_data.reshape(bands, -1).T)
    return U.T.reshape(model.n_classes, h, w).astype(np.float32)
