"""Hungarian matching between segment-embedding sets and chip similarity.

Chips are compared by matching their segment embeddings one-to-one with
the Hungarian algorithm under cost 1 − cosine, then averaging the cosine
over matched pairs. Matching ignores geographic layout entirely, which is
what makes the comparison robust to rotation and reshuffling of a scene.

Unequal node counts are handled by padding the smaller side with
sentinel-cost dummies that are excluded from the mean; this makes the
score for S_A != S_B mildly asymmetric, so every unordered pair is
computed exactly once in canonical (lower chip id first) order.
"""

from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

_SENTINEL = 1e6


class MatchError(ValueError):
    pass


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]  # (row in A, column in B), one-to-one
    total_cost: float


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost one-to-one assignment of min(R, C) pairs.

    Rectangular matrices are padded to square with a large sentinel;
    dummy pairs never appear in the result.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise MatchError(f"cost matrix must be 2-D and non-empty, got shape "
                         f"{cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise MatchError("cost matrix contains non-finite values")
    r, c = cost.shape
    n = max(r, c)
    padded = np.full((n, n), _SENTINEL, dtype=np.float64)
    padded[:r, :c] = cost
    col4row, _ = kernels.lap_solve(padded)
    pairs = [(i, int(col4row[i])) for i in range(r) if col4row[i] < c]
    total = float(sum(cost[i, j] for i, j in pairs))
    return Assignment(pairs, total)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; zero-norm rows yield 0 (and a log line)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    dead = int((na == 0.0).sum() + (nb == 0.0).sum())
    if dead:
        log.warning("cosine_matrix: %d zero-norm embedding rows treated as "
                    "similarity 0", dead)
    ua = np.divide(a, na[:, None], out=np.zeros_like(a), where=na[:, None] > 0)
    ub = np.divide(b, nb[:, None], out=np.zeros_like(b), where=nb[:, None] > 0)
    return ua @ ub.T


def chip_similarity(emb_a: np.ndarray, emb_b: np.ndarray) -> float:
    """Mean cosine similarity over Hungarian-matched segment pairs."""
    emb_a = np.asarray(emb_a)
    emb_b = np.asarray(emb_b)
    if emb_a.ndim != 2 or emb_b.ndim != 2 or emb_a.shape[1] != emb_b.shape[1]:
        raise MatchError(f"embedding dimensions differ: {emb_a.shape} vs "
                         f"{emb_b.shape}")
    cos = cosine_matrix(emb_a, emb_b)
    assignment = hungarian(1.0 - cos)
    matched = np.array([cos[i, j] for i, j in assignment.pairs])
    return float(matched.mean())


@dataclass
class SimilarityMatrix:
    chip_ids: list[str]
    values: np.ndarray  # [n, n] float32, symmetric, unit diagonal

    def pair(self, a: str, b: str) -> float:
        ia = self.chip_ids.index(a)
        ib = self.chip_ids.index(b)
        return float(self.values[ia, ib])


def similarity_matrix(embeddings: dict[str, np.ndarray],
                      workers: int | None = None) -> SimilarityMatrix:
    """All-pairs chip similarity over a chip_id -> [S, d] embedding dict.

    Each unordered pair is computed once (lower id first) in a thread
    pool; the symmetric matrix is assembled by the caller thread.
    """
    if len(embeddings) < 2:
        raise MatchError(f"need at least 2 chips, got {len(embeddings)}")
    ids = sorted(embeddings)
    dims = {np.asarray(embeddings[i]).shape[1] for i in ids}
    if len(dims) > 1:
        raise MatchError(f"mixed embedding dimensions: {sorted(dims)}")
    n = len(ids)
    values = np.eye(n, dtype=np.float32)
    tasks = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def compute(pair):
        i, j = pair
        return i, j, chip_similarity(embeddings[ids[i]], embeddings[ids[j]])

    if workers is None or workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(compute, tasks))
    else:
        results = [compute(t) for t in tasks]
    for i, j, sim in results:
        values[i, j] = values[j, i] = np.float32(sim)
    return SimilarityMatrix(ids, values)


# ---------------------------------------------------------------------------
# SIMM file format: magic, u32 n, id table, upper triangle (with diagonal)
# ---------------------------------------------------------------------------

_MAGIC = b"SIMM"


def write_simm(sim: SimilarityMatrix, path) -> None:
    n = len(sim.chip_ids)
    parts = [_MAGIC, struct.pack("<I", n)]
    for cid in sim.chip_ids:
        raw = cid.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    iu = np.triu_indices(n)
    parts.append(np.ascontiguousarray(sim.values[iu], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_simm(path) -> SimilarityMatrix:
    blob = Path(path).read_bytes()
    if blob[:4] != _MAGIC:
        raise MatchError(f"{path}: not a SIMM file")
    (n,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    ids = []
    for _ in range(n):
        (length,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        ids.append(blob[offset:offset + length].decode("utf-8"))
        offset += length
    count = n * (n + 1) // 2
    tri = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    values = np.zeros((n, n), dtype=np.float32)
    iu = np.triu_indices(n)
    values[iu] = tri
    values.T[iu] = tri
    return SimilarityMatrix(ids, values)
