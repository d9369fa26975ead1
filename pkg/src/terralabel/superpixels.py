"""SLIC superpixel segmentation of chips.

The working space is the first three principal components of the chip's
bands, each scaled to unit variance, so all spectral information feeds the
colour term without hand-picking channels. Seeds start on a centred
√N-spaced grid; assignment sweeps minimise colour² + (compactness/S)²·pixel²
within a 2S window (kernels.slic_iterate). Afterwards connectivity is
enforced: each 4-connected component becomes a candidate segment and
components under 25% of the nominal cell area merge into their largest
neighbour.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels

SEGM_MAGIC = b"SEGM"
SEGM_VERSION = 1
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.int8)


class SuperpixelError(ValueError):
    pass


@dataclass
class SegmentInfo:
    id: int
    pixel_count: int
    centroid_rc: tuple[float, float]
    bbox: tuple[int, int, int, int]  # r0, c0, r1, c1 inclusive


@dataclass
class SegmentMap:
    labels: np.ndarray  # [H, W] int32, ids dense 0..S-1
    segments: list[SegmentInfo]

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def pca_working_space(chip_data: np.ndarray) -> np.ndarray:
    """[H, W, 3] projection onto the top principal components.

    All three components share one scale factor (the leading component's
    standard deviation), so the dominant spectral contrast maps to unit
    variance while weaker directions keep their relative magnitude —
    per-component whitening would blow pure-noise directions up to signal
    scale. Components whose eigenvector's largest-magnitude loading is
    negative are flipped, making the projection deterministic. A constant
    chip projects to all zeros.
    """
    bands, h, w = chip_data.shape
    X = chip_data.reshape(bands, -1).T.astype(np.float64)
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / max(X.shape[0] - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][: min(3, bands)]
    V = eigvecs[:, order]
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    V = V * np.where(flip == 0, 1.0, flip)
    proj = Xc @ V
    scale = proj[:, 0].std()
    proj = proj / max(scale, 1e-6)
    out = np.zeros((h * w, 3), dtype=np.float64)
    out[:, : proj.shape[1]] = proj
    return out.reshape(h, w, 3)


def _seed_grid(h: int, w: int, n_segments: int) -> np.ndarray:
    """Centred seed coordinates [(r, c)] on an approximately √N-spaced grid.

    Cell centres (i+0.5)·H/nr are shifted by -0.5 into pixel-centre
    coordinates, making the grid symmetric under 90-degree rotations of the
    pixel lattice (x -> H-1-x).
    """
    interval = np.sqrt(h * w / n_segments)
    nr = max(1, int(round(h / interval)))
    nc = max(1, int(round(w / interval)))
    rows = (np.arange(nr) + 0.5) * h / nr - 0.5
    cols = (np.arange(nc) + 0.5) * w / nc - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def _bilinear_sample(feat: np.ndarray, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Bilinear lookup of [H, W, 3] features at fractional (r, c) positions.

    Interpolation (rather than nearest-pixel rounding) keeps seed colours
    symmetric under rotation even when a coordinate lands exactly between
    two pixels.
    """
    h, w, _ = feat.shape
    r = np.clip(r, 0.0, h - 1.0)
    c = np.clip(c, 0.0, w - 1.0)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[:, None]
    return (feat[r0, c0] * (1 - fr) * (1 - fc) + feat[r1, c0] * fr * (1 - fc)
            + feat[r0, c1] * (1 - fr) * fc + feat[r1, c1] * fr * fc)


def _enforce_connectivity(labels: np.ndarray, min_size: int,
                          feat: np.ndarray | None = None) -> np.ndarray:
    """Split segments into 4-connected components; absorb tiny ones.

    Every component below min_size picks a merge target from the *initial*
    component sizes — its largest neighbour, with ties broken by nearest
    mean working-space colour when ``feat`` is given. Targets are then
    applied in one union pass, so the result is a pure function of the
    partition (independent of component enumeration order, which keeps the
    whole operation rotation-equivariant). Returns dense labels ordered by
    first raster appearance.
    """
    h, w = labels.shape
    comp = np.zeros((h, w), dtype=np.int64)
    next_id = 0
    for value in np.unique(labels):
        mask = labels == value
        lab, n = ndimage.label(mask, structure=_CROSS)
        comp[mask] = lab[mask] + next_id - 1
        next_id += n

    sizes = np.bincount(comp.ravel(), minlength=next_id).astype(np.int64)

    if feat is not None:
        flat = comp.ravel()
        colours = np.stack([
            np.bincount(flat, weights=feat[:, :, ch].ravel(), minlength=next_id)
            for ch in range(feat.shape[2])], axis=1) / sizes[:, None]

    # adjacency over 4-neighbour pixel edges
    pairs = []
    a, b = comp[:-1, :].ravel(), comp[1:, :].ravel()
    keep = a != b
    pairs.append(np.stack([a[keep], b[keep]], axis=1))
    a, b = comp[:, :-1].ravel(), comp[:, 1:].ravel()
    keep = a != b
    pairs.append(np.stack([a[keep], b[keep]], axis=1))
    edges = np.unique(np.sort(np.concatenate(pairs), axis=1), axis=0)
    adjacency: list[list[int]] = [[] for _ in range(next_id)]
    for u, v in edges:
        adjacency[u].append(int(v))
        adjacency[v].append(int(u))

    parent = np.arange(next_id)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return int(x)

    for c in range(next_id):
        if sizes[c] >= min_size or not adjacency[c]:
            continue
        neigh = adjacency[c]
        top = max(sizes[n] for n in neigh)
        cands = [n for n in neigh if sizes[n] == top]
        if len(cands) > 1 and feat is not None:
            dist = [float(((colours[c] - colours[n]) ** 2).sum()) for n in cands]
            best = min(dist)
            cands = [n for n, d in zip(cands, dist) if d == best]
        ra, rb = find(c), find(cands[0])
        if ra != rb:
            parent[ra] = rb

    resolved = np.array([find(c) for c in range(next_id)])
    merged = resolved[comp]
    # dense relabel by first appearance in raster order
    flat = merged.ravel()
    first = np.full(next_id, -1, dtype=np.int64)
    order = np.unique(flat, return_index=True)[1]
    for rank, pos in enumerate(np.sort(order)):
        first[flat[pos]] = rank
    return first[merged].astype(np.int32)


def segment_map_from_labels(labels: np.ndarray) -> SegmentMap:
    labels = np.asarray(labels, dtype=np.int32)
    h, w = labels.shape
    n = int(labels.max()) + 1
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n)
    if np.any(counts == 0):
        raise SuperpixelError("segment ids are not dense")
    rr = np.repeat(np.arange(h), w)
    cc = np.tile(np.arange(w), h)
    sum_r = np.bincount(flat, weights=rr, minlength=n)
    sum_c = np.bincount(flat, weights=cc, minlength=n)
    boxes = ndimage.find_objects(labels + 1)
    segments = []
    for sid in range(n):
        sl = boxes[sid]
        segments.append(SegmentInfo(
            sid, int(counts[sid]),
            (float(sum_r[sid] / counts[sid]), float(sum_c[sid] / counts[sid])),
            (sl[0].start, sl[1].start, sl[0].stop - 1, sl[1].stop - 1)))
    return SegmentMap(labels, segments)


def slic(chip_data: np.ndarray, n_segments: int = 500,
         compactness: float = 1.0, iters: int = 10) -> SegmentMap:
    """Segment a [bands, H, W] chip into ~n_segments superpixels.

    compactness trades colour against spatial proximity; 1.0 suits the
    unit-variance working space (a two-tone split is exactly 2 sigma apart
    there, so much stiffer values would let the grid override boundaries).
    """
    bands, h, w = chip_data.shape
    if n_segments < 2:
        raise SuperpixelError("n_segments must be >= 2")
    if n_segments > h * w:
        raise SuperpixelError(f"n_segments={n_segments} exceeds pixel count {h * w}")

    feat = pca_working_space(chip_data)
    seeds = _seed_grid(h, w, n_segments)
    centers = np.empty((seeds.shape[0], 5), dtype=np.float64)
    centers[:, :3] = _bilinear_sample(feat, seeds[:, 0], seeds[:, 1])
    centers[:, 3] = seeds[:, 0]
    centers[:, 4] = seeds[:, 1]

    interval = np.sqrt(h * w / n_segments)
    spatial_scale = (compactness / interval) ** 2
    window = int(np.ceil(2.0 * interval))
    labels, _ = kernels.slic_iterate(feat, centers, spatial_scale, window, iters)

    min_size = max(1, int(0.25 * h * w / n_segments))
    dense = _enforce_connectivity(labels, min_size, feat)
    return segment_map_from_labels(dense)


def segment_means(seg: SegmentMap, maps: np.ndarray) -> np.ndarray:
    """Per-segment mean of each activation channel: [S, C] float32."""
    channels = maps.shape[0]
    if maps.shape[1:] != seg.labels.shape:
        raise SuperpixelError(
            f"activation dims {maps.shape[1:]} != label dims {seg.labels.shape}")
    flat = seg.labels.ravel()
    counts = np.bincount(flat, minlength=seg.n_segments)
    assert np.all(counts > 0), "empty segment violates the partition invariant"
    out = np.empty((seg.n_segments, channels), dtype=np.float64)
    for ch in range(channels):
        out[:, ch] = np.bincount(flat, weights=maps[ch].ravel().astype(np.float64),
                                 minlength=seg.n_segments) / counts
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# SEGM file format
# ---------------------------------------------------------------------------


def write_segm(seg: SegmentMap, path) -> None:
    path = Path(path)
    h, w = seg.labels.shape
    blob = SEGM_MAGIC + struct.pack("<HHHI", SEGM_VERSION, h, w, seg.n_segments)
    blob += np.ascontiguousarray(seg.labels, dtype="<u4").tobytes()
    path.write_bytes(blob)
    path.with_suffix(".json").write_text(json.dumps({
        "segments": [{
            "id": s.id,
            "pixel_count": s.pixel_count,
            "centroid_rc": [s.centroid_rc[0], s.centroid_rc[1]],
            "bbox": list(s.bbox),
        } for s in seg.segments],
    }))


def read_segm(path) -> SegmentMap:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != SEGM_MAGIC:
        raise SuperpixelError(f"{path}: bad magic {blob[:4]!r}")
    version, h, w, count = struct.unpack_from("<HHHI", blob, 4)
    if version != SEGM_VERSION:
        raise SuperpixelError(f"{path}: unsupported version {version}")
    labels = np.frombuffer(blob, dtype="<u4", offset=14).reshape(h, w).astype(np.int32)
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        raw = json.loads(sidecar.read_text())
        segments = [SegmentInfo(s["id"], s["pixel_count"],
                                (s["centroid_rc"][0], s["centroid_rc"][1]),
                                tuple(s["bbox"])) for s in raw["segments"]]
        if len(segments) != count:
            raise SuperpixelError(f"{path}: sidecar lists {len(segments)} != {count}")
        return SegmentMap(labels, segments)
    return segment_map_from_labels(labels)
