"""Segment-pair similarity measures and the two graph-evaluation protocols.

Four measures compare a segment against a matched partner: GLCM statistic
dissimilarity (lower better), uniform-LBP histogram intersection (higher),
global-form SSIM (higher) and the spectral angle between mean spectra
(lower). The feature-based protocol pairs every segment with its nearest
neighbour in embedding space; the context-aware protocol additionally
Hungarian-matches the two segments' 8 spatial neighbourhoods and averages
over the resulting 9 pairs.

Absolute GLCM magnitudes depend on the statistic set; here the composite
is |contrast/(G−1)² difference| + |homogeneity difference| + |energy
difference| over symmetric normalized co-occurrence matrices with offsets
(0,1) and (1,0) at G=32 joint-range grey levels.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .matching import hungarian

log = logging.getLogger(__name__)

GLCM_LEVELS = 32
N_SPATIAL_NEIGHBOURS = 8
LAYER_STAGES = ("graph-generation", "gcn-layer-1", "gcn-layer-2")


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


def quantize_pair(a: np.ndarray, b: np.ndarray,
                  levels: int = GLCM_LEVELS) -> tuple[np.ndarray, np.ndarray]:
    """Quantize two patches to shared grey levels over their joint range."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    span = hi - lo
    if span <= 0.0:
        return (np.zeros(a.shape, np.int64), np.zeros(b.shape, np.int64))
    qa = np.minimum((a - lo) / span * levels, levels - 1).astype(np.int64)
    qb = np.minimum((b - lo) / span * levels, levels - 1).astype(np.int64)
    return qa, qb


def glcm_matrix(quantized: np.ndarray, levels: int = GLCM_LEVELS) -> np.ndarray:
    """Symmetric normalized co-occurrence matrix, offsets (0,1) and (1,0)."""
    q = np.asarray(quantized)
    if q.ndim != 2 or q.size < 2:
        raise EvalError(f"degenerate patch {q.shape}: no pixel pairs")
    mat = np.zeros((levels, levels), dtype=np.float64)
    for sl_a, sl_b in ((np.s_[:, :-1], np.s_[:, 1:]),
                       (np.s_[:-1, :], np.s_[1:, :])):
        left = q[sl_a].ravel()
        right = q[sl_b].ravel()
        np.add.at(mat, (left, right), 1.0)
        np.add.at(mat, (right, left), 1.0)
    total = mat.sum()
    if total == 0.0:
        raise EvalError(f"degenerate patch {q.shape}: no pixel pairs")
    return mat / total


def _glcm_stats(mat: np.ndarray) -> np.ndarray:
    g = mat.shape[0]
    i, j = np.indices((g, g))
    contrast = (mat * (i - j) ** 2).sum() / (g - 1) ** 2
    homogeneity = (mat / (1.0 + np.abs(i - j))).sum()
    energy = (mat * mat).sum()
    return np.array([contrast, homogeneity, energy])


def glcm_dissimilarity(a: np.ndarray, b: np.ndarray,
                       levels: int = GLCM_LEVELS) -> float:
    """Sum of |Δ| over (scaled contrast, homogeneity, energy); 0 = identical."""
    qa, qb = quantize_pair(a, b, levels)
    stats_a = _glcm_stats(glcm_matrix(qa, levels))
    stats_b = _glcm_stats(glcm_matrix(qb, levels))
    return float(np.abs(stats_a - stats_b).sum())


def _uniform_lut() -> np.ndarray:
    lut = np.empty(256, dtype=np.int64)
    for code in range(256):
        bits = [(code >> i) & 1 for i in range(8)]
        transitions = sum(bits[i] != bits[(i + 1) % 8] for i in range(8))
        lut[code] = sum(bits) if transitions <= 2 else 9
    return lut


_LBP_LUT = _uniform_lut()
# clockwise from east; integer ring (no interpolation at the diagonals)
_LBP_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1),
                (0, -1), (-1, -1), (-1, 0), (-1, 1))


def lbp_histogram(img: np.ndarray) -> np.ndarray:
    """Normalized 10-bin rotation-invariant uniform LBP(8,1) histogram."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise EvalError(f"patch {img.shape} too small for LBP (needs 3x3)")
    center = img[1:-1, 1:-1]
    codes = np.zeros(center.shape, dtype=np.int64)
    for bit, (dr, dc) in enumerate(_LBP_OFFSETS):
        neigh = img[1 + dr:img.shape[0] - 1 + dr, 1 + dc:img.shape[1] - 1 + dc]
        codes |= (neigh >= center).astype(np.int64) << bit
    hist = np.bincount(_LBP_LUT[codes].ravel(), minlength=10).astype(np.float64)
    return hist / hist.sum()


def lbp_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Histogram intersection of uniform LBP histograms, in [0, 1]."""
    return float(np.minimum(lbp_histogram(a), lbp_histogram(b)).sum())


def ssim(a: np.ndarray, b: np.ndarray, data_range: float | None = None) -> float:
    """Global-statistics SSIM; unequal patches compare their common crop."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise EvalError("ssim expects 2-D patches")
    h = min(a.shape[0], b.shape[0])
    w = min(a.shape[1], b.shape[1])
    if h < 1 or w < 1:
        raise EvalError("empty patch")
    x = a[:h, :w].ravel()
    y = b[:h, :w].ravel()
    if data_range is None:
        data_range = float(max(x.max(), y.max()) - min(x.min(), y.min()))
    L = max(data_range, 1e-6)
    c1 = (0.01 * L) ** 2
    c2 = (0.03 * L) ** 2
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    return float((2 * mx * my + c1) * (2 * cov + c2)
                 / ((mx * mx + my * my + c1) * (vx + vy + c2)))


def sam(spec_a: np.ndarray, spec_b: np.ndarray) -> float:
    """Spectral angle arccos(<a,b>/|a||b|) in [0, π]; zero norm → π, logged."""
    a = np.asarray(spec_a, dtype=np.float64).ravel()
    b = np.asarray(spec_b, dtype=np.float64).ravel()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        log.warning("sam: zero-norm spectrum, returning the error value π")
        return float(np.pi)
    return float(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0)))


# ---------------------------------------------------------------------------
# samples and reports
# ---------------------------------------------------------------------------


@dataclass
class SegmentSample:
    """Everything the protocols need to know about one segment."""
    id: str
    chip_id: str
    embedding: np.ndarray    # feature-space vector
    patch: np.ndarray        # display-band bbox crop (GLCM, LBP)
    ssim_patch: np.ndarray   # first-PCA-component bbox crop
    spectrum: np.ndarray     # mean spectrum over the segment mask
    centroid: tuple[float, float]


def build_samples(chip_id: str, chip_data: np.ndarray, seg,
                  embeddings: np.ndarray,
                  display_band: int = 0) -> list[SegmentSample]:
    """Per-segment evaluation samples for one chip.

    Bounding boxes are grown to at least 3x3 (clamped to the chip) so the
    texture measures never see a degenerate patch.
    """
    from .superpixels import pca_working_space

    bands, h, w = chip_data.shape
    pc1 = pca_working_space(chip_data)[:, :, 0]
    band = chip_data[display_band].astype(np.float64)
    flat = chip_data.reshape(bands, -1)
    samples = []
    for info in seg.segments:
        r0, c0, r1, c1 = info.bbox
        while r1 - r0 < 3:
            r0, r1 = max(r0 - 1, 0), min(r1 + 1, h)
        while c1 - c0 < 3:
            c0, c1 = max(c0 - 1, 0), min(c1 + 1, w)
        mask = (seg.labels == info.id).ravel()
        samples.append(SegmentSample(
            id=f"{chip_id}#{info.id}",
            chip_id=chip_id,
            embedding=np.asarray(embeddings[info.id], dtype=np.float64),
            patch=band[r0:r1, c0:c1].copy(),
            ssim_patch=pc1[r0:r1, c0:c1].copy(),
            spectrum=flat[:, mask].mean(axis=1),
            centroid=info.centroid_rc,
        ))
    return samples


_IDEAL = {"glcm": 0.0, "lbp": 1.0, "ssim": 1.0, "sam": 0.0}


@dataclass
class MetricReport:
    tag: str
    protocol: str  # "feature" | "context"
    metrics: dict[str, float]
    params: dict = field(default_factory=dict)
    elapsed_s: float | None = None

    def __post_init__(self):
        if self.protocol not in ("feature", "context"):
            raise EvalError(f"unknown protocol {self.protocol!r}")
        missing = set(_IDEAL) - set(self.metrics)
        if missing:
            raise EvalError(f"report missing metrics {sorted(missing)}")
        eps = 1e-9
        m = self.metrics
        if m["glcm"] < -eps:
            raise EvalError(f"GLCM mean {m['glcm']} < 0")
        if not -eps <= m["lbp"] <= 1 + eps:
            raise EvalError(f"LBP mean {m['lbp']} outside [0, 1]")
        if not -eps <= m["ssim"] <= 1 + eps:
            raise EvalError(f"SSIM mean {m['ssim']} outside [0, 1]")
        if not -eps <= m["sam"] <= np.pi + eps:
            raise EvalError(f"SAM mean {m['sam']} outside [0, π]")

    def to_dict(self) -> dict:
        out = {"tag": self.tag, "protocol": self.protocol,
               "metrics": {k: float(v) for k, v in self.metrics.items()},
               "params": self.params}
        if self.elapsed_s is not None:
            out["elapsed_s"] = self.elapsed_s
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricReport":
        return cls(raw["tag"], raw["protocol"], raw["metrics"],
                   raw.get("params", {}), raw.get("elapsed_s"))


def write_reports(reports: list[MetricReport], path) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=2))


def read_reports(path) -> list[MetricReport]:
    return [MetricReport.from_dict(r) for r in json.loads(Path(path).read_text())]


def format_reports(reports: list[MetricReport]) -> str:
    """Plain-text table, one row per model: GLCM↓  LBP↑  SSIM↑  SAM↓."""
    width = max([len(r.tag) for r in reports] + [5])
    lines = [f"{'Model':<{width}}  {'GLCM↓':>8}  {'LBP↑':>8}  "
             f"{'SSIM↑':>8}  {'SAM↓':>8}"]
    for r in reports:
        m = r.metrics
        lines.append(f"{r.tag:<{width}}  {m['glcm']:>8.4f}  {m['lbp']:>8.4f}  "
                     f"{m['ssim']:>8.4f}  {m['sam']:>8.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------


def measure_pair(x: SegmentSample, y: SegmentSample) -> dict[str, float]:
    # SSIM is clipped at 0 here: the raw statistic can dip slightly below
    # zero for anti-correlated patches, which carries no extra information
    # for the protocol means and would violate the report's [0, 1] range.
    return {
        "glcm": glcm_dissimilarity(x.patch, y.patch),
        "lbp": lbp_similarity(x.patch, y.patch),
        "ssim": max(ssim(x.ssim_patch, y.ssim_patch), 0.0),
        "sam": sam(x.spectrum, y.spectrum),
    }


def nearest_in_feature_space(samples: list[SegmentSample]) -> np.ndarray:
    """Index of each sample's nearest other sample by embedding distance."""
    X = np.stack([s.embedding for s in samples])
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, 0]


def _mean_report(per_segment: list[dict[str, float]], tag: str, protocol: str,
                 params: dict | None) -> MetricReport:
    metrics = {key: float(np.mean([m[key] for m in per_segment]))
               for key in _IDEAL}
    return MetricReport(tag, protocol, metrics, params or {})


def eval_feature_based(samples: list[SegmentSample], tag: str = "model",
                       params: dict | None = None,
                       workers: int | None = None) -> MetricReport:
    """Mean measures over each segment and its feature-space nearest match."""
    if len(samples) < 2:
        raise EvalError(f"need at least 2 segments, got {len(samples)}")
    nearest = nearest_in_feature_space(samples)

    def one(i: int) -> dict[str, float]:
        return measure_pair(samples[i], samples[int(nearest[i])])

    per_segment = _run_pool(one, len(samples), workers)
    return _mean_report(per_segment, tag, "feature", params)


def spatial_neighbour_lists(samples: list[SegmentSample],
                            k: int = N_SPATIAL_NEIGHBOURS) -> list[list[int]]:
    """Up to k nearest same-chip neighbours by centroid distance per sample."""
    by_chip: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        by_chip.setdefault(s.chip_id, []).append(i)
    out: list[list[int]] = [[] for _ in samples]
    for members in by_chip.values():
        cents = np.array([samples[i].centroid for i in members])
        d2 = ((cents[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        order = np.argsort(d2, axis=1, kind="stable")
        take = min(k, len(members) - 1)
        for row, i in enumerate(members):
            out[i] = [members[j] for j in order[row, :take]]
    return out


def neighbourhood_pairs(xi: int, yi: int, samples: list[SegmentSample],
                        neighbours: list[list[int]]) -> list[tuple[int, int]]:
    """The 9 node pairs: (x, y) plus Hungarian-matched spatial neighbours.

    Cost is Euclidean embedding distance; with unequal neighbourhood sizes
    (chip borders) only min(|Nx|, |Ny|) neighbour pairs are formed.
    """
    pairs = [(xi, yi)]
    nx = neighbours[xi]
    ny = neighbours[yi]
    if nx and ny:
        ex = np.stack([samples[i].embedding for i in nx])
        ey = np.stack([samples[j].embedding for j in ny])
        cost = np.sqrt(((ex[:, None, :] - ey[None, :, :]) ** 2).sum(axis=2))
        for a, b in hungarian(cost).pairs:
            pairs.append((nx[a], ny[b]))
    return pairs


def eval_context_aware(samples: list[SegmentSample], tag: str = "model",
                       params: dict | None = None,
                       workers: int | None = None) -> MetricReport:
    """Mean measures over matched 9-pair neighbourhoods (x, y and 8 + 8)."""
    if len(samples) < 2:
        raise EvalError(f"need at least 2 segments, got {len(samples)}")
    nearest = nearest_in_feature_space(samples)
    neighbours = spatial_neighbour_lists(samples)

    def one(i: int) -> dict[str, float]:
        pairs = neighbourhood_pairs(i, int(nearest[i]), samples, neighbours)
        per_pair = [measure_pair(samples[a], samples[b]) for a, b in pairs]
        return {key: float(np.mean([m[key] for m in per_pair])) for key in _IDEAL}

    per_segment = _run_pool(one, len(samples), workers)
    return _mean_report(per_segment, tag, "context", params)


def _run_pool(fn, n: int, workers: int | None) -> list[dict[str, float]]:
    if workers is not None and workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def sweep(axis: str, values, runner) -> list[MetricReport]:
    """Run the pipeline once per axis value via runner(axis, value).

    axis "K" and "N" take explicit value lists; axis "layer" always runs
    the three fixed stages (graph-generation features, GCN layer 1, GCN
    layer 2). Wall-clock per run is recorded on each report.
    """
    if axis == "layer":
        values = list(LAYER_STAGES)
    elif axis in ("K", "N"):
        values = list(values or [])
        if not values:
            raise EvalError(f"axis {axis!r} needs at least one value")
    else:
        raise EvalError(f"unknown sweep axis {axis!r} (expected K, N or layer)")
    reports = []
    for value in values:
        start = time.perf_counter()
        report = runner(axis, value)
        report.elapsed_s = time.perf_counter() - start
        report.params = dict(report.params, **{axis: value})
        reports.append(report)
    return reports
