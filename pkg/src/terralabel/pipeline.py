"""Stage orchestration over a chip store directory.

Artifacts live next to the chips, all derived from ``manifest.json``:

    <store>/
      manifest.json             chip inventory, splits, norm stats (ingest)
      chips/<id>.chip           raw chip rasters (ingest)
      models/fcm.json           fitted fuzzy C-means model
      models/unet.tlwt          trained U-Net weights
      models/gnn-<variant>.tlwt trained GNN weights
      activations/<id>.npy      [64, H, W] CNN activation maps
      segments/<id>.segm        superpixel maps
      graphs/<id>.json          segment graphs (features + KNN edges)
      embeddings/<id>.npy       [S, d] per-segment GNN embeddings
      sim.simm                  chip-to-chip similarity matrix
      chips.proj                2-D chip projection
      reports/                  evaluation and sweep reports
      labels.jsonl              label records (append-only, service-owned)

Each stage reads what earlier stages wrote and fails with a
:class:`PipelineError` naming whatever is missing.
"""
from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import clustering, evaluation, graphs, ingest, matching, projection, superpixels
from .config import PipelineConfig, resolve_store
from .features import UNet, UNetConfig, TrainResult, extract_activations, train_unet

__all__ = [
    "PipelineError",
    "StorePaths",
    "open_store",
    "run_fcm",
    "train_features",
    "extract_features",
    "segment_chips",
    "build_graphs_stage",
    "train_gnn_stage",
    "embed_chips",
    "match_chips",
    "project_chips",
    "project_segments",
    "segment_embeddings",
    "evaluate",
    "run_sweep",
    "run_all",
]


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class StorePaths:
    """All derived-artifact paths under one store root."""

    root: Path

    @property
    def fcm(self) -> Path:
        return self.root / "models" / "fcm.json"

    @property
    def unet(self) -> Path:
        return self.root / "models" / "unet.tlwt"

    def gnn(self, variant: str) -> Path:
        return self.root / "models" / f"gnn-{variant}.tlwt"

    def activations(self, cid: str) -> Path:
        return self.root / "activations" / f"{cid}.npy"

    def segments(self, cid: str) -> Path:
        return self.root / "segments" / f"{cid}.segm"

    def graph(self, cid: str) -> Path:
        return self.root / "graphs" / f"{cid}.json"

    def embedding(self, cid: str) -> Path:
        return self.root / "embeddings" / f"{cid}.npy"

    @property
    def sim(self) -> Path:
        return self.root / "sim.simm"

    @property
    def chip_projection(self) -> Path:
        return self.root / "chips.proj"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def labels(self) -> Path:
        return self.root / "labels.jsonl"


def open_store(cfg: PipelineConfig) -> ingest.ChipStore:
    return ingest.ChipStore.open(resolve_store(cfg.store))


def _log(log, msg: str) -> None:
    if log:
        log(msg)


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise PipelineError(f"missing artifact {path} (run '{produced_by}' first)")
    return path


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def ingest_tile(store_root, tile_path, cfg: PipelineConfig,
                tile_id: str | None = None, log=None) -> ingest.ChipStore:
    """Add one raster to the store at ``store_root``, creating it if needed."""
    root = Path(store_root)
    if (root / "manifest.json").exists():
        store = ingest.ChipStore.open(root)
    else:
        store = ingest.ChipStore.create(root)
    tile = ingest.load_tile(tile_path, tile_id=tile_id)
    chips = store.add_tile(tile, cfg.chip_size)
    _log(log, f"ingested {tile.id}: {len(chips)} chips of {cfg.chip_size}px")
    return store


def split_store(store: ingest.ChipStore, log=None) -> dict[str, str]:
    splits = store.assign_splits()
    counts = {name: sum(1 for s in splits.values() if s == name)
              for name in ("train", "test")}
    _log(log, f"split {len(splits)} chips: {counts['train']} train / "
              f"{counts['test']} test")
    return splits


# ---------------------------------------------------------------------------
# clustering and CNN features
# ---------------------------------------------------------------------------

def run_fcm(store: ingest.ChipStore, cfg: PipelineConfig,
            log=None) -> clustering.FCMModel:
    X = clustering.sample_store(store, cfg.sample_stride, split="train")
    _log(log, f"fcm: {X.shape[0]} sampled spectra, C={cfg.n_classes}")
    model = clustering.fcm_fit(X, cfg.n_classes, cfg.fcm_m,
                               max_iter=cfg.fcm_max_iter, tol=cfg.fcm_tol,
                               seed=cfg.seed)
    paths = StorePaths(store.root)
    paths.fcm.parent.mkdir(parents=True, exist_ok=True)
    model.save(paths.fcm)
    _log(log, f"fcm: converged in {model.n_iter} iterations, "
              f"J={model.objective[-1]:.4g}")
    return model


def _membership_lookup(store: ingest.ChipStore, model: clustering.FCMModel):
    """chip id -> [C, H, W] float32 membership maps, cached per chip."""

    @functools.lru_cache(maxsize=None)
    def lookup(cid: str) -> np.ndarray:
        return clustering.predict_chip(model, store.load_chip(cid).data)

    return lookup


def train_features(store: ingest.ChipStore, cfg: PipelineConfig,
                   log=None) -> TrainResult:
    paths = StorePaths(store.root)
    model = clustering.FCMModel.load(_require(paths.fcm, "fcm"))
    unet_cfg = UNetConfig(depth=cfg.unet_depth, base_kernels=cfg.unet_base,
                          in_channels=store.bands, out_classes=cfg.n_classes)
    result = train_unet(store, _membership_lookup(store, model), unet_cfg,
                        epochs=cfg.unet_epochs, patience=cfg.unet_patience,
                        batch_size=cfg.batch_size, lr=cfg.unet_lr,
                        seed=cfg.seed, log=log)
    paths.unet.parent.mkdir(parents=True, exist_ok=True)
    result.net.save(paths.unet)
    _log(log, f"unet: best epoch {result.best_epoch}"
              + (" (diverged, best weights restored)" if result.diverged else ""))
    return result


def extract_features(store: ingest.ChipStore, cfg: PipelineConfig,
                     log=None) -> None:
    if cfg.identity_features:
        raise PipelineError(
            "identity_features mode has no CNN activations; skip 'extract'")
    paths = StorePaths(store.root)
    net = UNet.load(_require(paths.unet, "train-unet"))
    paths.activations("x").parent.mkdir(parents=True, exist_ok=True)
    ids = store.chip_ids()
    for cid in ids:
        chip = store.load_chip(cid, normalized=True)
        np.save(paths.activations(cid), extract_activations(net, chip.data))
    _log(log, f"extract: wrote activation maps for {len(ids)} chips")


# ---------------------------------------------------------------------------
# superpixels and graphs
# ---------------------------------------------------------------------------

def segment_chips(store: ingest.ChipStore, cfg: PipelineConfig,
                  log=None) -> None:
    paths = StorePaths(store.root)
    paths.segments("x").parent.mkdir(parents=True, exist_ok=True)
    ids = store.chip_ids()
    total = 0
    for cid in ids:
        seg = superpixels.slic(store.load_chip(cid).data,
                               n_segments=cfg.n_segments,
                               compactness=cfg.compactness,
                               iters=cfg.slic_iters)
        superpixels.write_segm(seg, paths.segments(cid))
        total += seg.n_segments
    _log(log, f"segment: {len(ids)} chips, {total} segments "
              f"(target {cfg.n_segments}/chip)")


def _graph_features(store: ingest.ChipStore, paths: StorePaths, cid: str,
                    seg, identity: bool) -> np.ndarray:
    """Per-segment features: CNN activation means, or band means when
    running in identity mode."""
    if identity:
        maps = store.load_chip(cid, normalized=True).data
    else:
        maps = np.load(_require(paths.activations(cid), "extract"))
    return superpixels.segment_means(seg, maps)


def build_graphs_stage(store: ingest.ChipStore, cfg: PipelineConfig,
                       log=None) -> None:
    paths = StorePaths(store.root)
    paths.graph("x").parent.mkdir(parents=True, exist_ok=True)
    ids = store.chip_ids()
    for cid in ids:
        seg = superpixels.read_segm(_require(paths.segments(cid), "segment"))
        feats = _graph_features(store, paths, cid, seg, cfg.identity_features)
        graph = graphs.build_graph(seg, feats, k=cfg.k_neighbours, chip_id=cid)
        graphs.write_graph(graph, paths.graph(cid))
    _log(log, f"graphs: {len(ids)} chips, K={cfg.k_neighbours}"
              + (", identity features" if cfg.identity_features else ""))


def _load_graphs(store: ingest.ChipStore, paths: StorePaths,
                 split: str | None = None) -> list[graphs.SegmentGraph]:
    return [graphs.read_graph(_require(paths.graph(cid), "build-graphs"))
            for cid in store.chip_ids(split=split)]


def _segment_targets(store: ingest.ChipStore, paths: StorePaths,
                     model: clustering.FCMModel,
                     ids: list[str]) -> dict[str, np.ndarray]:
    """chip id -> [S, C] per-segment mean FCM memberships."""
    out: dict[str, np.ndarray] = {}
    for cid in ids:
        seg = superpixels.read_segm(_require(paths.segments(cid), "segment"))
        U = clustering.predict_chip(model, store.load_chip(cid).data)
        out[cid] = superpixels.segment_means(seg, U)
    return out


def train_gnn_stage(store: ingest.ChipStore, cfg: PipelineConfig,
                    log=None) -> graphs.GnnTrainResult:
    paths = StorePaths(store.root)
    model = clustering.FCMModel.load(_require(paths.fcm, "fcm"))
    train_graphs = _load_graphs(store, paths, split="train")
    test_graphs = _load_graphs(store, paths, split="test")
    targets = _segment_targets(store, paths, model, store.chip_ids())
    result = graphs.train_gnn(train_graphs, targets, variant=cfg.gnn_variant,
                              n_classes=cfg.n_classes,
                              val_graphs=test_graphs or None,
                              epochs=cfg.gnn_epochs, patience=cfg.gnn_patience,
                              lr=cfg.gnn_lr, seed=cfg.seed, log=log)
    path = paths.gnn(cfg.gnn_variant)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.model.save(path)
    _log(log, f"gnn[{cfg.gnn_variant}]: best epoch {result.best_epoch}"
              + (" (diverged, best weights restored)" if result.diverged else ""))
    return result


def embed_chips(store: ingest.ChipStore, cfg: PipelineConfig,
                layer: int | None = None, log=None) -> dict[str, np.ndarray]:
    paths = StorePaths(store.root)
    model = graphs.GnnModel.load(
        _require(paths.gnn(cfg.gnn_variant), "train-gnn"))
    paths.embedding("x").parent.mkdir(parents=True, exist_ok=True)
    out: dict[str, np.ndarray] = {}
    for cid in store.chip_ids():
        graph = graphs.read_graph(_require(paths.graph(cid), "build-graphs"))
        emb = graphs.embed(model, graph, layer=layer or cfg.embed_layer)
        np.save(paths.embedding(cid), emb)
        out[cid] = emb
    _log(log, f"embed: {len(out)} chips, layer {layer or cfg.embed_layer}, "
              f"width {next(iter(out.values())).shape[1]}")
    return out


# ---------------------------------------------------------------------------
# matching and projection
# ---------------------------------------------------------------------------

def match_chips(store: ingest.ChipStore, cfg: PipelineConfig,
                split: str | None = None, log=None) -> matching.SimilarityMatrix:
    paths = StorePaths(store.root)
    embeddings = {cid: np.load(_require(paths.embedding(cid), "embed"))
                  for cid in store.chip_ids(split=split)}
    sim = matching.similarity_matrix(embeddings, workers=cfg.workers)
    matching.write_simm(sim, paths.sim)
    _log(log, f"match: {len(sim.chip_ids)}x{len(sim.chip_ids)} similarity matrix")
    return sim


def project_chips(store: ingest.ChipStore, cfg: PipelineConfig,
                  log=None) -> projection.Projection2D:
    paths = StorePaths(store.root)
    sim = matching.read_simm(_require(paths.sim, "match"))
    proj = projection.project_similarity(sim, n_neighbors=cfg.umap_neighbours,
                                         min_dist=cfg.umap_min_dist,
                                         epochs=cfg.umap_epochs, seed=cfg.seed)
    projection.write_projection(proj, paths.chip_projection)
    _log(log, f"project: {len(proj.ids)} chips -> 2-D")
    return proj


def segment_embeddings(store: ingest.ChipStore, cid: str) -> np.ndarray:
    """[S, d] per-segment vectors: GNN embeddings if present, else identity
    band means (requires the chip's segment map either way)."""
    paths = StorePaths(store.root)
    if paths.embedding(cid).exists():
        return np.load(paths.embedding(cid))
    seg = superpixels.read_segm(_require(paths.segments(cid), "segment"))
    return superpixels.segment_means(seg, store.load_chip(cid, normalized=True).data)


def project_segments(store: ingest.ChipStore, cfg: PipelineConfig,
                     chip_ids: list[str], log=None) -> projection.Projection2D:
    """2-D projection of every segment of the requested chips; ids are
    '<chip_id>:<segment_id>'."""
    if not chip_ids:
        raise PipelineError("project-segments needs at least one chip id")
    ids: list[str] = []
    rows: list[np.ndarray] = []
    for cid in chip_ids:
        emb = segment_embeddings(store, cid)
        ids.extend(f"{cid}:{s}" for s in range(emb.shape[0]))
        rows.append(emb)
    vectors = np.concatenate(rows, axis=0)
    proj = projection.project_vectors(ids, vectors,
                                      n_neighbors=cfg.umap_neighbours,
                                      min_dist=cfg.umap_min_dist,
                                      epochs=cfg.umap_epochs, seed=cfg.seed)
    _log(log, f"project-segments: {len(ids)} segments from {len(chip_ids)} chips")
    return proj


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _test_samples(store: ingest.ChipStore, paths: StorePaths,
                  embeddings: dict[str, np.ndarray] | None = None,
                  split: str | None = "test") -> list[evaluation.SegmentSample]:
    samples: list[evaluation.SegmentSample] = []
    ids = store.chip_ids(split=split)
    if not ids:
        raise PipelineError(f"store has no chips in split {split!r}")
    for cid in ids:
        seg = superpixels.read_segm(_require(paths.segments(cid), "segment"))
        if embeddings is not None:
            emb = embeddings[cid]
        else:
            emb = np.load(_require(paths.embedding(cid), "embed"))
        samples.extend(evaluation.build_samples(cid, store.load_chip(cid).data,
                                                seg, emb))
    return samples


def evaluate(store: ingest.ChipStore, cfg: PipelineConfig, tag: str | None = None,
             embeddings: dict[str, np.ndarray] | None = None,
             log=None) -> list[evaluation.MetricReport]:
    paths = StorePaths(store.root)
    samples = _test_samples(store, paths, embeddings)
    tag = tag or f"{cfg.gnn_variant}-l{cfg.embed_layer}"
    params = {"variant": cfg.gnn_variant, "layer": cfg.embed_layer,
              "K": cfg.k_neighbours, "N": cfg.n_segments}
    reports = [
        evaluation.eval_feature_based(samples, tag=tag, params=params,
                                      workers=cfg.workers),
        evaluation.eval_context_aware(samples, tag=tag, params=params,
                                      workers=cfg.workers),
    ]
    paths.reports.mkdir(parents=True, exist_ok=True)
    evaluation.write_reports(reports, paths.reports / f"eval-{tag}.json")
    for r in reports:
        _log(log, evaluation.format_reports([r]))
    return reports


def _sweep_eval(store: ingest.ChipStore, cfg: PipelineConfig, tag: str,
                embeddings: dict[str, np.ndarray],
                params: dict) -> evaluation.MetricReport:
    paths = StorePaths(store.root)
    samples = _test_samples(store, paths, embeddings)
    return evaluation.eval_feature_based(samples, tag=tag, params=params,
                                         workers=cfg.workers)


DEFAULT_SWEEP_VALUES = {"K": (4, 8, 12), "N": (200, 500, 800)}


def run_sweep(store: ingest.ChipStore, cfg: PipelineConfig, axis: str,
              values=None, log=None) -> list[evaluation.MetricReport]:
    """Re-run the graph/GNN stages per value of one axis and score each.

    axis 'K': KNN edges per segment; 'N': SLIC segment budget; 'layer':
    embedding stage (graph features, layer 1, layer 2). Every run retrains
    the GNN under the same seed so only the axis varies. K and N sweeps
    overwrite the store's segment/graph/embedding artifacts; re-run the
    standard stages afterwards to restore them.
    """
    paths = StorePaths(store.root)
    if values is None:
        values = DEFAULT_SWEEP_VALUES.get(axis)

    def rebuild_and_eval(tag: str, sweep_cfg: PipelineConfig,
                         params: dict) -> evaluation.MetricReport:
        segment_chips(store, sweep_cfg)
        build_graphs_stage(store, sweep_cfg)
        train_gnn_stage(store, sweep_cfg)
        embeddings = embed_chips(store, sweep_cfg)
        return _sweep_eval(store, sweep_cfg, tag, embeddings, params)

    if axis == "K":
        def runner(_axis: str, k: int) -> evaluation.MetricReport:
            _log(log, f"sweep K={k}")
            sweep_cfg = dataclasses.replace(cfg, k_neighbours=int(k))
            return rebuild_and_eval(f"K={k}", sweep_cfg, {"variant": cfg.gnn_variant})
        reports = evaluation.sweep("K", values, runner)
    elif axis == "N":
        def runner(_axis: str, n: int) -> evaluation.MetricReport:
            _log(log, f"sweep N={n}")
            sweep_cfg = dataclasses.replace(cfg, n_segments=int(n))
            return rebuild_and_eval(f"N={n}", sweep_cfg, {"variant": cfg.gnn_variant})
        reports = evaluation.sweep("N", values, runner)
    elif axis == "layer":
        model = graphs.GnnModel.load(
            _require(paths.gnn(cfg.gnn_variant), "train-gnn"))

        def stage_embeddings(stage: str) -> dict[str, np.ndarray]:
            out = {}
            for cid in store.chip_ids():
                graph = graphs.read_graph(
                    _require(paths.graph(cid), "build-graphs"))
                if stage == "graph-generation":
                    out[cid] = graph.features
                else:
                    layer = 1 if stage == "gcn-layer-1" else 2
                    out[cid] = graphs.embed(model, graph, layer=layer)
            return out

        def runner(_axis: str, stage: str) -> evaluation.MetricReport:
            _log(log, f"sweep layer={stage}")
            return _sweep_eval(store, cfg, stage, stage_embeddings(stage),
                               {"variant": cfg.gnn_variant})
        reports = evaluation.sweep("layer", None, runner)
    else:
        raise PipelineError(f"unknown sweep axis {axis!r} (use K, N, or layer)")

    paths.reports.mkdir(parents=True, exist_ok=True)
    evaluation.write_reports(reports, paths.reports / f"sweep-{axis}.json")
    _log(log, evaluation.format_reports(reports))
    return reports


# ---------------------------------------------------------------------------
# umbrella
# ---------------------------------------------------------------------------

def run_all(store: ingest.ChipStore, cfg: PipelineConfig,
            log=None) -> dict[str, object]:
    """Every stage in dependency order; returns the major artifacts."""
    out: dict[str, object] = {}
    out["fcm"] = run_fcm(store, cfg, log=log)
    if not cfg.identity_features:
        out["unet"] = train_features(store, cfg, log=log)
        extract_features(store, cfg, log=log)
    segment_chips(store, cfg, log=log)
    build_graphs_stage(store, cfg, log=log)
    out["gnn"] = train_gnn_stage(store, cfg, log=log)
    out["embeddings"] = embed_chips(store, cfg, log=log)
    out["sim"] = match_chips(store, cfg, log=log)
    out["projection"] = project_chips(store, cfg, log=log)
    out["reports"] = evaluate(store, cfg, log=log)
    return out
