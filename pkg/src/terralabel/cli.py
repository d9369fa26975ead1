"""Umbrella command line: every pipeline stage plus the labelling service.

Stages read their knobs from an optional JSON config file (``--config``)
and locate the store via ``--store``, the config file, or the
``TERRALABEL_STORE`` environment variable, in that order.
"""
from __future__ import annotations

import functools
from pathlib import Path

import click

from . import pipeline, service
from .config import ConfigError, PipelineConfig, load_config, resolve_store
from .ingest import IngestError
from .pipeline import PipelineError
from .service import ServiceError

_USER_ERRORS = (ConfigError, PipelineError, IngestError, ServiceError)


def _friendly(fn):
    """Turn expected pipeline errors into one-line CLI failures."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _USER_ERRORS as err:
            raise click.ClickException(str(err))
    return wrapper


def _config(ctx) -> PipelineConfig:
    return load_config(ctx.obj.get("config"), store=ctx.obj.get("store"))


def _open(ctx):
    cfg = _config(ctx)
    return pipeline.open_store(cfg), cfg


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              default=None, help="JSON config file overriding defaults.")
@click.option("--store", type=click.Path(path_type=Path), default=None,
              help="Store root (default: config file, then TERRALABEL_STORE).")
@click.pass_context
@_friendly
def main(ctx, config_path, store):
    """Unsupervised segment-graph labelling pipeline."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = config_path
    ctx.obj["store"] = str(store) if store else None


@main.command()
@click.argument("tiles", nargs=-1, required=True,
                type=click.Path(exists=True, path_type=Path))
@click.pass_context
@_friendly
def ingest(ctx, tiles):
    """Cut raster TILES into chips and add them to the store."""
    cfg = _config(ctx)
    root = resolve_store(cfg.store)
    for tile_path in tiles:
        pipeline.ingest_tile(root, tile_path, cfg, log=click.echo)


@main.command()
@click.pass_context
@_friendly
def split(ctx):
    """Assign train/test splits and compute normalization stats."""
    store, _cfg = _open(ctx)
    pipeline.split_store(store, log=click.echo)


@main.command()
@click.pass_context
@_friendly
def fcm(ctx):
    """Fit fuzzy C-means soft clusters on sampled training spectra."""
    store, cfg = _open(ctx)
    pipeline.run_fcm(store, cfg, log=click.echo)


@main.command("train-unet")
@click.pass_context
@_friendly
def train_unet(ctx):
    """Train the U-Net against the FCM membership targets."""
    store, cfg = _open(ctx)
    pipeline.train_features(store, cfg, log=click.echo)


@main.command()
@click.pass_context
@_friendly
def extract(ctx):
    """Write per-chip CNN activation maps."""
    store, cfg = _open(ctx)
    pipeline.extract_features(store, cfg, log=click.echo)


@main.command()
@click.pass_context
@_friendly
def segment(ctx):
    """Compute SLIC superpixel maps for every chip."""
    store, cfg = _open(ctx)
    pipeline.segment_chips(store, cfg, log=click.echo)


@main.command("build-graphs")
@click.pass_context
@_friendly
def build_graphs(ctx):
    """Build per-chip segment graphs from features and centroids."""
    store, cfg = _open(ctx)
    pipeline.build_graphs_stage(store, cfg, log=click.echo)


@main.command("train-gnn")
@click.pass_context
@_friendly
def train_gnn(ctx):
    """Train the segment-graph network against FCM segment targets."""
    store, cfg = _open(ctx)
    pipeline.train_gnn_stage(store, cfg, log=click.echo)


@main.command()
@click.option("--layer", type=int, default=None,
              help="Embedding layer (1 or 2; default from config).")
@click.pass_context
@_friendly
def embed(ctx, layer):
    """Write per-chip segment embeddings."""
    store, cfg = _open(ctx)
    pipeline.embed_chips(store, cfg, layer=layer, log=click.echo)


@main.command()
@click.pass_context
@_friendly
def match(ctx):
    """Hungarian-match chip pairs into a similarity matrix."""
    store, cfg = _open(ctx)
    pipeline.match_chips(store, cfg, log=click.echo)


@main.command()
@click.pass_context
@_friendly
def project(ctx):
    """Project the chip similarity matrix to 2-D."""
    store, cfg = _open(ctx)
    pipeline.project_chips(store, cfg, log=click.echo)


@main.command("eval")
@click.option("--tag", default=None, help="Report tag (default: variant-layer).")
@click.pass_context
@_friendly
def eval_cmd(ctx, tag):
    """Score embeddings with the feature and context protocols."""
    store, cfg = _open(ctx)
    pipeline.evaluate(store, cfg, tag=tag, log=click.echo)


@main.command()
@click.argument("axis", type=click.Choice(["K", "N", "layer"]))
@click.option("--values", default=None,
              help="Comma-separated values for the K and N axes.")
@click.pass_context
@_friendly
def sweep(ctx, axis, values):
    """Sweep one axis (K, N, or layer) and score each setting."""
    store, cfg = _open(ctx)
    parsed = None
    if values:
        parsed = [int(v) for v in values.split(",") if v.strip()]
    pipeline.run_sweep(store, cfg, axis, values=parsed, log=click.echo)


@main.command("all")
@click.pass_context
@_friendly
def run_all(ctx):
    """Run every stage in dependency order."""
    store, cfg = _open(ctx)
    pipeline.run_all(store, cfg, log=click.echo)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8008, show_default=True, type=int)
@click.pass_context
@_friendly
def serve(ctx, host, port):
    """Serve the labelling API over the store."""
    cfg = _config(ctx)
    service.serve(resolve_store(cfg.store), cfg, host=host, port=port)


if __name__ == "__main__":
    main()
