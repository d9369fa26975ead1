"""Pipeline configuration: one dataclass, JSON file override, env fallback.

Every stage of the pipeline reads its knobs from :class:`PipelineConfig`.
``load_config`` layers, in order: dataclass defaults, a JSON config file,
then explicit keyword overrides. The store path may also come from the
``TERRALABEL_STORE`` environment variable.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "PipelineConfig", "load_config", "resolve_store"]

STORE_ENV = "TERRALABEL_STORE"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # data
    store: str = ""
    chip_size: int = 256
    seed: int = 0
    # fuzzy c-means
    n_classes: int = 8
    fcm_m: float = 2.0
    fcm_max_iter: int = 300
    fcm_tol: float = 1e-4
    sample_stride: int = 56
    # u-net
    unet_depth: int = 5
    unet_base: int = 64
    unet_epochs: int = 200
    unet_patience: int = 15
    batch_size: int = 4
    unet_lr: float = 1e-3
    # superpixels
    n_segments: int = 500
    compactness: float = 1.0
    slic_iters: int = 10
    # graphs / gnn
    k_neighbours: int = 8
    gnn_variant: str = "gat"
    gnn_epochs: int = 200
    gnn_patience: int = 15
    gnn_lr: float = 1e-3
    embed_layer: int = 2
    # when set, graph features are per-segment band means of the normalized
    # chip instead of CNN activations (no U-Net involved)
    identity_features: bool = False
    # projection
    umap_neighbours: int = 15
    umap_min_dist: float = 0.1
    umap_epochs: int = 200
    # service / misc
    display_bands: tuple[int, int, int] = (4, 3, 2)  # 1-based band numbers
    workers: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gnn_variant not in ("gat", "gcn"):
            raise ConfigError(
                f"gnn_variant must be 'gat' or 'gcn', got {self.gnn_variant!r}")
        if self.embed_layer not in (1, 2):
            raise ConfigError(f"embed_layer must be 1 or 2, got {self.embed_layer}")
        for name in ("chip_size", "n_classes", "n_segments", "k_neighbours",
                     "unet_depth", "unet_base", "umap_neighbours"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        self.display_bands = tuple(int(b) for b in self.display_bands)
        if len(self.display_bands) != 3 or min(self.display_bands) < 1:
            raise ConfigError(
                f"display_bands must be three 1-based band numbers, got "
                f"{self.display_bands}")

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["display_bands"] = list(self.display_bands)
        return json.dumps(d, indent=1)


def resolve_store(store: str | os.PathLike | None = None) -> Path:
    """Explicit path if given, else the TERRALABEL_STORE environment variable."""
    if store:
        return Path(store)
    env = os.environ.get(STORE_ENV, "")
    if env:
        return Path(env)
    raise ConfigError(
        f"no store path: pass one explicitly or set {STORE_ENV}")


def load_config(path: str | os.PathLike | None = None,
                **overrides) -> PipelineConfig:
    """Defaults, then the JSON file at ``path``, then keyword overrides."""
    values: dict = {}
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})

    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return PipelineConfig(**values)
