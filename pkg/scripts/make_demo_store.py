#!/usr/bin/env python3
"""Build a self-contained demo store from a synthetic 4-material tile.

    python3 scripts/make_demo_store.py /tmp/demo-store [--quick]

Runs every pipeline stage end to end, then prints the serve command. The
default configuration mirrors the desk-scale end-to-end test (1024x1024
12-band tile, 128px chips, depth-3/base-8 U-Net); --quick swaps in a tiny
identity-features run that finishes in seconds.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from terralabel import ingest, pipeline, synth
from terralabel.config import PipelineConfig


def desk_config(root: Path) -> PipelineConfig:
    return PipelineConfig(
        store=str(root), chip_size=128, seed=0,
        n_classes=8, sample_stride=16,
        unet_depth=3, unet_base=8, unet_epochs=12, unet_patience=4,
        n_segments=120, k_neighbours=8,
        gnn_epochs=60, gnn_patience=10,
        umap_neighbours=10, umap_epochs=200,
    )


def quick_config(root: Path) -> PipelineConfig:
    return PipelineConfig(
        store=str(root), chip_size=32, seed=0, identity_features=True,
        n_classes=4, sample_stride=8,
        n_segments=12, slic_iters=4, k_neighbours=4,
        gnn_epochs=10, gnn_patience=5,
        umap_neighbours=5, umap_epochs=50, workers=1,
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("store", type=Path, help="store directory to create")
    parser.add_argument("--quick", action="store_true",
                        help="tiny identity-features store (seconds, no CNN)")
    args = parser.parse_args()

    if (args.store / "manifest.json").exists():
        print(f"refusing to overwrite existing store at {args.store}",
              file=sys.stderr)
        return 1

    if args.quick:
        cfg = quick_config(args.store)
        tile, layout = synth.make_material_tile(size=128, chip_size=32,
                                                bands=6, seed=0,
                                                tile_id="demo")
    else:
        cfg = desk_config(args.store)
        tile, layout = synth.make_material_tile(size=1024, chip_size=128,
                                                bands=12, seed=0,
                                                tile_id="demo")

    start = time.perf_counter()
    store = ingest.ChipStore.create(args.store)
    store.add_tile(tile, cfg.chip_size)
    pipeline.split_store(store, log=print)
    pipeline.run_all(store, cfg, log=print)
    elapsed = time.perf_counter() - start

    materials = synth.chip_materials(tile.id, layout)
    names = synth.MATERIAL_NAMES
    print(f"\ndone in {elapsed:.1f}s: {len(materials)} chips, materials "
          + ", ".join(f"{names[m]}={sum(1 for v in materials.values() if v == m)}"
                      for m in sorted(set(materials.values()))))
    print(f"serve it with:\n  terralabel --store {args.store} serve")
    return 0


if __name__ == "__main__":
    sys.exit(main())
