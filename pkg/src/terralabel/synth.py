"""Synthetic multispectral tiles with known material layout.

Generates 12-band tiles whose material regions are aligned to the chip grid,
so every chip has a single dominant ground-truth material. Used by the test
suite and by ``scripts/make_demo_store.py`` to exercise the full pipeline
without real imagery.
"""
from __future__ import annotations

import numpy as np

from . import ingest

__all__ = [
    "MATERIAL_NAMES",
    "material_signatures",
    "material_layout",
    "make_material_tile",
    "make_blob_chip",
    "chip_materials",
]

MATERIAL_NAMES = ("water", "vegetation", "soil", "urban")

# Reflectance-like 12-band signatures, one row per named material. Chosen to
# be well separated in both magnitude and spectral angle.
_BASE_SIGNATURES = np.array([
    # water: bright blue end, near-zero in the infrared
    [0.08, 0.07, 0.06, 0.05, 0.04, 0.03, 0.03, 0.02, 0.02, 0.02, 0.01, 0.01],
    # vegetation: dark visible, red-edge ramp, strong NIR plateau
    [0.03, 0.04, 0.06, 0.05, 0.08, 0.20, 0.35, 0.40, 0.42, 0.40, 0.20, 0.10],
    # soil: monotone rise toward the SWIR
    [0.10, 0.12, 0.15, 0.18, 0.22, 0.26, 0.30, 0.32, 0.34, 0.36, 0.40, 0.38],
    # urban: flat and bright across the spectrum
    [0.20, 0.22, 0.24, 0.25, 0.26, 0.27, 0.28, 0.28, 0.29, 0.30, 0.32, 0.33],
], dtype=np.float64)


def material_signatures(n_materials: int = 4, bands: int = 12,
                        seed: int = 7) -> np.ndarray:
    """[n_materials, bands] float64 spectra.

    The first four rows come from a fixed table (resampled along the band
    axis if ``bands != 12``); additional materials are random but seeded.
    """
    if n_materials < 1:
        raise ValueError(f"n_materials must be >= 1, got {n_materials}")
    if bands < 1:
        raise ValueError(f"bands must be >= 1, got {bands}")
    base_x = np.linspace(0.0, 1.0, _BASE_SIGNATURES.shape[1])
    out_x = np.linspace(0.0, 1.0, bands) if bands > 1 else np.array([0.5])
    table = np.stack([np.interp(out_x, base_x, row) for row in _BASE_SIGNATURES])
    if n_materials <= 4:
        return table[:n_materials].copy()
    rng = np.random.default_rng(seed)
    extra = rng.uniform(0.05, 0.45, size=(n_materials - 4, bands))
    return np.concatenate([table, extra], axis=0)


def material_layout(grid_shape: tuple[int, int],
                    n_materials: int = 4) -> np.ndarray:
    """Material index per chip cell, [rows, cols] int64.

    Four materials on an even grid form quadrants; otherwise cells are split
    into nearly equal contiguous row-major runs. Either way every cell (and
    therefore every chip) holds exactly one material.
    """
    rows, cols = grid_shape
    if rows < 1 or cols < 1:
        raise ValueError(f"grid_shape must be positive, got {grid_shape}")
    if n_materials > rows * cols:
        raise ValueError(
            f"{n_materials} materials cannot tile a {rows}x{cols} grid")
    if n_materials == 4 and rows % 2 == 0 and cols % 2 == 0:
        r = (np.arange(rows) >= rows // 2).astype(np.int64)
        c = (np.arange(cols) >= cols // 2).astype(np.int64)
        return r[:, None] * 2 + c[None, :]
    cells = rows * cols
    return ((np.arange(cells) * n_materials) // cells).reshape(rows, cols)


def _smooth_field(size: int, rng: np.random.Generator,
                  knots: int = 5) -> np.ndarray:
    """Bilinear interpolation of a coarse random grid up to [size, size]."""
    coarse = rng.uniform(-1.0, 1.0, size=(knots, knots))
    xs = np.linspace(0.0, knots - 1.0, size)
    i0 = np.clip(xs.astype(np.int64), 0, knots - 2)
    f = xs - i0
    rows = coarse[i0] * (1.0 - f)[:, None] + coarse[i0 + 1] * f[:, None]
    return rows[:, i0] * (1.0 - f)[None, :] + rows[:, i0 + 1] * f[None, :]


def _texture_field(material_map: np.ndarray) -> np.ndarray:
    """Low-frequency sinusoidal texture whose period depends on the material."""
    size_y, size_x = material_map.shape
    yy = np.arange(size_y)[:, None]
    xx = np.arange(size_x)[None, :]
    freq = 2.0 * np.pi * (material_map + 2) / 97.0
    return np.sin(freq * yy) * np.sin(freq * xx)


def make_material_tile(size: int = 1024, chip_size: int = 128,
                       bands: int = 12, n_materials: int = 4, seed: int = 0,
                       noise: float = 0.02, gain: float = 0.08,
                       texture: float = 0.05,
                       tile_id: str = "synth") -> tuple["ingest.Tile", np.ndarray]:
    """A [bands, size, size] tile plus its per-chip material layout.

    Each chip-aligned cell holds one material's spectrum, modulated by a
    smooth multiplicative gain field shared across bands, a per-material
    sinusoidal texture, and additive Gaussian band noise.
    """
    if size % chip_size:
        raise ValueError(f"size {size} not divisible by chip_size {chip_size}")
    grid = size // chip_size
    layout = material_layout((grid, grid), n_materials)
    sigs = material_signatures(n_materials, bands)

    material_map = np.repeat(np.repeat(layout, chip_size, axis=0),
                             chip_size, axis=1)
    tile = sigs[material_map].transpose(2, 0, 1).astype(np.float32)

    rng = np.random.default_rng(seed)
    modulation = ((1.0 + gain * _smooth_field(size, rng))
                  * (1.0 + texture * _texture_field(material_map)))
    tile *= modulation.astype(np.float32)[None]
    tile += noise * rng.standard_normal(tile.shape, dtype=np.float32)
    return ingest.Tile(tile_id, tile), layout


def make_blob_chip(size: int = 256, bands: int = 12, seed: int = 0,
                   n_blobs: int = 5, noise: float = 0.01) -> np.ndarray:
    """One [bands, size, size] chip: material-0 background with round blobs
    of the other materials, plus mild band noise."""
    sigs = material_signatures(4, bands)
    rng = np.random.default_rng(seed)
    material_map = np.zeros((size, size), dtype=np.int64)
    yy = np.arange(size)[:, None]
    xx = np.arange(size)[None, :]
    for i in range(n_blobs):
        cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
        r = rng.uniform(size / 10.0, size / 4.0)
        material_map[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] = 1 + i % 3
    chip = sigs[material_map].transpose(2, 0, 1).astype(np.float32)
    chip += noise * rng.standard_normal(chip.shape, dtype=np.float32)
    return chip


def chip_materials(tile_id: str, layout: np.ndarray) -> dict[str, int]:
    """Dominant ground-truth material per chip id for a generated tile."""
    out: dict[str, int] = {}
    for r in range(layout.shape[0]):
        for c in range(layout.shape[1]):
            out[ingest.chip_id(tile_id, r, c)] = int(layout[r, c])
    return out
