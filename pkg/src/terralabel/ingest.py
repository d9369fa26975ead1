"""Tile loading, chipping, train/test splitting and the on-disk chip store.

A tile is a multi-band float32 raster ([band][row][col]); chips are
non-overlapping 256x256 windows cut in row-major grid order, with trailing
remainder pixels discarded. Every fourth chip (ordinal index ≡ 3 mod 4)
forms the test split. The store persists one binary file per chip plus a
JSON manifest; all downstream stages read from it.

Accepted raster inputs: a band-sequential binary with a JSON sidecar, or a
directory of per-band greyscale PNGs (16- or 8-bit, sorted filename order =
band order). Anything else should be converted externally to one of these.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHIP_MAGIC = b"CHIP"
CHIP_VERSION = 1
DEFAULT_CHIP_SIZE = 256


class IngestError(ValueError):
    pass


@dataclass
class Tile:
    id: str
    data: np.ndarray  # [bands, H, W] float32
    pixel_size_m: float = 10.0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.bands < 1:
            raise IngestError(f"tile {self.id}: expected [bands, H, W], got {self.data.shape}")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class Chip:
    id: str
    tile_id: str
    grid_row: int
    grid_col: int
    data: np.ndarray  # [bands, size, size] float32
    split: str = "train"

    @property
    def size(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[0]


def chip_id(tile_id: str, row: int, col: int) -> str:
    return f"{tile_id}_r{row:03d}c{col:03d}"


def chip_tile(tile: Tile, size: int = DEFAULT_CHIP_SIZE) -> list[Chip]:
    """Cut a tile into floor(H/size) x floor(W/size) chips, row-major."""
    if tile.height < size or tile.width < size:
        raise IngestError(
            f"tile {tile.id} ({tile.height}x{tile.width}) smaller than one {size}px chip")
    grid_rows = tile.height // size
    grid_cols = tile.width // size
    chips = []
    for r in range(grid_rows):
        for c in range(grid_cols):
            window = tile.data[:, r * size:(r + 1) * size, c * size:(c + 1) * size]
            chips.append(Chip(chip_id(tile.id, r, c), tile.id, r, c, window.copy()))
    return chips


def split_chips(chips: list[Chip]) -> dict[str, str]:
    """Mark every fourth chip (top-down, row-by-row ordinal) as test.

    Mutates chip.split in place and returns {chip_id: split}.
    """
    splits = {}
    for index, chip in enumerate(chips):
        chip.split = "test" if index % 4 == 3 else "train"
        splits[chip.id] = chip.split
    return splits


@dataclass
class NormStats:
    mean: np.ndarray  # [bands]
    std: np.ndarray   # [bands], floored at 1e-6

    @classmethod
    def from_chips(cls, chips: list[Chip]) -> "NormStats":
        """Per-band moments over the training split only."""
        train = [c for c in chips if c.split == "train"]
        if not train:
            raise IngestError("no training chips to compute normalization stats")
        stacked = np.stack([c.data for c in train])  # [n, bands, s, s]
        mean = stacked.mean(axis=(0, 2, 3), dtype=np.float64)
        std = stacked.std(axis=(0, 2, 3), dtype=np.float64)
        return cls(mean.astype(np.float32), np.maximum(std, 1e-6).astype(np.float32))


def normalize(chip: Chip, stats: NormStats) -> Chip:
    """Per-band z-score; returns a new chip, input untouched."""
    data = (chip.data - stats.mean[:, None, None]) / stats.std[:, None, None]
    return Chip(chip.id, chip.tile_id, chip.grid_row, chip.grid_col,
                data.astype(np.float32), chip.split)


# ---------------------------------------------------------------------------
# chip binary format
# ---------------------------------------------------------------------------


def write_chip_bytes(chip: Chip) -> bytes:
    bands, h, w = chip.data.shape
    header = CHIP_MAGIC + struct.pack("<HHHH", CHIP_VERSION, bands, h, w)
    return header + np.ascontiguousarray(chip.data, dtype="<f4").tobytes()


def read_chip_bytes(blob: bytes, cid: str, tile_id: str = "",
                    grid_row: int = 0, grid_col: int = 0, split: str = "train") -> Chip:
    if blob[:4] != CHIP_MAGIC:
        raise IngestError(f"chip {cid}: bad magic {blob[:4]!r}")
    version, bands, h, w = struct.unpack_from("<HHHH", blob, 4)
    if version != CHIP_VERSION:
        raise IngestError(f"chip {cid}: unsupported version {version}")
    data = np.frombuffer(blob, dtype="<f4", offset=12).reshape(bands, h, w).copy()
    return Chip(cid, tile_id, grid_row, grid_col, data, split)


# ---------------------------------------------------------------------------
# chip store
# ---------------------------------------------------------------------------


@dataclass
class ChipStore:
    """Directory layout: <root>/manifest.json plus <root>/chips/<id>.chip."""

    root: Path
    manifest: dict = field(default_factory=dict)

    @classmethod
    def create(cls, root) -> "ChipStore":
        root = Path(root)
        (root / "chips").mkdir(parents=True, exist_ok=True)
        store = cls(root, {
            "tiles": [],
            "chip_size": DEFAULT_CHIP_SIZE,
            "bands": None,
            "splits": {},
            "norm": None,
        })
        store.save_manifest()
        return store

    @classmethod
    def open(cls, root) -> "ChipStore":
        root = Path(root)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise IngestError(f"{root} is not a chip store (missing manifest.json)")
        return cls(root, json.loads(manifest_path.read_text()))

    def save_manifest(self) -> None:
        (self.root / "manifest.json").write_text(json.dumps(self.manifest, indent=1))

    # -- ingestion ---------------------------------------------------------

    def add_tile(self, tile: Tile, size: int | None = None) -> list[Chip]:
        size = size or self.manifest["chip_size"]
        if self.manifest["bands"] is None:
            self.manifest["bands"] = tile.bands
        elif self.manifest["bands"] != tile.bands:
            raise IngestError(
                f"tile {tile.id} has {tile.bands} bands, store holds {self.manifest['bands']}")
        chips = chip_tile(tile, size)
        existing = {t["id"] for t in self.manifest["tiles"]}
        if tile.id in existing:
            raise IngestError(f"tile {tile.id} already in store")
        for chip in chips:
            self._chip_path(chip.id).write_bytes(write_chip_bytes(chip))
        self.manifest["tiles"].append({
            "id": tile.id,
            "grid_rows": tile.height // size,
            "grid_cols": tile.width // size,
            "height": tile.height,
            "width": tile.width,
            "pixel_size_m": tile.pixel_size_m,
        })
        self.manifest["chip_size"] = size
        self.save_manifest()
        return chips

    def assign_splits(self) -> dict[str, str]:
        """Apply the every-fourth rule over the manifest's chip ordering."""
        chips = [self.load_chip(cid) for cid in self.chip_ids()]
        splits = split_chips(chips)
        self.manifest["splits"] = splits
        stats = NormStats.from_chips(chips)
        self.manifest["norm"] = {
            "mean": [float(x) for x in stats.mean],
            "std": [float(x) for x in stats.std],
        }
        self.save_manifest()
        return splits

    # -- access ------------------------------------------------------------

    def _chip_path(self, cid: str) -> Path:
        return self.root / "chips" / f"{cid}.chip"

    def chip_ids(self, split: str | None = None) -> list[str]:
        ids = []
        for tile in self.manifest["tiles"]:
            for r in range(tile["grid_rows"]):
                for c in range(tile["grid_cols"]):
                    ids.append(chip_id(tile["id"], r, c))
        if split is not None:
            ids = [cid for cid in ids if self.manifest["splits"].get(cid) == split]
        return ids

    def load_chip(self, cid: str, normalized: bool = False) -> Chip:
        path = self._chip_path(cid)
        if not path.exists():
            raise IngestError(f"chip {cid} not found in {self.root}")
        tile_id, grid = cid.rsplit("_", 1)
        row, col = int(grid[1:4]), int(grid[5:8])
        chip = read_chip_bytes(path.read_bytes(), cid, tile_id, row, col,
                               self.manifest["splits"].get(cid, "train"))
        if normalized:
            chip = normalize(chip, self.norm_stats())
        return chip

    def norm_stats(self) -> NormStats:
        norm = self.manifest.get("norm")
        if not norm:
            raise IngestError("store has no normalization stats; run split first")
        return NormStats(np.asarray(norm["mean"], dtype=np.float32),
                         np.asarray(norm["std"], dtype=np.float32))

    @property
    def bands(self) -> int:
        return self.manifest["bands"]

    @property
    def chip_size(self) -> int:
        return self.manifest["chip_size"]

    def grid_shape(self, tile_id: str) -> tuple[int, int]:
        for tile in self.manifest["tiles"]:
            if tile["id"] == tile_id:
                return tile["grid_rows"], tile["grid_cols"]
        raise IngestError(f"tile {tile_id} not in store")


# ---------------------------------------------------------------------------
# raster readers
# ---------------------------------------------------------------------------


def load_tile(path, bands: int | None = None, tile_id: str | None = None) -> Tile:
    """Load a tile from a .bsq+sidecar pair or a per-band PNG directory."""
    path = Path(path)
    if path.is_dir():
        return _load_png_stack(path, tile_id)
    if path.suffix == ".bsq":
        return _load_bsq(path, bands, tile_id)
    raise IngestError(
        f"unsupported raster input {path}; provide a .bsq + .json sidecar or a PNG "
        "directory (convert other formats externally, e.g. with gdal_translate)")


def _load_bsq(path: Path, bands: int | None, tile_id: str | None) -> Tile:
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise IngestError(f"{path}: missing sidecar {sidecar.name}")
    meta = json.loads(sidecar.read_text())
    nbands = meta.get("bands", bands)
    height, width = meta["height"], meta["width"]
    dtype = np.dtype(meta.get("dtype", "float32")).newbyteorder("<")
    raw = np.fromfile(path, dtype=dtype)
    expected = nbands * height * width
    if raw.size != expected:
        raise IngestError(f"{path}: expected {expected} values, got {raw.size}")
    data = raw.reshape(nbands, height, width).astype(np.float32)
    return Tile(tile_id or meta.get("id", path.stem), data,
                float(meta.get("pixel_size_m", 10.0)))


def _load_png_stack(path: Path, tile_id: str | None) -> Tile:
    from PIL import Image

    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise IngestError(f"{path}: no .png band files found")
    layers = [np.asarray(Image.open(f), dtype=np.float32) for f in files]
    shapes = {layer.shape for layer in layers}
    if len(shapes) != 1 or layers[0].ndim != 2:
        raise IngestError(f"{path}: band PNGs must all be single-channel, same size")
    return Tile(tile_id or path.name, np.stack(layers))


def save_tile_bsq(tile: Tile, path) -> None:
    """Write the .bsq + sidecar pair (test/demo convenience)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(tile.data, dtype="<f4").tofile(path)
    path.with_suffix(".json").write_text(json.dumps({
        "id": tile.id,
        "bands": tile.bands,
        "height": tile.height,
        "width": tile.width,
        "dtype": "float32",
        "pixel_size_m": tile.pixel_size_m,
    }))
