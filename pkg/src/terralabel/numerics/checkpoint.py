"""Checkpoint container: magic "TLWT", versioned named float32 arrays.

Layout (little-endian throughout):
    magic   4 bytes  b"TLWT"
    version u16
    records until EOF:
        name_len u16, name UTF-8, rank u8, dims u32 * rank, payload float32
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"TLWT"
VERSION = 1


class CheckpointError(IOError):
    """Malformed or truncated checkpoint file."""


def save_checkpoint(path, arrays: dict[str, "np.ndarray | Tensor"]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        for name, value in arrays.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 6
    arrays: dict[str, np.ndarray] = {}
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        end = offset + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arrays[name] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(dims).copy()
        offset = end
    return arrays
