"""Model checkpoint format.

Binary layout (all integers little-endian):

    magic           8 bytes  b"TSEMBED\\0"
    version         uint32   currently 1
    margin          float64  triplet margin the model was trained with
    branch_dim      uint32   per-branch output dimension d
    dropout         float64
    fc_dim          uint32
    grid_rows       uint32
    grid_cols       uint32
    n_blocks        uint32   conv block count, then that many uint32 widths
    n_arrays        uint32
    then per array, in a fixed order (parameters first, then running stats):
        name_len    uint16 + utf-8 name
        dtype_code  uint8    0 = float32, 1 = float64
        ndim        uint8  + ndim x uint32 dims
        data        raw array bytes, C order

A JSON manifest with training metadata is written alongside the binary.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import MalformedFileError
from .model import PairEmbedder
from .storage import atomic_write_text, require_input

MAGIC = b"TSEMBED\0"
VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_checkpoint(path: str | Path, model: PairEmbedder, margin: float,
                    manifest: dict | None = None) -> None:
    chunks = [MAGIC, struct.pack("<Id", VERSION, margin),
              struct.pack("<Id", model.branch_dim, model.dropout),
              struct.pack("<III", model.fc_dim, *model.grid_shape),
              struct.pack("<I", len(model.channels)),
              struct.pack(f"<{len(model.channels)}I", *model.channels)]
    arrays = model.param_items() + model.state_items()
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    if manifest is not None:
        atomic_write_text(path.with_suffix(path.suffix + ".json"),
                          json.dumps(manifest, indent=2, sort_keys=True) + "\n")


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise MalformedFileError(f"checkpoint {self.path}: truncated")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path, dtype=np.float32) -> tuple[PairEmbedder, float]:
    """Rebuild the model from a checkpoint; returns (model, margin)."""
    path = require_input(path, "model checkpoint")
    r = _Reader(path.read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise MalformedFileError(f"checkpoint {path}: bad magic string")
    version, margin = r.unpack("<Id")
    if version != VERSION:
        raise MalformedFileError(f"checkpoint {path}: unsupported version {version}")
    branch_dim, dropout = r.unpack("<Id")
    fc_dim, rows, cols = r.unpack("<III")
    (n_blocks,) = r.unpack("<I")
    channels = r.unpack(f"<{n_blocks}I")
    (n_arrays,) = r.unpack("<I")

    model = PairEmbedder(seed=0, grid_shape=(rows, cols), channels=channels,
                         fc_dim=fc_dim, branch_dim=branch_dim, dropout=dropout,
                         dtype=dtype)
    named: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        dtype_code, ndim = r.unpack("<BB")
        if dtype_code not in _DTYPES:
            raise MalformedFileError(f"checkpoint {path}: unknown dtype code {dtype_code}")
        shape = r.unpack(f"<{ndim}I")
        raw_dtype = np.dtype(_DTYPES[dtype_code])
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(count * raw_dtype.itemsize), dtype=raw_dtype).reshape(shape)
        named[name] = arr.astype(dtype)
    model.set_arrays(named)
    return model, margin
