"""Named-section binary checkpoint container.

Layout (all integers little-endian u32 unless noted):

    magic "MCKP" | version | meta_len | meta JSON bytes
    n_sections
    per section: name_len | name utf-8 | dtype code | ndim | dims... | data

The meta JSON carries the full training config, its fingerprint, and any
extra bookkeeping (epoch, vocabulary fingerprint).  Arrays round-trip
bit-exactly; model parameters are stored as float64.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"MCKP"
CHECKPOINT_VERSION = 1
CHECKPOINT_SUFFIX = ".mckp"

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8"}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def config_fingerprint(config: dict) -> str:
    """Stable digest of a config dict (canonical JSON, sorted keys)."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Checkpoint:
    config: dict
    fingerprint: str
    extra: dict
    arrays: dict[str, np.ndarray]


def save_checkpoint(path: str | Path, config: dict, arrays: dict[str, np.ndarray],
                    extra: dict | None = None) -> None:
    meta = {
        "config": config,
        "config_fingerprint": config_fingerprint(config),
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, array in arrays.items():
            array = np.ascontiguousarray(array)
            if array.dtype not in _DTYPE_CODES:
                array = array.astype(np.float64)
            code = _DTYPE_CODES[array.dtype]
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<II", code, array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(array.astype(_DTYPES[code]).tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    meta = json.loads(data[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    stored_fp = meta["config_fingerprint"]
    if config_fingerprint(meta["config"]) != stored_fp:
        raise ValueError(f"{path}: config fingerprint mismatch (corrupt checkpoint)")
    (n_sections,) = struct.unpack_from("<I", data, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_sections):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, ndim = struct.unpack_from("<II", data, offset)
        offset += 8
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        dtype = np.dtype(_DTYPES[code])
        count = int(np.prod(shape)) if ndim else 1
        nbytes = count * dtype.itemsize
        arrays[name] = (
            np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after the last section")
    return Checkpoint(config=meta["config"], fingerprint=stored_fp,
                      extra=meta["extra"], arrays=arrays)
