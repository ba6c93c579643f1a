"""Versioned binary snapshots of model, optimizer, and training progress.

Layout (all integers little-endian):

    magic   4 bytes  "SPXP"
    u32     format version (1)
    u32     model entry count
    entries u16 name length, UTF-8 name, u8 dtype code (0=f32, 1=f64,
            2=i64), u8 ndim, ndim x u32 dims, raw little-endian payload
    u32     optimizer entry count, then entries in the same layout
    u32     RNG state JSON byte length, JSON payload
    u32     metadata JSON byte length, JSON payload

JSON sections are serialized canonically (sorted keys, no whitespace), so
save -> load -> save reproduces the file byte for byte.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SPXP"
VERSION = 1

_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


class CheckpointError(ValueError):
    """Unreadable, truncated, or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    version: int
    params: dict  # name -> ndarray (model parameters and buffers)
    optimizer: dict  # name -> ndarray (Adam moments and step count)
    rng_state: dict
    meta: dict


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_entry(f, name, arr):
    arr = np.asarray(arr)
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name!r}")
    encoded = name.encode("utf-8")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<BB", code, arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<I", dim))
    f.write(np.ascontiguousarray(arr).astype(_CODE_TO_DTYPE[code], copy=False).tobytes())


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_entry(f):
    (name_len,) = struct.unpack("<H", _read_exact(f, 2, "entry header"))
    name = _read_exact(f, name_len, "entry name").decode("utf-8")
    code, ndim = struct.unpack("<BB", _read_exact(f, 2, "entry dtype"))
    if code not in _CODE_TO_DTYPE:
        raise CheckpointError(f"unknown dtype code {code} for entry {name!r}")
    shape = tuple(
        struct.unpack("<I", _read_exact(f, 4, "entry dims"))[0] for _ in range(ndim)
    )
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(shape)) if shape else 1
    payload = _read_exact(f, count * dtype.itemsize, f"payload of {name!r}")
    return name, np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def save_checkpoint(path, params, optimizer=None, rng_state=None, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            _write_entry(f, name, arr)
        optimizer = optimizer or {}
        f.write(struct.pack("<I", len(optimizer)))
        for name, arr in optimizer.items():
            _write_entry(f, name, arr)
        for section in (rng_state or {}, meta or {}):
            blob = _canonical_json(section)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)


def load_checkpoint(path):
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}, expected {VERSION}")
        (n_params,) = struct.unpack("<I", _read_exact(f, 4, "param count"))
        params = dict(_read_entry(f) for _ in range(n_params))
        (n_opt,) = struct.unpack("<I", _read_exact(f, 4, "optimizer count"))
        optimizer = dict(_read_entry(f) for _ in range(n_opt))
        sections = []
        for what in ("rng state", "metadata"):
            (length,) = struct.unpack("<I", _read_exact(f, 4, what + " length"))
            sections.append(json.loads(_read_exact(f, length, what)) if length else {})
    return Checkpoint(version=version, params=params, optimizer=optimizer,
                      rng_state=sections[0], meta=sections[1])
