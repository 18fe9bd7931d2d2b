"""Chunk bundle container: bit-exact serialization for named grid sets.

File layout: magic ``SFCB``, version u16 (little-endian), u32 length-prefixed
canonical UTF-8 JSON header declaring per-grid {name, dtype, dims,
voxel_size_m, origin} plus free-form meta, then raw little-endian payloads in
header order.  Header grids are sorted by name, and the JSON encoding is
canonical (sorted keys, fixed separators), so writing the same content always
produces the same bytes.

The same container stores model checkpoints (parameter tensors as
arbitrary-rank f32 payloads).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import BinaryMask, GeometryGrid, LatentGrid, SemanticGrid

MAGIC = b"SFCB"
VERSION = 1

_DTYPES = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
    "u16": np.dtype("<u2"),
}
_NP_TO_DTYPE = {v: k for k, v in _DTYPES.items()}


class BundleError(ValueError):
    """Malformed bundle content (bad magic, header/payload mismatch, ...)."""


@dataclass(frozen=True)
class BundleGrid:
    """One named payload: an array plus its coordinate metadata."""

    data: np.ndarray
    voxel_size_m: float = 0.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.dtype not in _NP_TO_DTYPE:
            canon = {np.dtype(np.float32): "f32", np.dtype(np.uint8): "u8",
                     np.dtype(np.uint16): "u16"}.get(data.dtype)
            if canon is None:
                raise BundleError(f"unsupported dtype {data.dtype}; use one of {list(_DTYPES)}")
            data = data.astype(_DTYPES[canon])
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))

    @property
    def dtype_name(self) -> str:
        return _NP_TO_DTYPE[self.data.dtype.newbyteorder("<")]


def _coerce(name: str, grid) -> BundleGrid:
    if isinstance(grid, BundleGrid):
        return grid
    if isinstance(grid, SemanticGrid):
        return BundleGrid(grid.labels(), grid.voxel_size_m, grid.origin)
    if isinstance(grid, GeometryGrid):
        # Range is re-validated here so a corrupt value fails at write time.
        if grid.data.min(initial=0.0) < 0.0 or grid.data.max(initial=0.0) > 1.0:
            raise BundleError(f"geometry grid {name!r} outside [0, 1]")
        return BundleGrid(grid.data, grid.voxel_size_m, grid.origin)
    if isinstance(grid, LatentGrid):
        return BundleGrid(grid.data, grid.cell_size_m, grid.origin)
    if isinstance(grid, BinaryMask):
        return BundleGrid(grid.data)
    if isinstance(grid, np.ndarray):
        return BundleGrid(grid)
    raise TypeError(f"cannot serialize {type(grid).__name__} under name {name!r}")


def write_bundle(path: str | Path, grids: Mapping[str, object], meta: Mapping | None = None) -> Path:
    """Serialize named grids + meta; ``read_bundle(write_bundle(x)) == x`` bit-exactly."""
    path = Path(path)
    entries = sorted((str(name), _coerce(str(name), g)) for name, g in grids.items())
    header = {
        "grids": [
            {
                "name": name,
                "dtype": g.dtype_name,
                "dims": list(g.data.shape),
                "voxel_size_m": float(g.voxel_size_m),
                "origin": list(g.origin),
            }
            for name, g in entries
        ],
        "meta": dict(meta or {}),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for _, g in entries:
            f.write(g.data.astype(_DTYPES[g.dtype_name], copy=False).tobytes(order="C"))
    return path


def read_bundle(path: str | Path) -> tuple[dict[str, BundleGrid], dict]:
    """Inverse of :func:`write_bundle`; validates structure and payload sizes."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BundleError(f"bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise BundleError(f"unsupported bundle version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 6)
    if 10 + hlen > len(raw):
        raise BundleError("truncated header")
    try:
        header = json.loads(raw[10:10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BundleError(f"invalid header JSON: {e}") from e
    offset = 10 + hlen
    grids: dict[str, BundleGrid] = {}
    for entry in header.get("grids", []):
        name, dtype_name = entry["name"], entry["dtype"]
        if dtype_name not in _DTYPES:
            raise BundleError(f"grid {name!r}: unknown dtype {dtype_name!r}")
        dims = tuple(int(d) for d in entry["dims"])
        if any(d < 0 for d in dims):
            raise BundleError(f"grid {name!r}: negative dims {dims}")
        dtype = _DTYPES[dtype_name]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(raw):
            raise BundleError(f"grid {name!r}: payload truncated (declared dims {dims})")
        data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)), offset=offset)
        grids[name] = BundleGrid(data.reshape(dims).copy(), float(entry["voxel_size_m"]),
                                 tuple(entry["origin"]))
        offset += nbytes
    if offset != len(raw):
        raise BundleError(f"{len(raw) - offset} trailing bytes after declared payloads")
    return grids, header.get("meta", {})
