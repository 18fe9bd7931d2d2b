"""Voxel and latent grid data model shared by every other module.

Conventions:

- Semantic grids and latents are indexed (channel, x, y, z); geometry grids
  and masks are (x, y, z).  The y axis is vertical (up); x and z are the
  horizontal axes that chunk traversal slides along.
- Semantic channel 0 is free space, channel 1 walls/floor, channels 2-9 the
  object categories.
- Geometry values are truncated unsigned distances stored normalized to
  [0, 1] by the truncation radius (``trunc_voxels`` geometric voxels).
- Grid objects are immutable: their arrays are marked read-only at
  construction and all operations return new objects.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

SEM_CHANNELS = 10
FREE_SPACE = 0
WALL_FLOOR = 1
#: Default truncation radius of the distance field, in geometric voxels.
TRUNC_VOXELS = 3.0
#: Iso-surface level, in geometric voxels (1/3 of the normalized range).
ISO_VOXELS = 1.0

Vec3 = tuple[float, float, float]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _as_vec3(v) -> Vec3:
    x, y, z = (float(c) for c in v)
    return (x, y, z)


@dataclass(frozen=True)
class SemanticGrid:
    """One-hot category voxel grid, dims (channel=10, x, y, z)."""

    data: np.ndarray
    voxel_size_m: float
    origin: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[0] != SEM_CHANNELS:
            raise ValueError(f"semantic grid must be ({SEM_CHANNELS}, x, y, z), got {data.shape}")
        if data.dtype != np.uint8:
            if not np.isin(data, (0, 1)).all():
                raise ValueError("semantic grid entries must be 0 or 1")
            data = data.astype(np.uint8)
        counts = data.sum(axis=0, dtype=np.int64)
        if ((data != 0) & (data != 1)).any() or (counts != 1).any():
            raise ValueError("semantic grid must be exactly one-hot at every voxel")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "origin", _as_vec3(self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def labels(self) -> np.ndarray:
        """Integer label grid (x, y, z), label k == channel k."""
        return one_hot_to_labels(self)

    @classmethod
    def from_labels(cls, labels: np.ndarray, voxel_size_m: float,
                    origin: Vec3 = (0.0, 0.0, 0.0)) -> "SemanticGrid":
        return labels_to_one_hot(labels, voxel_size_m, origin)


@dataclass(frozen=True)
class GeometryGrid:
    """Truncated unsigned distance field chunk, dims (x, y, z).

    Values are normalized: 1.0 == ``trunc_voxels`` geometric voxels.
    """

    data: np.ndarray
    voxel_size_m: float
    origin: Vec3 = (0.0, 0.0, 0.0)
    trunc_voxels: float = TRUNC_VOXELS

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"geometry grid must be (x, y, z), got {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("geometry grid contains non-finite values")
        if data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
            raise ValueError("geometry values must lie in [0, 1] (normalized truncation)")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "origin", _as_vec3(self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def trunc_m(self) -> float:
        """Truncation radius in meters."""
        return self.trunc_voxels * self.voxel_size_m

    def distances_m(self) -> np.ndarray:
        """Denormalized distances in meters (exact only below truncation)."""
        return self.data * np.float32(self.trunc_m)


@dataclass(frozen=True)
class LatentGrid:
    """Single-channel quantized feature grid, dims (1, x, y, z)."""

    data: np.ndarray
    space_tag: str
    code_indices: np.ndarray | None = None
    cell_size_m: float = 0.0
    origin: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 4 or data.shape[0] != 1:
            raise ValueError(f"latent grid must be (1, x, y, z), got {data.shape}")
        if self.space_tag not in ("semantic", "geometric"):
            raise ValueError(f"unknown space_tag {self.space_tag!r}")
        object.__setattr__(self, "data", _freeze(data))
        if self.code_indices is not None:
            idx = np.asarray(self.code_indices)
            if idx.shape != data.shape[1:]:
                raise ValueError(f"code_indices shape {idx.shape} != spatial dims {data.shape[1:]}")
            if idx.min(initial=0) < 0:
                raise ValueError("code indices must be non-negative")
            object.__setattr__(self, "code_indices", _freeze(idx.astype(np.int64)))
        object.__setattr__(self, "origin", _as_vec3(self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


@dataclass(frozen=True)
class BinaryMask:
    """Per-latent-cell {0,1} mask, dims (x, y, z); 1 marks the KNOWN region."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"mask must be (x, y, z), got {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", _freeze(data.astype(np.uint8)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def known_fraction(self) -> float:
        return float(self.data.mean())

    @classmethod
    def zeros(cls, dims: tuple[int, int, int]) -> "BinaryMask":
        return cls(np.zeros(dims, dtype=np.uint8))

    @classmethod
    def ones(cls, dims: tuple[int, int, int]) -> "BinaryMask":
        return cls(np.ones(dims, dtype=np.uint8))


Grid = Union[SemanticGrid, GeometryGrid, LatentGrid, BinaryMask]

#: Valid reflection planes for :func:`augment`; reflecting across the xz
#: plane flips the y (up) axis, across the yz plane flips x.
REFLECTIONS = ("none", "xz", "yz")


def _spatial_offset(arr: np.ndarray) -> int:
    return arr.ndim - 3


def _augment_array(arr: np.ndarray, rot90: int, reflect: str) -> np.ndarray:
    o = _spatial_offset(arr)
    k = rot90 % 4
    if k % 2 and arr.shape[o] != arr.shape[o + 2]:
        raise ValueError(f"rotation needs equal horizontal dims, got {arr.shape[o:]}")
    if k:
        arr = np.rot90(arr, k=k, axes=(o, o + 2))
    if reflect == "xz":
        arr = np.flip(arr, axis=o + 1)
    elif reflect == "yz":
        arr = np.flip(arr, axis=o)
    elif reflect != "none":
        raise ValueError(f"unknown reflection {reflect!r}; expected one of {REFLECTIONS}")
    return np.ascontiguousarray(arr)


def augment(grid: Grid, rot90: int = 0, reflect: str = "none") -> Grid:
    """Rotate (k quarter-turns about the vertical axis) then reflect.

    Pure voxel permutation: the value multiset is preserved.  Rotation is
    only defined for equal horizontal extents.
    """
    data = _augment_array(grid.data, rot90, reflect)
    if isinstance(grid, LatentGrid):
        idx = None
        if grid.code_indices is not None:
            idx = _augment_array(grid.code_indices, rot90, reflect)
        return replace(grid, data=data, code_indices=idx)
    if isinstance(grid, (SemanticGrid, GeometryGrid)):
        return replace(grid, data=data)
    return BinaryMask(data)


def one_hot_to_labels(s: SemanticGrid) -> np.ndarray:
    """Collapse a one-hot semantic grid to integer labels (x, y, z) uint8."""
    return s.data.argmax(axis=0).astype(np.uint8)


def labels_to_one_hot(labels: np.ndarray, voxel_size_m: float,
                      origin: Vec3 = (0.0, 0.0, 0.0)) -> SemanticGrid:
    """Expand an integer label grid to a one-hot :class:`SemanticGrid`."""
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ValueError(f"label grid must be (x, y, z), got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= SEM_CHANNELS:
        raise ValueError(f"labels must lie in [0, {SEM_CHANNELS})")
    onehot = np.zeros((SEM_CHANNELS,) + labels.shape, dtype=np.uint8)
    ix, iy, iz = np.indices(labels.shape, sparse=True)
    onehot[labels.astype(np.int64), ix, iy, iz] = 1
    return SemanticGrid(onehot, voxel_size_m=voxel_size_m, origin=origin)
