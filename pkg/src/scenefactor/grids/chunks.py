"""Sliding-window decomposition of scenes into half-overlapping chunks.

Chunks step along the two horizontal axes (x and z) with a stride of half
the chunk size; the vertical axis (y) is never traversed.  A scene of
(n_x, n_z) chunks therefore spans chunk·(n+1)/2 voxels per horizontal axis.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import FREE_SPACE, BinaryMask, GeometryGrid, Grid, LatentGrid, SemanticGrid

ChunkIndex = tuple[int, int]


@dataclass(frozen=True)
class ChunkLayout:
    """Half-overlap sliding-window layout over the horizontal axes.

    ``scene_chunks`` is the chunk-grid extent (n_x, n_z); ``chunk_dims_vox``
    the per-axis chunk size (cx, cy, cz).  Horizontal chunk sizes must be
    even so the stride is exactly half a chunk.
    """

    scene_chunks: tuple[int, int]
    chunk_dims_vox: tuple[int, int, int]

    def __post_init__(self):
        nx, nz = self.scene_chunks
        cx, cy, cz = self.chunk_dims_vox
        if nx < 1 or nz < 1:
            raise ValueError(f"need at least one chunk per axis, got {self.scene_chunks}")
        if min(cx, cy, cz) < 1 or cx % 2 or cz % 2:
            raise ValueError(f"horizontal chunk dims must be even and positive, got {self.chunk_dims_vox}")
        object.__setattr__(self, "scene_chunks", (int(nx), int(nz)))
        object.__setattr__(self, "chunk_dims_vox", (int(cx), int(cy), int(cz)))

    @property
    def step_vox(self) -> tuple[int, int, int]:
        """Traversal stride per axis; the vertical offset is always 0."""
        cx, _, cz = self.chunk_dims_vox
        return (cx // 2, 0, cz // 2)

    @property
    def scene_dims_vox(self) -> tuple[int, int, int]:
        nx, nz = self.scene_chunks
        cx, cy, cz = self.chunk_dims_vox
        return (cx * (nx + 1) // 2, cy, cz * (nz + 1) // 2)

    @property
    def n_chunks(self) -> int:
        return self.scene_chunks[0] * self.scene_chunks[1]

    @property
    def traversal(self) -> list[ChunkIndex]:
        """Row-major generation order over (i, j) chunk indices."""
        nx, nz = self.scene_chunks
        return [(i, j) for i in range(nx) for j in range(nz)]

    def _check(self, idx: ChunkIndex) -> ChunkIndex:
        i, j = idx
        nx, nz = self.scene_chunks
        if not (0 <= i < nx and 0 <= j < nz):
            raise IndexError(f"chunk index {idx} outside layout {self.scene_chunks}")
        return (int(i), int(j))

    def window(self, idx: ChunkIndex) -> tuple[slice, slice, slice]:
        """Voxel slices of chunk ``idx`` within the scene grid."""
        i, j = self._check(idx)
        cx, cy, cz = self.chunk_dims_vox
        sx, _, sz = self.step_vox
        return (slice(i * sx, i * sx + cx), slice(0, cy), slice(j * sz, j * sz + cz))

    def known_before(self, idx: ChunkIndex) -> np.ndarray:
        """Boolean chunk-local grid marking cells covered by earlier chunks.

        "Earlier" follows :attr:`traversal` order.  The fraction of *un*-covered
        cells is exactly 1.0 for the first chunk, 0.5 with one generated
        neighbor axis, and 0.25 with overlaps on both axes.
        """
        idx = self._check(idx)
        known = np.zeros(self.chunk_dims_vox, dtype=bool)
        win = self.window(idx)
        for prev in self.traversal:
            if prev == idx:
                break
            pwin = self.window(prev)
            inter = []
            for a, b in zip(win, pwin):
                lo, hi = max(a.start, b.start), min(a.stop, b.stop)
                if lo >= hi:
                    inter = None
                    break
                inter.append(slice(lo - a.start, hi - a.start))
            if inter is not None:
                known[tuple(inter)] = True
        return known

    def scaled(self, divisor: int) -> "ChunkLayout":
        """The same layout at a coarser resolution (e.g. latent cells)."""
        cx, cy, cz = self.chunk_dims_vox
        if any(c % divisor for c in (cx, cy, cz)) or (cx // divisor) % 2 or (cz // divisor) % 2:
            raise ValueError(f"chunk dims {self.chunk_dims_vox} not divisible by {divisor} into even horizontals")
        return ChunkLayout(self.scene_chunks, (cx // divisor, cy // divisor, cz // divisor))


def _window_with_padding(data: np.ndarray, window: tuple[slice, slice, slice], pad_value) -> np.ndarray:
    """Extract a spatial window, padding out-of-bounds regions with a constant.

    Channel axes (any leading dims before the last three) are preserved.
    """
    lead = data.shape[:-3]
    dims = data.shape[-3:]
    out_shape = lead + tuple(w.stop - w.start for w in window)
    out = np.full(out_shape, pad_value, dtype=data.dtype)
    src, dst = [], []
    for w, n in zip(window, dims):
        lo, hi = max(w.start, 0), min(w.stop, n)
        if lo >= hi:
            return out
        src.append(slice(lo, hi))
        dst.append(slice(lo - w.start, hi - w.start))
    sel = (Ellipsis,) + tuple(src)
    out[(Ellipsis,) + tuple(dst)] = data[sel]
    return out


def chunk_of(scene_grid: Grid, layout: ChunkLayout, idx: ChunkIndex) -> Grid:
    """Cut chunk ``idx`` out of a scene grid.

    The chunk is returned in local coordinates, centered at the origin.
    Windows reaching past the scene bounds are padded with free space
    (semantic) or the truncation value (geometry).
    """
    window = layout.window(idx)
    if isinstance(scene_grid, SemanticGrid):
        cx, cy, cz = layout.chunk_dims_vox
        labels = _window_with_padding(scene_grid.labels(), window, np.uint8(FREE_SPACE))
        half = np.array([cx, cy, cz]) * scene_grid.voxel_size_m / 2.0
        return SemanticGrid.from_labels(labels, scene_grid.voxel_size_m, origin=tuple(-half))
    if isinstance(scene_grid, GeometryGrid):
        cx, cy, cz = layout.chunk_dims_vox
        data = _window_with_padding(scene_grid.data, window, np.float32(1.0))
        half = np.array([cx, cy, cz]) * scene_grid.voxel_size_m / 2.0
        return replace(scene_grid, data=data, origin=tuple(-half))
    if isinstance(scene_grid, LatentGrid):
        data = _window_with_padding(scene_grid.data, window, np.float32(0.0))
        idx_grid = None
        if scene_grid.code_indices is not None:
            idx_grid = _window_with_padding(scene_grid.code_indices, window, np.int64(0))
        return replace(scene_grid, data=data, code_indices=idx_grid)
    if isinstance(scene_grid, BinaryMask):
        return BinaryMask(_window_with_padding(scene_grid.data, window, np.uint8(0)))
    raise TypeError(f"unsupported grid type {type(scene_grid).__name__}")
