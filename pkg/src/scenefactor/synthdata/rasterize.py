"""Analytic rasterization of box scenes to semantic and distance grids.

Semantic labels use voxel-center containment.  The distance field is the
exact point-to-box-surface distance, minimized over all boxes (walls, floor,
objects), truncated and normalized — no sampling involved.
"""
from __future__ import annotations

import numpy as np

from ..grids import FREE_SPACE, TRUNC_VOXELS, WALL_FLOOR, GeometryGrid, GridPreset, SemanticGrid
from .scenes import CATEGORY_CHANNEL, Box, SceneSpec


def _index_range(lo_m: float, hi_m: float, voxel: float, n: int) -> tuple[int, int]:
    """Voxel index range [lo, hi) whose centers fall inside [lo_m, hi_m)."""
    lo = int(np.ceil(lo_m / voxel - 0.5))
    hi = int(np.ceil(hi_m / voxel - 0.5))
    return max(lo, 0), min(hi, n)


def _fill_box(labels: np.ndarray, box: Box, voxel: float, value: int) -> None:
    (x0, y0, z0), (x1, y1, z1) = box.min_corner, box.max_corner
    ix = _index_range(x0, x1, voxel, labels.shape[0])
    iy = _index_range(y0, y1, voxel, labels.shape[1])
    iz = _index_range(z0, z1, voxel, labels.shape[2])
    labels[ix[0]:ix[1], iy[0]:iy[1], iz[0]:iz[1]] = value


def scene_boxes(spec: SceneSpec) -> list[tuple[str, Box]]:
    """All solid boxes of the scene as (kind, box); kind is a category name,
    "wall" or "floor"."""
    boxes: list[tuple[str, Box]] = []
    t = spec.wall_thickness_m
    for room in spec.rooms:
        x0, z0, x1, z1 = room.rect
        h = room.wall_height_m
        boxes.append(("floor", Box((x0, 0.0, z0), (x1, spec.floor_thickness_m, z1))))
        boxes.append(("wall", Box((x0, 0.0, z0), (x1, h, z0 + t))))          # -z side
        boxes.append(("wall", Box((x0, 0.0, z1 - t), (x1, h, z1))))         # +z side
        boxes.append(("wall", Box((x0, 0.0, z0), (x0 + t, h, z1))))         # -x side
        boxes.append(("wall", Box((x1 - t, 0.0, z0), (x1, h, z1))))         # +x side
    for obj in spec.objects:
        boxes.append((obj.category, obj.box))
    return boxes


def rasterize_semantic(spec: SceneSpec, preset: GridPreset,
                       dims: tuple[int, int, int] | None = None) -> SemanticGrid:
    v = preset.sem_voxel_m
    if dims is None:
        dims = tuple(int(round(e / v)) for e in spec.extent_m)
    labels = np.full(dims, FREE_SPACE, dtype=np.uint8)
    for kind, box in scene_boxes(spec):
        if kind in ("wall", "floor"):
            _fill_box(labels, box, v, WALL_FLOOR)
    for obj in spec.objects:  # objects overwrite structure (they never overlap walls)
        _fill_box(labels, obj.box, v, CATEGORY_CHANNEL[obj.category])
    return SemanticGrid.from_labels(labels, v)


def rasterize_object_ids(spec: SceneSpec, preset: GridPreset,
                         dims: tuple[int, int, int] | None = None) -> np.ndarray:
    """Integer grid of object indices (-1 where no object): caption bookkeeping."""
    v = preset.sem_voxel_m
    if dims is None:
        dims = tuple(int(round(e / v)) for e in spec.extent_m)
    ids = np.full(dims, -1, dtype=np.int32)
    for i, obj in enumerate(spec.objects):
        _fill_box(ids, obj.box, v, i)
    return ids


def box_surface_distance(points: np.ndarray, box: Box) -> np.ndarray:
    """Exact unsigned distance from points (n, 3) to the box surface."""
    lo = np.asarray(box.min_corner)
    hi = np.asarray(box.max_corner)
    q = np.maximum(lo - points, points - hi)          # per-axis signed excess
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.abs(np.minimum(q.max(axis=-1), 0.0))  # depth below nearest face
    return outside + inside


def rasterize_geometry(spec: SceneSpec, preset: GridPreset,
                       dims: tuple[int, int, int] | None = None) -> GeometryGrid:
    v = preset.geo_voxel_m
    if dims is None:
        dims = tuple(int(round(e / v)) for e in spec.extent_m)
    trunc_m = TRUNC_VOXELS * v
    dist = np.full(dims, trunc_m, dtype=np.float32)
    centers = [(np.arange(n, dtype=np.float64) + 0.5) * v for n in dims]
    for _, box in scene_boxes(spec):
        # Only voxels within the truncation radius of the box can change.
        (x0, y0, z0), (x1, y1, z1) = box.min_corner, box.max_corner
        ix = _index_range(x0 - trunc_m - v, x1 + trunc_m + v, v, dims[0])
        iy = _index_range(y0 - trunc_m - v, y1 + trunc_m + v, v, dims[1])
        iz = _index_range(z0 - trunc_m - v, z1 + trunc_m + v, v, dims[2])
        if ix[0] >= ix[1] or iy[0] >= iy[1] or iz[0] >= iz[1]:
            continue
        xs = centers[0][ix[0]:ix[1]]
        ys = centers[1][iy[0]:iy[1]]
        zs = centers[2][iz[0]:iz[1]]
        lo = np.asarray(box.min_corner)
        hi = np.asarray(box.max_corner)
        qx = np.maximum(lo[0] - xs, xs - hi[0])[:, None, None]
        qy = np.maximum(lo[1] - ys, ys - hi[1])[None, :, None]
        qz = np.maximum(lo[2] - zs, zs - hi[2])[None, None, :]
        out = np.sqrt(np.maximum(qx, 0.0) ** 2 + np.maximum(qy, 0.0) ** 2 + np.maximum(qz, 0.0) ** 2)
        inner = np.abs(np.minimum(np.maximum(np.maximum(qx, qy), qz), 0.0))
        d = (out + inner).astype(np.float32)
        window = dist[ix[0]:ix[1], iy[0]:iy[1], iz[0]:iz[1]]
        np.minimum(window, d, out=window)
    return GeometryGrid(np.clip(dist / trunc_m, 0.0, 1.0), v)


def rasterize(spec: SceneSpec, preset: GridPreset) -> tuple[SemanticGrid, GeometryGrid]:
    """Semantic label grid + truncated unsigned distance field for a scene."""
    return rasterize_semantic(spec, preset), rasterize_geometry(spec, preset)
