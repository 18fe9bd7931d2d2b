"""Mesh export of decoded geometry: binary STL and indexed-triangle JSON.

Both formats triangulate the iso-surface of the truncated unsigned
distance field at one geometric voxel (the same level the point-cloud
metrics sample from), so every exporter, preview, and metric sees the
identical surface.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..grids.core import ISO_VOXELS, GeometryGrid
from ..metrics import extract_mesh

_STL_HEADER = b"scenefactor binary STL" + b" " * 58  # exactly 80 bytes


def mesh_arrays(geometry: GeometryGrid,
                level_voxels: float = ISO_VOXELS) -> tuple[np.ndarray, np.ndarray]:
    """(vertices, faces) of the iso-surface: (V, 3) float32 meters, (F, 3) uint32."""
    verts, faces = extract_mesh(geometry, level_voxels=level_voxels)
    return verts.astype(np.float32), faces.astype(np.uint32)


def _face_normals(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a = verts[faces[:, 0]]
    normals = np.cross(verts[faces[:, 1]] - a, verts[faces[:, 2]] - a)
    length = np.linalg.norm(normals, axis=1, keepdims=True)
    return (normals / np.where(length == 0.0, 1.0, length)).astype(np.float32)


def stl_bytes(verts: np.ndarray, faces: np.ndarray) -> bytes:
    """Binary STL: 80-byte header, uint32 count, 50 bytes per triangle."""
    verts = np.asarray(verts, dtype=np.float32)
    faces = np.asarray(faces)
    record = np.dtype([
        ("normal", "<f4", 3), ("v0", "<f4", 3), ("v1", "<f4", 3),
        ("v2", "<f4", 3), ("attr", "<u2"),
    ])
    body = np.zeros(len(faces), dtype=record)
    body["normal"] = _face_normals(verts, faces)
    body["v0"] = verts[faces[:, 0]]
    body["v1"] = verts[faces[:, 1]]
    body["v2"] = verts[faces[:, 2]]
    return _STL_HEADER + struct.pack("<I", len(faces)) + body.tobytes()


def write_stl(path: str | Path, verts: np.ndarray, faces: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(stl_bytes(verts, faces))
    return path


def mesh_payload(geometry: GeometryGrid,
                 level_voxels: float = ISO_VOXELS) -> dict:
    """Indexed-triangle JSON payload: vertex list (meters) + face index list."""
    verts, faces = mesh_arrays(geometry, level_voxels=level_voxels)
    return {
        "vertex_count": int(len(verts)),
        "face_count": int(len(faces)),
        "vertices": [[float(c) for c in v] for v in verts],
        "faces": [[int(i) for i in f] for f in faces],
        "level_voxels": float(level_voxels),
        "voxel_size_m": float(geometry.voxel_size_m),
    }
