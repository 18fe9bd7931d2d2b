"""Generation-quality metrics over geometry grids and point clouds.

Surface point clouds are extracted by polygonizing the distance field at
one geometric voxel and resampling the triangles area-uniformly.  Distances
between clouds are Chamfer (sum of the two directed mean squared
nearest-neighbor distances) or Earth Mover's (mean cost of the optimal
bijective matching; exact assignment up to ``exact_limit`` points, entropic
approximation above).  Set-level scores follow the standard minimum
matching distance / coverage / 1-nearest-neighbor-accuracy definitions,
with the 1-NNA neighbor search excluding the query itself.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from skimage.measure import marching_cubes

from .grids import ISO_VOXELS, GeometryGrid, SemanticGrid
from .synthdata import caption_channels

DEFAULT_POINTS = 4096
#: Above this cloud size the exact assignment solver gives way to Sinkhorn.
EXACT_EMD_LIMIT = 512
MIN_COMPONENT_VOXELS = 4

MetricFn = Callable[[np.ndarray, np.ndarray], float]


class EmptySurfaceError(ValueError):
    """The distance field contains no iso-surface crossing."""


def _points(arr, name: str = "points") -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {out.shape}")
    if out.shape[0] == 0:
        raise ValueError(f"{name} must contain at least one point")
    if not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return out


# ------------------------------------------------------------ surfaces

def extract_mesh(grid: GeometryGrid, level_voxels: float = ISO_VOXELS
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate the iso-surface at ``level_voxels`` geometric voxels.

    Returns (vertices in meters, triangle vertex indices).  Vertex
    coordinates account for values being samples at voxel centers.
    """
    level = level_voxels / grid.trunc_voxels
    lo, hi = float(grid.data.min()), float(grid.data.max())
    if not (lo < level < hi):
        raise EmptySurfaceError(
            f"no iso-surface at {level_voxels} voxels: field range [{lo:.4f}, {hi:.4f}]")
    v = grid.voxel_size_m
    # marching_cubes rejects read-only buffers; grid arrays are frozen.
    volume = np.array(grid.data, dtype=np.float32, copy=True)
    verts, faces, _, _ = marching_cubes(volume, level=level, spacing=(v, v, v))
    verts = verts + (np.asarray(grid.origin) + 0.5 * v)
    return verts.astype(np.float64), faces.astype(np.int64)


def normalize_unit_cube(points: np.ndarray, center: bool = True) -> np.ndarray:
    """Scale (isotropically, by the largest extent) into the unit cube.

    With ``center`` the bounding-box center moves to the origin (cloud in
    [-0.5, 0.5]^3); otherwise the bounding-box minimum moves to 0.
    """
    pts = _points(points)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = float((hi - lo).max())
    if scale == 0.0:
        scale = 1.0
    anchor = (lo + hi) / 2.0 if center else lo
    return (pts - anchor) / scale


def surface_points(grid: GeometryGrid, n: int = DEFAULT_POINTS, seed: int = 0,
                   normalize: bool = True, level_voxels: float = ISO_VOXELS) -> np.ndarray:
    """``n`` points sampled area-uniformly from the iso-surface triangles.

    Deterministic given ``seed``.  With ``normalize`` the cloud is centered
    and scaled into the unit cube (the usual footing for set metrics).
    """
    if n < 1:
        raise ValueError(f"need at least one point, got n={n}")
    verts, faces = extract_mesh(grid, level_voxels)
    if len(faces) == 0:
        raise EmptySurfaceError("iso-surface polygonization produced no triangles")
    tri = verts[faces]
    areas = 0.5 * np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    total = areas.sum()
    if total <= 0.0:
        raise EmptySurfaceError("iso-surface triangles are degenerate")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(faces), size=n, p=areas / total)
    u = np.sqrt(rng.random(n))[:, None]
    w = rng.random(n)[:, None]
    t = tri[chosen]
    pts = (1.0 - u) * t[:, 0] + u * (1.0 - w) * t[:, 1] + u * w * t[:, 2]
    return normalize_unit_cube(pts) if normalize else pts


# ------------------------------------------------------- cloud distances

def _nearest_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distance from each point of ``a`` to its nearest in ``b``."""
    if len(a) * len(b) > 65536:
        d, _ = cKDTree(b).query(a, k=1)
        return d * d
    return np.min(cdist(a, b, "sqeuclidean"), axis=1)


def chamfer(x, y) -> float:
    """Sum of the two directed mean squared nearest-neighbor distances."""
    xp, yp = _points(x, "x"), _points(y, "y")
    return float(_nearest_sq(xp, yp).mean() + _nearest_sq(yp, xp).mean())


def _sinkhorn_matching_cost(cost: np.ndarray, epsilon: float, iterations: int) -> float:
    """Entropic optimal-transport cost between uniform marginals (log domain)."""
    n, m = cost.shape
    log_mu = np.full(n, -np.log(n))
    log_nu = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    for _ in range(iterations):
        # f_i = eps*(log mu_i - logsumexp_j((g_j - C_ij)/eps))
        m_ij = (g[None, :] - cost) / epsilon
        f = epsilon * (log_mu - _logsumexp(m_ij, axis=1))
        m_ji = (f[:, None] - cost) / epsilon
        g = epsilon * (log_nu - _logsumexp(m_ji, axis=0))
    log_plan = (f[:, None] + g[None, :] - cost) / epsilon + log_mu[:, None] + log_nu[None, :]
    plan = np.exp(log_plan)
    plan /= plan.sum()  # squash residual marginal error
    return float((plan * cost).sum())  # mean matching cost under uniform marginals


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    peak = np.max(a, axis=axis, keepdims=True)
    out = peak + np.log(np.sum(np.exp(a - peak), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def emd(x, y, method: str = "auto", exact_limit: int = EXACT_EMD_LIMIT,
        sinkhorn_epsilon: float = 0.01, sinkhorn_iterations: int = 500) -> float:
    """Mean Euclidean cost of the optimal bijective matching.

    ``method``: "exact" (assignment solver), "sinkhorn" (entropic
    approximation), or "auto" (exact up to ``exact_limit`` points).
    """
    xp, yp = _points(x, "x"), _points(y, "y")
    if len(xp) != len(yp):
        raise ValueError(f"bijective matching needs equal sizes, got {len(xp)} vs {len(yp)}")
    if method not in ("auto", "exact", "sinkhorn"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        method = "exact" if len(xp) <= exact_limit else "sinkhorn"
    cost = cdist(xp, yp)
    if method == "exact":
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean())
    return _sinkhorn_matching_cost(cost, sinkhorn_epsilon, sinkhorn_iterations)


# ---------------------------------------------------------- set metrics

def _as_cloud_list(clouds, name: str) -> list[np.ndarray]:
    out = [_points(c, f"{name}[{i}]") for i, c in enumerate(clouds)]
    if not out:
        raise ValueError(f"{name} must contain at least one point cloud")
    return out


def _resolve_metric(metric) -> MetricFn:
    if callable(metric):
        return metric
    if metric == "chamfer":
        return chamfer
    if metric == "emd":
        return emd
    raise ValueError(f"unknown metric {metric!r}; use 'chamfer', 'emd', or a callable")


def _batch_chamfer_rows(a: np.ndarray, b_stack: np.ndarray) -> np.ndarray:
    """Chamfer from one cloud to a stack of same-size clouds, vectorized."""
    d2 = np.sum((a[None, :, None, :] - b_stack[:, None, :, :]) ** 2, axis=-1)
    return d2.min(axis=2).mean(axis=1) + d2.min(axis=1).mean(axis=1)


def distance_matrix(set_a: Sequence, set_b: Sequence, metric="chamfer") -> np.ndarray:
    """Pairwise cloud distances, (|set_a|, |set_b|)."""
    a = _as_cloud_list(set_a, "set_a")
    b = _as_cloud_list(set_b, "set_b")
    uniform = (metric == "chamfer"
               and len({c.shape for c in a} | {c.shape for c in b}) == 1)
    # The broadcast path materializes |set_b| * n^2 * 3 floats per row.
    if uniform and len(b) * a[0].shape[0] ** 2 * 3 <= 64_000_000:
        b_stack = np.stack(b)
        return np.stack([_batch_chamfer_rows(c, b_stack) for c in a])
    fn = _resolve_metric(metric)
    return np.array([[fn(ca, cb) for cb in b] for ca in a], dtype=np.float64)


def mmd(generated: Sequence, reference: Sequence, metric="chamfer") -> float:
    """Mean over the reference set of the distance to its closest generated cloud."""
    d = distance_matrix(generated, reference, metric)
    return float(d.min(axis=0).mean())


def cov(generated: Sequence, reference: Sequence, metric="chamfer") -> float:
    """Fraction of reference clouds that are the argmin of some generated cloud."""
    d = distance_matrix(generated, reference, metric)
    matched = np.unique(d.argmin(axis=1))
    return float(len(matched) / d.shape[1])


def one_nna(generated: Sequence, reference: Sequence, metric="chamfer") -> float:
    """Leave-one-out 1-nearest-neighbor two-sample accuracy; 0.5 is optimal.

    Each cloud's nearest neighbor is searched over the union of both sets,
    excluding the cloud itself; the score is the fraction classified into
    its own set.
    """
    n_g, n_r = len(generated), len(reference)
    d_gg = distance_matrix(generated, generated, metric)
    d_rr = distance_matrix(reference, reference, metric)
    d_gr = distance_matrix(generated, reference, metric)
    full = np.block([[d_gg, d_gr], [d_gr.T, d_rr]])
    np.fill_diagonal(full, np.inf)
    nearest = full.argmin(axis=1)
    same_side = (nearest < n_g) == (np.arange(n_g + n_r) < n_g)
    return float(same_side.mean())


def set_metrics(generated: Sequence, reference: Sequence, metric="chamfer") -> dict:
    """All three set scores over one shared distance computation setup."""
    return {
        "mmd": mmd(generated, reference, metric),
        "cov": cov(generated, reference, metric),
        "one_nna": one_nna(generated, reference, metric),
    }


# ------------------------------------------------------ semantic accuracy

def semantic_accuracy(predicted: SemanticGrid, caption: str,
                      min_component: int = MIN_COMPONENT_VOXELS) -> float:
    """Fraction of caption-mentioned categories present in the grid as at
    least one face-connected component of ``min_component`` voxels or more.

    Captions naming no category (room-type or empty-room templates) score
    1.0 vacuously; text outside the template grammar raises ValueError.
    """
    channels = caption_channels(caption)
    if not channels:
        return 1.0
    labels = predicted.labels()
    satisfied = 0
    for channel in channels:
        component_map, count = ndimage.label(labels == channel)
        if count == 0:
            continue
        sizes = np.bincount(component_map.reshape(-1))[1:]
        if sizes.max() >= min_component:
            satisfied += 1
    return satisfied / len(channels)
