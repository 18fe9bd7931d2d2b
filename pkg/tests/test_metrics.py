"""Metrics: cloud distances, set scores, surface sampling, semantic accuracy.

Oracles here are deliberately independent implementations: EMD against an
exhaustive search over all 8! matchings, set metrics against hand loops
over 3x3 sets, and connected components against a hand-rolled flood fill.
"""
import itertools

import numpy as np
import pytest

from scenefactor.grids import GeometryGrid, SemanticGrid, get_preset
from scenefactor.metrics import (EmptySurfaceError, chamfer, cov, distance_matrix,
                                 emd, extract_mesh, mmd, normalize_unit_cube,
                                 one_nna, semantic_accuracy, set_metrics,
                                 surface_points)
from scenefactor.synthdata import (EMPTY_ROOM_CAPTION, Box, ObjectSpec, SceneSpec,
                                   box_surface_distance, build_dataset, load_entry,
                                   load_manifest, rasterize_geometry)

DESK = get_preset("desk")


def _cloud(rng, n=16):
    return rng.random((n, 3))


# ----------------------------------------------------- chamfer / emd

def test_self_distances_are_zero():
    x = _cloud(np.random.default_rng(0))
    assert chamfer(x, x) == 0.0
    assert emd(x, x) == 0.0
    assert chamfer(x, np.flipud(x)) == 0.0  # multiset equality, different order


def test_two_single_points():
    x = np.array([[0.0, 0.0, 0.0]])
    y = np.array([[0.0, 0.0, 0.7]])
    assert emd(x, y) == pytest.approx(0.7, abs=1e-15)
    assert chamfer(x, y) == pytest.approx(2 * 0.7 ** 2, abs=1e-15)


def test_distances_symmetric_and_nonnegative():
    rng = np.random.default_rng(1)
    for _ in range(5):
        x, y = _cloud(rng, 12), _cloud(rng, 12)
        assert chamfer(x, y) >= 0.0
        assert chamfer(x, y) == chamfer(y, x)
        assert emd(x, y) == pytest.approx(emd(y, x), rel=1e-12)
        assert chamfer(x, y) > 0.0  # distinct supports


def test_emd_matches_exhaustive_matching_search():
    rng = np.random.default_rng(4)
    x, y = rng.random((8, 3)), rng.random((8, 3))
    cost = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)
    rows = np.arange(8)
    best = min(cost[rows, list(p)].mean() for p in itertools.permutations(range(8)))
    assert emd(x, y) == pytest.approx(best, abs=1e-12)


def test_emd_requires_equal_sizes_and_known_method():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        emd(_cloud(rng, 4), _cloud(rng, 5))
    with pytest.raises(ValueError):
        emd(_cloud(rng, 4), _cloud(rng, 4), method="magic")


def test_sinkhorn_approximates_exact_emd_from_above():
    rng = np.random.default_rng(3)
    x, y = _cloud(rng, 32), _cloud(rng, 32)
    exact = emd(x, y, method="exact")
    approx = emd(x, y, method="sinkhorn")
    assert exact - 1e-9 <= approx <= exact + 0.05


def test_kdtree_and_dense_nearest_agree():
    rng = np.random.default_rng(7)
    x, y = _cloud(rng, 300), _cloud(rng, 300)  # 300*300 > dense cutoff
    dense = float(np.min(np.linalg.norm(x[:, None] - y[None], axis=-1) ** 2, axis=1).mean()
                  + np.min(np.linalg.norm(x[:, None] - y[None], axis=-1) ** 2, axis=0).mean())
    assert chamfer(x, y) == pytest.approx(dense, rel=1e-12)


# ------------------------------------------------------- set metrics

def _brute_set_metrics(s_g, s_r):
    d = [[chamfer(x, y) for y in s_r] for x in s_g]
    n_g, n_r = len(s_g), len(s_r)
    mmd_val = float(np.mean([min(d[i][j] for i in range(n_g)) for j in range(n_r)]))
    cov_val = len({min(range(n_r), key=lambda j: d[i][j]) for i in range(n_g)}) / n_r
    union = list(s_g) + list(s_r)
    correct = 0
    for i in range(len(union)):
        j = min((k for k in range(len(union)) if k != i),
                key=lambda k: chamfer(union[i], union[k]))
        correct += (j < n_g) == (i < n_g)
    return mmd_val, cov_val, correct / len(union)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_set_metrics_match_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    s_g = [_cloud(rng, 5) for _ in range(3)]
    s_r = [_cloud(rng, 5) for _ in range(3)]
    mmd_o, cov_o, nna_o = _brute_set_metrics(s_g, s_r)
    assert mmd(s_g, s_r) == pytest.approx(mmd_o, rel=1e-12)
    assert cov(s_g, s_r) == pytest.approx(cov_o, abs=0)
    assert one_nna(s_g, s_r) == pytest.approx(nna_o, abs=0)


def test_identical_sets_hand_computation():
    rng = np.random.default_rng(9)
    clouds = [_cloud(rng, 6) for _ in range(3)]
    copies = [c.copy() for c in clouds]
    scores = set_metrics(clouds, copies)
    assert scores["mmd"] == 0.0
    assert scores["cov"] == 1.0
    assert scores["one_nna"] == 0.0  # every query's nearest is its twin across sets


def test_single_reference_coverage():
    rng = np.random.default_rng(10)
    assert cov([_cloud(rng), _cloud(rng)], [_cloud(rng)]) == 1.0


def test_set_metrics_invariant_under_set_permutation():
    rng = np.random.default_rng(11)
    s_g = [_cloud(rng, 5) for _ in range(4)]
    s_r = [_cloud(rng, 5) for _ in range(4)]
    reference = set_metrics(s_g, s_r)
    shuffled = set_metrics([s_g[2], s_g[0], s_g[3], s_g[1]],
                           [s_r[1], s_r[3], s_r[0], s_r[2]])
    for key in reference:
        assert shuffled[key] == pytest.approx(reference[key], rel=1e-12)


def test_empty_sets_rejected():
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError):
        mmd([], [_cloud(rng)])
    with pytest.raises(ValueError):
        one_nna([_cloud(rng)], [])
    with pytest.raises(ValueError):
        distance_matrix([_cloud(rng)], [_cloud(rng)], metric="nope")


def test_one_nna_is_half_for_same_generator():
    rng = np.random.default_rng(17)
    s_g = [rng.normal(size=(32, 3)) for _ in range(200)]
    s_r = [rng.normal(size=(32, 3)) for _ in range(200)]
    assert abs(one_nna(s_g, s_r) - 0.5) <= 0.05


# ------------------------------------------------------ surface points

def _box_scene(boxes):
    v = DESK.geo_voxel_m
    dims = (64, 32, 64)
    return SceneSpec(extent_m=(dims[0] * v, dims[1] * v, dims[2] * v), rooms=(),
                     objects=tuple(ObjectSpec("table", "desk", b, 0) for b in boxes),
                     wall_thickness_m=DESK.sem_voxel_m,
                     floor_thickness_m=DESK.sem_voxel_m), dims


def test_surface_points_near_true_box_surfaces():
    v = DESK.geo_voxel_m
    boxes = [Box((0.6, 0.3, 0.6), (2.1, 1.5, 1.8)), Box((3.0, 0.2, 3.1), (4.4, 0.9, 4.9))]
    spec, dims = _box_scene(boxes)
    grid = rasterize_geometry(spec, DESK, dims)
    pts = surface_points(grid, n=2048, seed=1, normalize=False)
    assert pts.shape == (2048, 3)
    nearest = np.min(np.stack([box_surface_distance(pts, b) for b in boxes]), axis=0)
    assert nearest.max() <= 1.5 * v  # points hug the one-voxel iso-offset
    assert 0.5 * v <= nearest.mean() <= 1.5 * v


def test_surface_points_deterministic_and_sized():
    v = DESK.geo_voxel_m
    spec, dims = _box_scene([Box((0.6, 0.3, 0.6), (2.1, 1.5, 1.8))])
    grid = rasterize_geometry(spec, DESK, dims)
    a = surface_points(grid, n=7, seed=3)
    b = surface_points(grid, n=7, seed=3)
    c = surface_points(grid, n=7, seed=4)
    assert a.shape == (7, 3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.isfinite(a).all()
    assert (np.abs(a) <= 0.5 + 1e-12).all()  # normalized into the unit cube


def test_empty_field_raises():
    ones = GeometryGrid(np.ones((8, 8, 8), dtype=np.float32), DESK.geo_voxel_m)
    zeros = GeometryGrid(np.zeros((8, 8, 8), dtype=np.float32), DESK.geo_voxel_m)
    with pytest.raises(EmptySurfaceError):
        surface_points(ones)
    with pytest.raises(EmptySurfaceError):
        extract_mesh(zeros)


def test_extract_mesh_stays_in_grid_bounds():
    spec, dims = _box_scene([Box((0.6, 0.3, 0.6), (2.1, 1.5, 1.8))])
    grid = rasterize_geometry(spec, DESK, dims)
    verts, faces = extract_mesh(grid)
    v = DESK.geo_voxel_m
    assert faces.min() >= 0 and faces.max() < len(verts)
    assert (verts >= 0.0).all() and (verts <= np.array(dims) * v).all()


def test_normalize_unit_cube_conventions():
    pts = np.array([[0.0, 0.0, 0.0], [2.0, 1.0, 0.5]])
    centered = normalize_unit_cube(pts)
    assert centered.max() <= 0.5 and centered.min() >= -0.5
    np.testing.assert_allclose(centered[1] - centered[0], [1.0, 0.5, 0.25])
    anchored = normalize_unit_cube(pts, center=False)
    np.testing.assert_allclose(anchored[0], [0.0, 0.0, 0.0])


# --------------------------------------------------- semantic accuracy

def _grid_with(channel_voxels):
    labels = np.zeros((16, 8, 16), dtype=np.uint8)
    for channel, voxels in channel_voxels.items():
        for x, y, z in voxels:
            labels[x, y, z] = channel
    return SemanticGrid.from_labels(labels, DESK.sem_voxel_m)


def test_component_size_threshold():
    row3 = [(i, 2, 3) for i in range(3)]
    row4 = [(i, 2, 3) for i in range(4)]
    assert semantic_accuracy(_grid_with({4: row3}), "a room with one chair") == 0.0
    assert semantic_accuracy(_grid_with({4: row4}), "a room with one chair") == 1.0


def test_diagonal_voxels_do_not_connect():
    diag = [(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 3, 3)]
    assert semantic_accuracy(_grid_with({4: diag}), "a room with one chair") == 0.0


def test_absent_category_contributes_zero():
    chair_blob = [(i, 2, 3) for i in range(5)]
    grid = _grid_with({4: chair_blob})
    assert semantic_accuracy(grid, "a room with one bed") == 0.0
    assert semantic_accuracy(grid, "a room with one bed and one chair") == 0.5


def test_vacuous_and_unparseable_captions():
    grid = _grid_with({})
    assert semantic_accuracy(grid, EMPTY_ROOM_CAPTION) == 1.0
    assert semantic_accuracy(grid, "a view of a bedroom") == 1.0
    with pytest.raises(ValueError):
        semantic_accuracy(grid, "twelve purple elephants")


@pytest.fixture(scope="module")
def chunk_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("metrics_dataset")
    manifest = load_manifest(build_dataset(root, DESK, n_scenes=25, seed=21,
                                           scene_chunks=(2, 2)))
    return root, manifest


def test_ground_truth_chunks_self_consistent(chunk_dataset):
    root, manifest = chunk_dataset
    for entry in manifest["entries"][:20]:
        semantic, _, captions = load_entry(root, entry)
        for caption in captions:
            assert semantic_accuracy(semantic, caption) == 1.0, (entry["bundle_path"], caption)


def _flood_fill_has_component(mask: np.ndarray, min_size: int) -> bool:
    """Hand-rolled 6-connected component search (independent oracle)."""
    dims = mask.shape
    visited = np.zeros(dims, dtype=bool)
    for start in zip(*np.nonzero(mask)):
        if visited[start]:
            continue
        stack, size = [start], 0
        visited[start] = True
        while stack:
            x, y, z = stack.pop()
            size += 1
            for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                               (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                p = (x + dx, y + dy, z + dz)
                if (0 <= p[0] < dims[0] and 0 <= p[1] < dims[1] and 0 <= p[2] < dims[2]
                        and mask[p] and not visited[p]):
                    visited[p] = True
                    stack.append(p)
        if size >= min_size:
            return True
    return False


def test_hundred_chunks_match_independent_script(chunk_dataset):
    from scenefactor.synthdata import caption_channels

    root, manifest = chunk_dataset
    entries = manifest["entries"]
    assert len(entries) == 100
    rng = np.random.default_rng(33)
    compared = 0
    for entry in entries:
        semantic, _, captions = load_entry(root, entry)
        labels = semantic.labels().copy()
        # Vandalize so scores spread over [0, 1]: erase or decimate channels.
        for channel in np.unique(labels):
            if channel == 0:
                continue
            action = rng.choice(["keep", "erase", "decimate"])
            where = np.argwhere(labels == channel)
            if action == "erase":
                labels[labels == channel] = 0
            elif action == "decimate":
                keep = rng.choice(len(where), size=min(len(where), int(rng.integers(1, 7))),
                                  replace=False)
                labels[labels == channel] = 0
                for x, y, z in where[keep]:
                    labels[x, y, z] = channel
        grid = SemanticGrid.from_labels(labels, DESK.sem_voxel_m)
        caption = captions[1]  # counted-category caption
        channels = caption_channels(caption)
        if not channels:
            continue
        oracle = np.mean([_flood_fill_has_component(labels == c, 4) for c in channels])
        assert semantic_accuracy(grid, caption) == pytest.approx(float(oracle), abs=0)
        compared += 1
    assert compared >= 60  # the scan exercised a real spread of chunks