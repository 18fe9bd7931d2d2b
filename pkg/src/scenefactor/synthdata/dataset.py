"""Dataset builder: per-chunk scene bundles plus a JSON manifest.

Each scene is sampled deterministically from the build seed, rasterized to
a semantic label grid and a truncated unsigned distance field, cut into
half-overlapping chunks, and written as one bundle per chunk together with
all seven captions.  The train/test split is by scene (chunks of one scene
never straddle the split) and is a pure function of the seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..grids import GeometryGrid, GridPreset, SemanticGrid, chunk_of, read_bundle, write_bundle
from .captions import CAPTION_TYPES, DEFAULT_CAPTION_CONFIG, CaptionConfig, all_captions
from .rasterize import rasterize_geometry, rasterize_semantic
from .scenes import CATEGORY_SIZE_RANGES, GenerationError, SceneConfig, SceneSpec, sample_scene

MANIFEST_NAME = "manifest.json"
#: Scene seeds live in disjoint blocks: seed, scene index, and retry never collide.
_SCENE_STRIDE = 1_000_000_000
_RETRY_STRIDE = 1_000


def default_scene_config(preset: GridPreset, scene_chunks: tuple[int, int] = (2, 2),
                         size_multiplier: float = 1.0) -> SceneConfig:
    """Sampler config whose minimum room size fits the largest object footprint."""
    longest = max(r[0][1] for r in CATEGORY_SIZE_RANGES.values()) * size_multiplier
    min_side = math.ceil(longest / preset.sem_voxel_m) + 2  # + the two wall voxels
    return SceneConfig(preset=preset, scene_chunks=tuple(scene_chunks),
                       min_room_side_vox=min_side, size_multiplier=size_multiplier)


def scene_seed(seed: int, index: int, retry: int = 0) -> int:
    return seed * _SCENE_STRIDE + index * _RETRY_STRIDE + retry


def sample_scene_retrying(seed: int, index: int, config: SceneConfig,
                          max_retries: int = 25) -> SceneSpec:
    """Sample scene ``index``; reseed deterministically past infeasible draws."""
    last: GenerationError | None = None
    for retry in range(max_retries):
        try:
            return sample_scene(scene_seed(seed, index, retry), config)
        except GenerationError as exc:
            last = exc
    raise GenerationError(
        f"scene {index} infeasible after {max_retries} seeds: {last}") from last


def build_dataset(out_dir, preset: GridPreset, n_scenes: int, seed: int = 0,
                  scene_chunks: tuple[int, int] = (2, 2), test_fraction: float = 0.1,
                  scene_config: SceneConfig | None = None,
                  caption_config: CaptionConfig = DEFAULT_CAPTION_CONFIG) -> Path:
    """Write chunk bundles + manifest under ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    (out / "chunks").mkdir(parents=True, exist_ok=True)
    config = scene_config or default_scene_config(preset, scene_chunks)
    if config.scene_chunks != tuple(scene_chunks):
        config = replace(config, scene_chunks=tuple(scene_chunks))
    sem_layout = preset.sem_layout(scene_chunks)
    geo_layout = preset.geo_layout(scene_chunks)

    n_test = int(round(n_scenes * test_fraction))
    test_scenes = {int(s) for s in np.random.default_rng(seed).permutation(n_scenes)[:n_test]}

    entries = []
    for i in range(n_scenes):
        spec = sample_scene_retrying(seed, i, config)
        semantic = rasterize_semantic(spec, preset, sem_layout.scene_dims_vox)
        geometry = rasterize_geometry(spec, preset, geo_layout.scene_dims_vox)
        split = "test" if i in test_scenes else "train"
        for ci, cj in sem_layout.traversal:
            captions = all_captions(spec, preset, sem_layout, (ci, cj), caption_config)
            name = f"scene{i:05d}_chunk{ci:02d}_{cj:02d}.sfcb"
            write_bundle(
                out / "chunks" / name,
                {
                    "semantic_labels": chunk_of(semantic, sem_layout, (ci, cj)),
                    "geometry_udf": chunk_of(geometry, geo_layout, (ci, cj)),
                },
                meta={
                    "captions": captions,
                    "caption_types": list(CAPTION_TYPES),
                    "chunk_index": [ci, cj],
                    "scene_index": i,
                    "preset": preset.name,
                    "split": split,
                },
            )
            entries.append({
                "bundle_path": f"chunks/{name}",
                "chunk_index": [ci, cj],
                "scene_index": i,
                "captions": captions,
                "split": split,
            })

    manifest = {
        "version": 1,
        "preset": preset.name,
        "seed": seed,
        "n_scenes": n_scenes,
        "scene_chunks": list(scene_chunks),
        "test_fraction": test_fraction,
        "sem_chunk_dims": list(sem_layout.chunk_dims_vox),
        "geo_chunk_dims": list(geo_layout.chunk_dims_vox),
        "entries": entries,
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, sort_keys=True, separators=(",", ":"),
                               ensure_ascii=True) + "\n")
    return path


def load_manifest(path) -> dict:
    manifest = json.loads(Path(path).read_text())
    if manifest.get("version") != 1:
        raise ValueError(f"unsupported manifest version {manifest.get('version')!r}")
    return manifest


def load_entry(dataset_dir, entry: dict) -> tuple[SemanticGrid, GeometryGrid, list[str]]:
    """Rehydrate one manifest entry into grids + its seven captions."""
    grids, meta = read_bundle(Path(dataset_dir) / entry["bundle_path"])
    sem = grids["semantic_labels"]
    geo = grids["geometry_udf"]
    semantic = SemanticGrid.from_labels(sem.data, sem.voxel_size_m, origin=sem.origin)
    geometry = GeometryGrid(geo.data, geo.voxel_size_m, origin=geo.origin)
    return semantic, geometry, list(meta["captions"])
