"""Shared fixtures: a tiny trained world used by the service and CLI tests.

Training all four stages on the miniature grid preset takes roughly ten
seconds on one CPU core, so the world is built once per test session and
shared read-only by every test that needs live models.
"""

from __future__ import annotations

import dataclasses

import pytest

from scenefactor.grids import GridPreset
from scenefactor.service_cli import (
    PipelineConfig,
    STAGES,
    load_scene_models,
    train_stage,
)
from scenefactor.synthdata import build_dataset

TINY_PRESET = GridPreset(
    name="tiny",
    sem_voxel_m=0.336,
    geo_voxel_m=0.084,
    vq_chunk_sem=4,
    vq_chunk_geo=16,
    diff_chunk_sem=(8, 4, 8),
    diff_chunk_geo=(32, 16, 32),
    codebook_sem=16,
    codebook_geo=16,
    timesteps=25,
    d_ctx=32,
    context_channels=16,
)


def tiny_config(dataset_dir, home) -> PipelineConfig:
    return PipelineConfig(
        preset="tiny",
        custom_preset=dataclasses.asdict(TINY_PRESET),
        dataset_dir=str(dataset_dir),
        home=str(home),
        seed=0,
        vq_width=16,
        sem_base=16,
        geo_base=16,
        lr_vq_sem=1e-3,
        lr_vq_geo=1e-3,
        lr_diff=2e-4,
        batch_vq_sem=4,
        batch_vq_geo=2,
        batch_diff_sem=6,
        batch_diff_geo=2,
        steps_vq_sem=30,
        steps_vq_geo=20,
        steps_diff_sem=12,
        steps_diff_geo=8,
        log_every=5,
        checkpoint_every=10,
        val_every=10,
        val_chunks=4,
    )


@pytest.fixture(scope="session")
def tiny_world(tmp_path_factory):
    """Dataset, pipeline config, and fully trained checkpoints on disk."""
    root = tmp_path_factory.mktemp("tiny_world")
    dataset_dir = root / "data"
    home = root / "home"
    build_dataset(
        dataset_dir,
        TINY_PRESET,
        n_scenes=5,
        seed=0,
        scene_chunks=(2, 2),
        test_fraction=0.4,
    )
    config = tiny_config(dataset_dir, home)
    for stage in STAGES:
        train_stage(stage, config)
    config_path = root / "config.json"
    config.save(config_path)
    return {
        "root": root,
        "dataset": dataset_dir,
        "home": home,
        "config": config_path,
    }


@pytest.fixture(scope="session")
def tiny_models(tiny_world):
    """The trained model collection loaded from the shared checkpoints."""
    return load_scene_models(tiny_world["home"])
