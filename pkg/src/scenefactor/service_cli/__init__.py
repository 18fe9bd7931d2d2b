"""Configuration, checkpointing, training orchestration, CLI, and HTTP service."""
from .checkpoint import (
    STAGES,
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .config import PipelineConfig, resolve_home
from .meshes import mesh_arrays, mesh_payload, stl_bytes, write_stl
from .service import create_app
from .training import (
    StageResult,
    checkpoint_path,
    load_scene_models,
    log_path,
    train_stage,
)
from ..vqvae import TrainingDiverged

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "PipelineConfig",
    "STAGES",
    "StageResult",
    "TrainingDiverged",
    "checkpoint_path",
    "create_app",
    "load_checkpoint",
    "load_scene_models",
    "log_path",
    "mesh_arrays",
    "mesh_payload",
    "resolve_home",
    "save_checkpoint",
    "stl_bytes",
    "train_stage",
    "write_stl",
]
