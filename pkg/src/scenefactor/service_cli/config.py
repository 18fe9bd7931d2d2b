"""Pipeline configuration: preset choice, model sizes, and optimization.

One config object drives all four training stages and generation.  Presets
are referenced by name; a full preset dictionary can be embedded instead
(``custom_preset``) so experiments and tests can run on ad-hoc grid sizes
without registering them.  Grid-shape consistency (4x compression, the
semantic-voxel/geometric-latent-cell alignment) is enforced by the preset
itself at construction.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from ..grids.presets import GridPreset, get_preset

HOME_ENV = "SCENEFACTOR_HOME"
DEFAULT_HOME = "scenefactor_home"


def resolve_home(explicit: str | os.PathLike | None = None) -> Path:
    """Checkpoint/log root: explicit path, else $SCENEFACTOR_HOME, else CWD."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(HOME_ENV, "").strip()
    return Path(env) if env else Path(DEFAULT_HOME)


@dataclass
class PipelineConfig:
    """Everything a training or generation run needs besides the dataset.

    Learning-rate defaults are the full-scale values (semantic VQ 1e-4,
    geometric VQ 2e-4, diffusion 1e-5); ``desk_defaults`` swaps in rates
    tuned for the small desk models, which train far from the regime those
    defaults were chosen for.
    """

    preset: str = "desk"
    custom_preset: dict | None = None
    home: str = ""
    dataset_dir: str = ""
    seed: int = 0
    # model sizes
    vq_width: int = 32
    sem_base: int = 48
    geo_base: int = 32
    cross_attention: bool = False
    # optimization (per stage)
    lr_vq_sem: float = 1e-4
    lr_vq_geo: float = 2e-4
    lr_diff: float = 1e-5
    batch_vq_sem: int = 8
    batch_vq_geo: int = 2
    batch_diff_sem: int = 16
    batch_diff_geo: int = 4
    steps_vq_sem: int = 5000
    steps_vq_geo: int = 5000
    steps_diff_sem: int = 20000
    steps_diff_geo: int = 20000
    weight_decay_diff: float = 1e-2
    # bookkeeping
    log_every: int = 25
    checkpoint_every: int = 500
    val_every: int = 100
    val_chunks: int = 64
    # early-stop targets (None disables the check)
    target_sem_accuracy: float | None = 0.95
    target_geo_l1: float | None = 0.05
    target_diff_sem_loss: float | None = None
    target_diff_geo_loss: float | None = None
    augment: bool = False

    def __post_init__(self):
        for name in ("vq_width", "sem_base", "geo_base", "batch_vq_sem",
                     "batch_vq_geo", "batch_diff_sem", "batch_diff_geo",
                     "steps_vq_sem", "steps_vq_geo", "steps_diff_sem",
                     "steps_diff_geo", "log_every", "checkpoint_every",
                     "val_every", "val_chunks"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("lr_vq_sem", "lr_vq_geo", "lr_diff"):
            if float(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.custom_preset is not None:
            # canonicalize to JSON types so saved and in-memory configs compare equal
            self.custom_preset = json.loads(json.dumps(self.custom_preset))
        self.resolve_preset()  # validates name/dict early

    def resolve_preset(self) -> GridPreset:
        if self.custom_preset is not None:
            spec = dict(self.custom_preset)
            for key, value in spec.items():
                if isinstance(value, list):
                    spec[key] = tuple(value)
            return GridPreset(**spec)
        return get_preset(self.preset)

    @classmethod
    def desk_defaults(cls, **overrides) -> "PipelineConfig":
        """Small-model rates: 1e-3 for both VQ stages, 2e-4 for diffusion."""
        values = dict(preset="desk", lr_vq_sem=1e-3, lr_vq_geo=1e-3, lr_diff=2e-4)
        values.update(overrides)
        return cls(**values)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
