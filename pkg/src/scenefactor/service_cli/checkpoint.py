"""Training checkpoints in the chunk-bundle container.

A checkpoint is a single bundle file: every module parameter and buffer is
one named f32 payload (non-float tensors are stored as f32 with their true
dtype recorded in the header meta and restored on load), optimizer moment
tensors are stored the same way, and the torch RNG state rides along as a
u8 payload.  The JSON meta block records stage, step, the full preset, and
the config the run used, so models can be rebuilt without guessing shapes.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import torch
from torch import nn

from ..grids.bundle import write_bundle, read_bundle
from ..grids.presets import GridPreset

STAGES = ("vqvae-sem", "vqvae-geo", "diff-sem", "diff-geo")
CHECKPOINT_KIND = "training-checkpoint"

_MODEL_PREFIX = "model"
_OPT_PREFIX = "opt"
_RNG_NAME = "rng_state"


class CheckpointError(RuntimeError):
    """Missing, malformed, or incompatible checkpoint."""


def _to_payload(value: torch.Tensor, name: str, dtypes: dict[str, str],
                scalars: list[str]) -> np.ndarray:
    arr = value.detach().cpu().numpy()
    if arr.dtype != np.float32:
        dtypes[name] = str(value.dtype).removeprefix("torch.")
        arr = arr.astype(np.float32)
    if arr.ndim == 0:
        # the container stores rank-0 values as one-element vectors
        scalars.append(name)
    return arr


def _from_payload(arr: np.ndarray, name: str, dtypes: Mapping[str, str],
                  scalars: frozenset[str]) -> torch.Tensor:
    tensor = torch.from_numpy(np.array(arr, dtype=np.float32))
    want = dtypes.get(name)
    if want is not None:
        tensor = tensor.to(getattr(torch, want))
    if name in scalars:
        tensor = tensor.reshape(())
    return tensor


def save_checkpoint(path: str | Path, *, stage: str, step: int,
                    preset: GridPreset, modules: Mapping[str, nn.Module],
                    optimizer: Optional[torch.optim.Optimizer] = None,
                    rng: Optional[torch.Generator] = None,
                    config: Optional[dict] = None,
                    extra: Optional[dict] = None) -> Path:
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    tensors: dict[str, np.ndarray] = {}
    dtypes: dict[str, str] = {}
    scalars: list[str] = []
    for mod_name, module in modules.items():
        for key, value in module.state_dict().items():
            name = f"{_MODEL_PREFIX}/{mod_name}/{key}"
            tensors[name] = _to_payload(value, name, dtypes, scalars)
    opt_groups = None
    if optimizer is not None:
        state = optimizer.state_dict()
        opt_groups = state["param_groups"]
        for idx, entry in state["state"].items():
            for key, value in entry.items():
                if isinstance(value, torch.Tensor):
                    name = f"{_OPT_PREFIX}/{idx}/{key}"
                    tensors[name] = _to_payload(value, name, dtypes, scalars)
                else:
                    raise CheckpointError(
                        f"optimizer state {key!r} is not a tensor; cannot serialize")
    if rng is not None:
        tensors[_RNG_NAME] = rng.get_state().numpy().astype(np.uint8)
    meta = {
        "kind": CHECKPOINT_KIND,
        "stage": stage,
        "step": int(step),
        "preset": dataclasses.asdict(preset),
        "module_names": sorted(modules),
        "dtypes": dtypes,
        "scalars": sorted(scalars),
        "opt_param_groups": opt_groups,
        "config": config,
        "extra": extra or {},
    }
    return write_bundle(path, tensors, meta)


@dataclass
class Checkpoint:
    stage: str
    step: int
    preset: GridPreset
    module_names: list[str]
    tensors: dict[str, np.ndarray]
    meta: dict = field(repr=False)

    def module_state(self, mod_name: str) -> dict[str, torch.Tensor]:
        prefix = f"{_MODEL_PREFIX}/{mod_name}/"
        dtypes = self.meta.get("dtypes", {})
        scalars = frozenset(self.meta.get("scalars", ()))
        state = {name[len(prefix):]: _from_payload(arr, name, dtypes, scalars)
                 for name, arr in self.tensors.items() if name.startswith(prefix)}
        if not state:
            raise CheckpointError(
                f"checkpoint has no module {mod_name!r}; contains {self.module_names}")
        return state

    def restore_module(self, mod_name: str, module: nn.Module) -> None:
        try:
            module.load_state_dict(self.module_state(mod_name), strict=True)
        except RuntimeError as exc:
            raise CheckpointError(f"module {mod_name!r}: {exc}") from exc

    def restore_optimizer(self, optimizer: torch.optim.Optimizer) -> None:
        groups = self.meta.get("opt_param_groups")
        if groups is None:
            raise CheckpointError("checkpoint holds no optimizer state")
        # JSON turned tuple-valued hyperparameters (e.g. Adam betas) into
        # lists; coerce back wherever the live optimizer uses a tuple.
        tuple_keys = {key for key, value in optimizer.defaults.items()
                      if isinstance(value, tuple)}
        groups = [
            {key: tuple(value) if key in tuple_keys and isinstance(value, list)
             else value
             for key, value in group.items()}
            for group in groups
        ]
        dtypes = self.meta.get("dtypes", {})
        scalars = frozenset(self.meta.get("scalars", ()))
        prefix = f"{_OPT_PREFIX}/"
        state: dict[int, dict[str, torch.Tensor]] = {}
        for name, arr in self.tensors.items():
            if not name.startswith(prefix):
                continue
            _, idx, key = name.split("/", 2)
            state.setdefault(int(idx), {})[key] = _from_payload(
                arr, name, dtypes, scalars)
        optimizer.load_state_dict({"state": state, "param_groups": groups})

    def restore_rng(self, generator: torch.Generator) -> None:
        if _RNG_NAME not in self.tensors:
            raise CheckpointError("checkpoint holds no rng state")
        generator.set_state(torch.from_numpy(
            np.array(self.tensors[_RNG_NAME], dtype=np.uint8)))

    @property
    def config(self) -> dict:
        return dict(self.meta.get("config") or {})


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    grids, meta = read_bundle(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path} is not a training checkpoint")
    spec = dict(meta["preset"])
    for key, value in spec.items():
        if isinstance(value, list):
            spec[key] = tuple(value)
    return Checkpoint(
        stage=meta["stage"],
        step=int(meta["step"]),
        preset=GridPreset(**spec),
        module_names=list(meta.get("module_names", [])),
        tensors={name: g.data for name, g in grids.items()},
        meta=meta,
    )
