"""Training orchestration for the four pipeline stages.

Stages run in dependency order: the two chunk autoencoders first
(``vqvae-sem``, ``vqvae-geo``), then the two denoisers (``diff-sem``,
``diff-geo``), each of which loads its frozen autoencoder checkpoint to
pre-encode the dataset into latents.  The text encoder trains jointly with
the semantic denoiser, the semantic-context encoder jointly with the
geometric denoiser.

Every stage appends to a CSV loss log (step, loss, trailing average,
validation metric, wall seconds), checkpoints periodically into the bundle
container, resumes from its own checkpoint, aborts on non-finite losses,
and stops early once its validation target is met.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from ..conditioners import (
    build_context_encoder,
    build_text_encoder,
    build_vocabulary,
    tokenize,
)
from ..diffusion import (
    NoiseSchedule,
    build_geometric_denoiser,
    build_semantic_denoiser,
    train_step_geometric,
    train_step_semantic,
)
from ..grids.core import SEM_CHANNELS
from ..grids.presets import GridPreset
from ..scenegen import SceneModels, pad_latent
from ..synthdata.dataset import MANIFEST_NAME, load_manifest
from ..grids.bundle import read_bundle
from ..vqvae import (
    TrainingDiverged,
    build_vqvae,
    semantic_nll,
    semantic_voxel_accuracy,
)
from .checkpoint import (
    STAGES,
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .config import PipelineConfig, resolve_home

#: Trailing window, in optimization steps, for the averaged CSV column.
LOSS_WINDOW = 50

STAGE_PREREQS = {"diff-sem": "vqvae-sem", "diff-geo": "vqvae-geo"}

LOG_COLUMNS = ("step", "loss", "avg_loss", "val", "elapsed_s")


@dataclass
class StageResult:
    stage: str
    final_step: int
    steps_run: int
    stopped_early: bool
    final_loss: float
    final_val: Optional[float]
    checkpoint_path: Path
    log_path: Path


def checkpoint_path(home: str | Path, stage: str) -> Path:
    return Path(home) / "checkpoints" / f"{stage}.sfcb"


def log_path(home: str | Path, stage: str) -> Path:
    return Path(home) / "logs" / f"{stage}.csv"


# ------------------------------------------------------------ dataset I/O


def _split_entries(manifest: dict) -> tuple[list[dict], list[dict]]:
    train = [e for e in manifest["entries"] if e["split"] == "train"]
    test = [e for e in manifest["entries"] if e["split"] == "test"]
    if not train:
        raise ValueError("dataset manifest has no training entries")
    return train, test or train


def _load_manifest_for(config: PipelineConfig, preset: GridPreset) -> tuple[Path, dict]:
    dataset_dir = Path(config.dataset_dir)
    manifest = load_manifest(dataset_dir / MANIFEST_NAME)
    if manifest["preset"] != preset.name:
        raise ValueError(
            f"dataset was built for preset {manifest['preset']!r}, "
            f"config wants {preset.name!r}")
    return dataset_dir, manifest


def _load_labels(dataset_dir: Path, entries: list[dict]) -> torch.Tensor:
    """Semantic label chunks as one (N, X, Y, Z) uint8 tensor."""
    stack = []
    for entry in entries:
        grids, _ = read_bundle(dataset_dir / entry["bundle_path"])
        stack.append(np.array(grids["semantic_labels"].data, dtype=np.uint8))
    return torch.from_numpy(np.stack(stack))


def _load_geometry(dataset_dir: Path, entries: list[dict]) -> torch.Tensor:
    """Geometry chunks as one (N, 1, X, Y, Z) float32 tensor."""
    stack = []
    for entry in entries:
        grids, _ = read_bundle(dataset_dir / entry["bundle_path"])
        stack.append(np.array(grids["geometry_udf"].data, dtype=np.float32))
    return torch.from_numpy(np.stack(stack)).unsqueeze(1)


def _one_hot(labels: torch.Tensor) -> torch.Tensor:
    return nn.functional.one_hot(
        labels.long(), SEM_CHANNELS).permute(0, 4, 1, 2, 3).float()


def _augment_horizontal(batch: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """Random quarter-turn about the vertical axis plus optional flips."""
    x_dim, z_dim = batch.ndim - 3, batch.ndim - 1
    k = int(torch.randint(4, (1,), generator=generator))
    if k:
        batch = torch.rot90(batch, k=k, dims=(x_dim, z_dim))
    if int(torch.randint(2, (1,), generator=generator)):
        batch = torch.flip(batch, dims=(x_dim,))
    return batch


# ------------------------------------------------------- shared run loop


class _CsvLog:
    def __init__(self, path: Path, resume: bool):
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not (resume and path.exists())
        self._fh = open(path, "w" if fresh else "a", newline="")
        self._writer = csv.writer(self._fh)
        if fresh:
            self._writer.writerow(LOG_COLUMNS)
        self.path = path

    def row(self, step: int, loss: float, avg: float, val: Optional[float],
            elapsed: float) -> None:
        self._writer.writerow([step, f"{loss:.6f}", f"{avg:.6f}",
                               "" if val is None else f"{val:.6f}", f"{elapsed:.2f}"])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _run_loop(*, stage: str, config: PipelineConfig, preset: GridPreset,
              modules: dict[str, nn.Module],
              optimizer: torch.optim.Optimizer,
              step_fn: Callable[[torch.Generator], torch.Tensor],
              post_step: Optional[Callable[[], None]],
              validate: Optional[Callable[[], float]],
              target_met: Optional[Callable[[float], bool]],
              loss_target: Optional[float],
              max_steps: int, resume: bool) -> StageResult:
    home = resolve_home(config.home)
    ckpt_file = checkpoint_path(home, stage)
    gen = torch.Generator().manual_seed(config.seed + 101 * STAGES.index(stage))
    start_step = 0
    if resume:
        if not ckpt_file.exists():
            raise CheckpointError(f"cannot resume: {ckpt_file} does not exist")
        ckpt = load_checkpoint(ckpt_file)
        if ckpt.stage != stage:
            raise CheckpointError(f"{ckpt_file} holds stage {ckpt.stage!r}, not {stage!r}")
        for name, module in modules.items():
            ckpt.restore_module(name, module)
        ckpt.restore_optimizer(optimizer)
        ckpt.restore_rng(gen)
        start_step = ckpt.step

    log = _CsvLog(log_path(home, stage), resume=resume)
    if start_step >= max_steps:
        log.close()
        return StageResult(stage=stage, final_step=start_step, steps_run=0,
                           stopped_early=False, final_loss=float("nan"),
                           final_val=None, checkpoint_path=ckpt_file,
                           log_path=log.path)
    for module in modules.values():
        module.train()

    recent: list[float] = []
    last_val: Optional[float] = None
    stopped_early = False
    loss_value = float("nan")
    step = start_step
    started = time.monotonic()

    def save(step_now: int, final: bool) -> None:
        save_checkpoint(
            ckpt_file, stage=stage, step=step_now, preset=preset,
            modules=modules, optimizer=optimizer, rng=gen,
            config=dict(vq_width=config.vq_width, sem_base=config.sem_base,
                        geo_base=config.geo_base,
                        cross_attention=config.cross_attention,
                        seed=config.seed),
            extra={"final": final, "val": last_val})

    try:
        for step in range(start_step + 1, max_steps + 1):
            loss = step_fn(gen)
            if not bool(torch.isfinite(loss)):
                raise TrainingDiverged(
                    f"{stage}: non-finite loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if post_step is not None:
                post_step()
            loss_value = float(loss.detach())
            recent.append(loss_value)
            if len(recent) > LOSS_WINDOW:
                recent.pop(0)
            avg = sum(recent) / len(recent)

            run_val = validate is not None and (
                step % config.val_every == 0 or step == max_steps)
            if run_val:
                for module in modules.values():
                    module.eval()
                with torch.no_grad():
                    last_val = validate()
                for module in modules.values():
                    module.train()
            if step % config.log_every == 0 or step == max_steps or run_val \
                    or step == start_step + 1:
                log.row(step, loss_value, avg,
                        last_val if run_val else None,
                        time.monotonic() - started)
            if run_val and target_met is not None and target_met(last_val):
                stopped_early = True
            if (loss_target is not None and len(recent) == LOSS_WINDOW
                    and avg <= loss_target):
                stopped_early = True
            if stopped_early:
                break
            if step % config.checkpoint_every == 0:
                save(step, final=False)
        save(step, final=True)
    finally:
        log.close()
    for module in modules.values():
        module.eval()
    return StageResult(
        stage=stage, final_step=step, steps_run=step - start_step,
        stopped_early=stopped_early, final_loss=loss_value, final_val=last_val,
        checkpoint_path=ckpt_file, log_path=log.path)


# ------------------------------------------------------------- VQ stages


def _train_vq_stage(stage: str, config: PipelineConfig, resume: bool) -> StageResult:
    preset = config.resolve_preset()
    dataset_dir, manifest = _load_manifest_for(config, preset)
    train_entries, test_entries = _split_entries(manifest)
    semantic = stage == "vqvae-sem"
    space = "semantic" if semantic else "geometric"
    model = build_vqvae(space, preset, width=config.vq_width, seed=config.seed)
    lr = config.lr_vq_sem if semantic else config.lr_vq_geo
    batch_size = config.batch_vq_sem if semantic else config.batch_vq_geo
    max_steps = config.steps_vq_sem if semantic else config.steps_vq_geo
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)

    if semantic:
        data = _load_labels(dataset_dir, train_entries)
        val_labels = _load_labels(dataset_dir, test_entries[:config.val_chunks])
    else:
        data = _load_geometry(dataset_dir, train_entries)
        val_geo = _load_geometry(dataset_dir, test_entries[:config.val_chunks])

    ema_state: dict = {}

    def step_fn(gen: torch.Generator) -> torch.Tensor:
        pick = torch.randint(data.shape[0], (min(batch_size, data.shape[0]),),
                             generator=gen)
        batch = data[pick]
        if config.augment:
            batch = _augment_horizontal(batch, gen)
        if semantic:
            inputs = _one_hot(batch)
            targets = batch.long()
        else:
            inputs = batch
            targets = batch
        pre = model.encode_tensor(inputs)
        if not bool(torch.isfinite(pre).all()):
            raise TrainingDiverged(f"{stage}: non-finite encoder output")
        quantized, idx, _, commit = model.codebook(pre)
        out = model.decode_tensor(quantized)
        recon = semantic_nll(out, targets) if semantic \
            else nn.functional.l1_loss(out, targets)
        ema_state["pre"], ema_state["idx"], ema_state["gen"] = pre, idx, gen
        return recon + commit

    def post_step() -> None:
        model.codebook.ema_update(ema_state["pre"], ema_state["idx"],
                                  generator=ema_state["gen"])

    def reconstruct(inputs: torch.Tensor) -> torch.Tensor:
        pre = model.encode_tensor(inputs)
        q, _ = model.codebook.nearest(pre)
        return model.decode_tensor(q)

    if semantic:
        def validate() -> float:
            correct = total = 0
            for lo in range(0, val_labels.shape[0], 8):
                labels = val_labels[lo:lo + 8]
                logits = reconstruct(_one_hot(labels))
                acc = semantic_voxel_accuracy(logits, labels.long())
                correct += acc * labels.numel()
                total += labels.numel()
            return correct / total

        def target_met(v: float) -> bool:
            return (config.target_sem_accuracy is not None
                    and v >= config.target_sem_accuracy)
    else:
        def validate() -> float:
            err = n = 0.0
            for lo in range(0, val_geo.shape[0], 2):
                batch = val_geo[lo:lo + 2]
                out = reconstruct(batch)
                err += float((out - batch).abs().sum())
                n += batch.numel()
            return err / n

        def target_met(v: float) -> bool:
            return config.target_geo_l1 is not None and v <= config.target_geo_l1

    return _run_loop(stage=stage, config=config, preset=preset,
                     modules={"vqvae": model}, optimizer=optimizer,
                     step_fn=step_fn, post_step=post_step, validate=validate,
                     target_met=target_met, loss_target=None,
                     max_steps=max_steps, resume=resume)


# ------------------------------------------------------ diffusion stages


def _load_frozen_vqvae(stage: str, config: PipelineConfig,
                       preset: GridPreset) -> tuple:
    prereq = STAGE_PREREQS[stage]
    path = checkpoint_path(resolve_home(config.home), prereq)
    if not path.exists():
        raise CheckpointError(
            f"stage {stage!r} needs the {prereq!r} checkpoint at {path}; "
            f"train that stage first")
    ckpt = load_checkpoint(path)
    space = "semantic" if prereq == "vqvae-sem" else "geometric"
    width = int(ckpt.config.get("vq_width", config.vq_width))
    model = build_vqvae(space, preset, width=width, seed=0)
    ckpt.restore_module("vqvae", model)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, ckpt


@torch.no_grad()
def _encode_latents(model, inputs: torch.Tensor, batch: int = 8) -> torch.Tensor:
    out = []
    for lo in range(0, inputs.shape[0], batch):
        pre = model.encode_tensor(inputs[lo:lo + batch])
        q, _ = model.codebook.nearest(pre)
        out.append(q)
    return torch.cat(out, dim=0)


def _train_diff_sem(config: PipelineConfig, resume: bool) -> StageResult:
    preset = config.resolve_preset()
    dataset_dir, manifest = _load_manifest_for(config, preset)
    train_entries, _ = _split_entries(manifest)
    vqvae, _ckpt = _load_frozen_vqvae("diff-sem", config, preset)

    labels = _load_labels(dataset_dir, train_entries)
    latents = _encode_latents(vqvae, _one_hot(labels))
    latents = pad_latent(latents, preset.sem_latent_padded)

    vocab = build_vocabulary()
    ids, masks = [], []
    for entry in train_entries:
        seqs = [tokenize(c, vocab) for c in entry["captions"]]
        ids.append(np.stack([s.ids for s in seqs]))
        masks.append(np.stack([s.mask for s in seqs]))
    ids_t = torch.from_numpy(np.stack(ids))      # (N, n_captions, L)
    masks_t = torch.from_numpy(np.stack(masks))  # (N, n_captions, L)

    denoiser = build_semantic_denoiser(preset, base=config.sem_base,
                                       cross_attention=config.cross_attention,
                                       seed=config.seed + 4)
    text_encoder = build_text_encoder(preset, vocab, seed=config.seed)
    schedule = NoiseSchedule(preset.timesteps)
    optimizer = torch.optim.AdamW(
        list(denoiser.parameters()) + list(text_encoder.parameters()),
        lr=config.lr_diff, weight_decay=config.weight_decay_diff)

    n, n_captions = ids_t.shape[0], ids_t.shape[1]

    def step_fn(gen: torch.Generator) -> torch.Tensor:
        pick = torch.randint(n, (min(config.batch_diff_sem, n),), generator=gen)
        which = torch.randint(n_captions, (pick.numel(),), generator=gen)
        batch_ids = ids_t[pick, which]
        batch_mask = masks_t[pick, which]
        text = text_encoder(batch_ids, batch_mask)
        return train_step_semantic(denoiser, schedule, latents[pick],
                                   text, batch_mask, generator=gen)

    return _run_loop(stage="diff-sem", config=config, preset=preset,
                     modules={"denoiser": denoiser, "text_encoder": text_encoder},
                     optimizer=optimizer, step_fn=step_fn, post_step=None,
                     validate=None, target_met=None,
                     loss_target=config.target_diff_sem_loss,
                     max_steps=config.steps_diff_sem, resume=resume)


def _train_diff_geo(config: PipelineConfig, resume: bool) -> StageResult:
    preset = config.resolve_preset()
    dataset_dir, manifest = _load_manifest_for(config, preset)
    train_entries, _ = _split_entries(manifest)
    vqvae, _ckpt = _load_frozen_vqvae("diff-geo", config, preset)

    geometry = _load_geometry(dataset_dir, train_entries)
    latents = _encode_latents(vqvae, geometry, batch=4)
    del geometry
    labels = _load_labels(dataset_dir, train_entries)

    denoiser = build_geometric_denoiser(preset, base=config.geo_base,
                                        seed=config.seed + 5)
    context_encoder = build_context_encoder(preset, seed=config.seed + 1)
    schedule = NoiseSchedule(preset.timesteps)
    optimizer = torch.optim.AdamW(
        list(denoiser.parameters()) + list(context_encoder.parameters()),
        lr=config.lr_diff, weight_decay=config.weight_decay_diff)

    n = latents.shape[0]

    def step_fn(gen: torch.Generator) -> torch.Tensor:
        pick = torch.randint(n, (min(config.batch_diff_geo, n),), generator=gen)
        context = context_encoder(_one_hot(labels[pick]))
        return train_step_geometric(denoiser, schedule, latents[pick],
                                    context, generator=gen)

    return _run_loop(stage="diff-geo", config=config, preset=preset,
                     modules={"denoiser": denoiser,
                              "context_encoder": context_encoder},
                     optimizer=optimizer, step_fn=step_fn, post_step=None,
                     validate=None, target_met=None,
                     loss_target=config.target_diff_geo_loss,
                     max_steps=config.steps_diff_geo, resume=resume)


def train_stage(stage: str, config: PipelineConfig, resume: bool = False) -> StageResult:
    """Run one training stage to its step budget or early-stop target."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    if stage in ("vqvae-sem", "vqvae-geo"):
        return _train_vq_stage(stage, config, resume)
    if stage == "diff-sem":
        return _train_diff_sem(config, resume)
    return _train_diff_geo(config, resume)


# ----------------------------------------------------- model reassembly


def load_scene_models(home: str | Path | None = None,
                      paths: Optional[dict[str, Path]] = None) -> SceneModels:
    """Rebuild a full model set from the four stage checkpoints."""
    if paths is None:
        root = resolve_home(home)
        paths = {stage: checkpoint_path(root, stage) for stage in STAGES}
    missing = [stage for stage in STAGES if not Path(paths[stage]).exists()]
    if missing:
        raise CheckpointError(f"missing checkpoints for stages: {missing}")
    cks: dict[str, Checkpoint] = {stage: load_checkpoint(paths[stage])
                                  for stage in STAGES}
    presets = {stage: ck.preset for stage, ck in cks.items()}
    first = next(iter(presets.values()))
    if any(p != first for p in presets.values()):
        raise CheckpointError(
            f"checkpoints disagree on the grid preset: "
            f"{ {s: p.name for s, p in presets.items()} }")
    preset = first

    vocab = build_vocabulary()
    sem_vq = build_vqvae("semantic", preset,
                         width=int(cks["vqvae-sem"].config.get("vq_width", 32)), seed=0)
    cks["vqvae-sem"].restore_module("vqvae", sem_vq)
    geo_vq = build_vqvae("geometric", preset,
                         width=int(cks["vqvae-geo"].config.get("vq_width", 32)), seed=0)
    cks["vqvae-geo"].restore_module("vqvae", geo_vq)

    sem_cfg = cks["diff-sem"].config
    sem_denoiser = build_semantic_denoiser(
        preset, base=int(sem_cfg.get("sem_base", 48)),
        cross_attention=bool(sem_cfg.get("cross_attention", False)), seed=0)
    cks["diff-sem"].restore_module("denoiser", sem_denoiser)
    text_encoder = build_text_encoder(preset, vocab, seed=0)
    cks["diff-sem"].restore_module("text_encoder", text_encoder)

    geo_cfg = cks["diff-geo"].config
    geo_denoiser = build_geometric_denoiser(
        preset, base=int(geo_cfg.get("geo_base", 32)), seed=0)
    cks["diff-geo"].restore_module("denoiser", geo_denoiser)
    context_encoder = build_context_encoder(preset, seed=0)
    cks["diff-geo"].restore_module("context_encoder", context_encoder)

    models = SceneModels(
        preset=preset, vocabulary=vocab, text_encoder=text_encoder,
        context_encoder=context_encoder, semantic_vqvae=sem_vq,
        geometric_vqvae=geo_vq, semantic_denoiser=sem_denoiser,
        geometric_denoiser=geo_denoiser,
        schedule=NoiseSchedule(preset.timesteps))
    return models.eval()
