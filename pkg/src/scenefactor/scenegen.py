"""Scene-level synthesis and localized editing.

A scene is synthesized in four stages: caption-conditioned outpainting of
the semantic latent chunks (half-overlap traversal, so every chunk after
the first is partially pinned to already-generated cells), chunk-wise
decoding of the semantic map with later chunks overwriting overlaps,
semantic-conditioned outpainting of the geometric latent chunks over the
same traversal, and one fully-convolutional decode of the assembled
geometric latent scene (never tiled, so chunk borders cannot seam).

Edits operate on the decoded semantic map at semantic-voxel resolution,
which aligns one-to-one with geometric latent cells.  Every edit replaces
the geometric latents under the edited region with unit Gaussian noise and
re-runs masked sampling with everything outside the region pinned, so
latents away from the edit are bit-identical afterwards.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .conditioners import (
    SemanticContextEncoder,
    TextEncoder,
    build_context_encoder,
    build_text_encoder,
    build_vocabulary,
    encode_semantic_context,
    encode_text,
    tokenize,
)
from .diffusion import (
    LatentUNet,
    NoiseSchedule,
    build_geometric_denoiser,
    build_semantic_denoiser,
    denoise_step,
    inpaint_step,
    sample,
)
from .grids.bundle import read_bundle, write_bundle
from .grids.chunks import ChunkLayout, chunk_of
from .grids.core import FREE_SPACE, SEM_CHANNELS, LatentGrid, SemanticGrid, GeometryGrid
from .grids.presets import LATENT_FACTOR, GridPreset
from .vqvae import (
    VqVaeModel,
    build_vqvae,
    decode_geometric,
    decode_semantic,
)

EDIT_OPS = ("add", "remove", "replace", "resize", "move")

#: Upper bound on geometric latent cells for the single-pass scene decode.
DEFAULT_DECODE_BUDGET = 262_144


class SessionStateError(RuntimeError):
    """A stage was requested before its prerequisite state exists."""


class CapacityError(RuntimeError):
    """Scene exceeds the single-pass decode budget (tiling is not allowed)."""


class EditError(ValueError):
    """Invalid edit request (bad region, category, or target state)."""


# --------------------------------------------------------------------------
# latent padding helpers (semantic diffusion latents run as padded cubes)


def pad_latent(x: torch.Tensor, padded: tuple[int, int, int]) -> torch.Tensor:
    """Zero-pad trailing spatial extents up to ``padded`` (start-aligned)."""
    cx, cy, cz = x.shape[-3:]
    px, py, pz = padded
    if cx > px or cy > py or cz > pz:
        raise ValueError(f"cannot pad {(cx, cy, cz)} into smaller {padded}")
    out = x.new_zeros(x.shape[:-3] + tuple(padded))
    out[..., :cx, :cy, :cz] = x
    return out


def crop_latent(x: torch.Tensor, dims: tuple[int, int, int]) -> torch.Tensor:
    return x[..., : dims[0], : dims[1], : dims[2]]


# --------------------------------------------------------------------------
# model set


@dataclass
class SceneModels:
    """All trained components a session needs, plus the shared schedule."""

    preset: GridPreset
    vocabulary: dict[str, int]
    text_encoder: TextEncoder
    context_encoder: SemanticContextEncoder
    semantic_vqvae: VqVaeModel
    geometric_vqvae: VqVaeModel
    semantic_denoiser: LatentUNet
    geometric_denoiser: LatentUNet
    schedule: NoiseSchedule

    @classmethod
    def build(cls, preset: GridPreset, seed: int = 0, vq_width: int = 32,
              sem_base: int = 48, geo_base: int = 32,
              cross_attention: bool = False) -> "SceneModels":
        vocab = build_vocabulary()
        return cls(
            preset=preset,
            vocabulary=vocab,
            text_encoder=build_text_encoder(preset, vocab, seed=seed),
            context_encoder=build_context_encoder(preset, seed=seed + 1),
            semantic_vqvae=build_vqvae("semantic", preset, width=vq_width, seed=seed + 2),
            geometric_vqvae=build_vqvae("geometric", preset, width=vq_width, seed=seed + 3),
            semantic_denoiser=build_semantic_denoiser(
                preset, base=sem_base, cross_attention=cross_attention, seed=seed + 4),
            geometric_denoiser=build_geometric_denoiser(preset, base=geo_base, seed=seed + 5),
            schedule=NoiseSchedule(preset.timesteps),
        )

    def eval(self) -> "SceneModels":
        for m in (self.text_encoder, self.context_encoder, self.semantic_vqvae,
                  self.geometric_vqvae, self.semantic_denoiser, self.geometric_denoiser):
            m.eval()
        return self


# --------------------------------------------------------------------------
# edit requests


def _check_region(region, dims: tuple[int, int, int], what: str) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    try:
        (lo, hi) = region
        lo = tuple(int(c) for c in lo)
        hi = tuple(int(c) for c in hi)
    except (TypeError, ValueError):
        raise EditError(f"{what} must be two integer corner voxels, got {region!r}")
    if len(lo) != 3 or len(hi) != 3:
        raise EditError(f"{what} corners must be 3-D, got {region!r}")
    if any(a >= b for a, b in zip(lo, hi)):
        raise EditError(f"{what} corners must satisfy min < max per axis, got {region!r}")
    if any(a < 0 for a in lo) or any(b > d for b, d in zip(hi, dims)):
        raise EditError(f"{what} {lo}..{hi} outside scene bounds {dims}")
    return lo, hi


@dataclass(frozen=True)
class EditRequest:
    """One localized edit in semantic-voxel coordinates.

    ``region`` (and ``target_region`` for move/resize) are half-open integer
    boxes given as (min_corner, max_corner).  ``category`` is the semantic
    channel written by add/replace (object channels only).
    """

    op: str
    region: tuple[tuple[int, int, int], tuple[int, int, int]]
    category: Optional[int] = None
    target_region: Optional[tuple[tuple[int, int, int], tuple[int, int, int]]] = None

    def __post_init__(self):
        if self.op not in EDIT_OPS:
            raise EditError(f"unknown edit op {self.op!r}; expected one of {EDIT_OPS}")


def _box_slices(lo, hi) -> tuple[slice, slice, slice]:
    return tuple(slice(a, b) for a, b in zip(lo, hi))


# --------------------------------------------------------------------------
# session


class SceneSession:
    """One generated scene: latents, decoded maps, captions, and rng.

    A session is a single logical writer; callers must serialize edits.
    The chunk layouts are derived from the preset: the semantic-voxel and
    geometric-latent layouts coincide cell-for-cell (each semantic voxel is
    exactly one geometric latent cell), which is what lets semantic edits
    address geometric latents directly.
    """

    def __init__(self, models: SceneModels, scene_chunks: tuple[int, int],
                 captions: list[str], seed: int = 0,
                 edit_steps: Optional[int] = None,
                 decode_budget_cells: int = DEFAULT_DECODE_BUDGET):
        preset = models.preset
        self.models = models.eval()
        self.sem_voxel_layout = preset.sem_layout(scene_chunks)
        self.sem_latent_layout = self.sem_voxel_layout.scaled(LATENT_FACTOR)
        self.geo_voxel_layout = preset.geo_layout(scene_chunks)
        self.geo_latent_layout = self.geo_voxel_layout.scaled(LATENT_FACTOR)
        assert self.geo_latent_layout.chunk_dims_vox == self.sem_voxel_layout.chunk_dims_vox
        n = self.sem_latent_layout.n_chunks
        if len(captions) != n:
            raise ValueError(f"expected {n} captions (one per chunk), got {len(captions)}")
        if any(not isinstance(c, str) for c in captions):
            raise ValueError("captions must be strings (empty string = unconditional)")
        if edit_steps is not None and not 1 <= edit_steps <= models.schedule.timesteps:
            raise ValueError(f"edit_steps must be in [1, {models.schedule.timesteps}]")
        self.scene_chunks = tuple(scene_chunks)
        self.captions = list(captions)
        self.seed = int(seed)
        self.edit_steps = edit_steps
        self.decode_budget_cells = int(decode_budget_cells)
        self.rng = torch.Generator().manual_seed(self.seed)
        self.semantic_latents: Optional[torch.Tensor] = None   # (1, X, Y, Z)
        self.geometric_latents: Optional[torch.Tensor] = None  # (1, X, Y, Z)
        self.semantic_scene: Optional[SemanticGrid] = None
        self.geometry_scene: Optional[GeometryGrid] = None
        self.audit_log: list[dict] = []
        self._caption_cache: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}

    # -- conditioning -------------------------------------------------------

    def _caption_features(self, caption: str) -> tuple[torch.Tensor, torch.Tensor]:
        cached = self._caption_cache.get(caption)
        if cached is None:
            tokens = tokenize(caption, self.models.vocabulary)
            cached = encode_text(self.models.text_encoder, tokens)
            self._caption_cache[caption] = cached
        return cached

    def _chunk_context(self, idx) -> torch.Tensor:
        if self.semantic_scene is None:
            raise SessionStateError("semantic scene missing; decode it before "
                                    "geometric synthesis")
        sem_chunk = chunk_of(self.semantic_scene, self.sem_voxel_layout, idx)
        with torch.no_grad():
            return encode_semantic_context(self.models.context_encoder, sem_chunk)

    # -- grid wrappers ------------------------------------------------------

    def semantic_latent_grid(self) -> LatentGrid:
        if self.semantic_latents is None:
            raise SessionStateError("semantic latents not generated yet")
        return LatentGrid(
            data=self.semantic_latents.numpy(),
            space_tag="semantic",
            cell_size_m=self.models.preset.sem_voxel_m * LATENT_FACTOR,
        )

    def geometric_latent_grid(self) -> LatentGrid:
        if self.geometric_latents is None:
            raise SessionStateError("geometric latents not generated yet")
        return LatentGrid(
            data=self.geometric_latents.numpy(),
            space_tag="geometric",
            cell_size_m=self.models.preset.geo_voxel_m * LATENT_FACTOR,
        )


# --------------------------------------------------------------------------
# synthesis stages


def _window_tensors(scene: torch.Tensor, layout: ChunkLayout, idx):
    """known/mask chunk tensors (1, 1, cx, cy, cz) for outpainting chunk idx."""
    win = layout.window(idx)
    known_np = layout.known_before(idx)
    known = scene[(slice(None),) + win].unsqueeze(0).clone()
    mask = torch.from_numpy(known_np.astype(np.float32))[None, None]
    return win, known, mask, 1.0 - float(known_np.mean())


def generate_semantic_scene(session: SceneSession) -> LatentGrid:
    """Outpaint all semantic latent chunks in traversal order."""
    models = session.models
    layout = session.sem_latent_layout
    if len(session.captions) != layout.n_chunks:
        raise ValueError("captions do not cover the layout")
    scene = torch.zeros((1,) + layout.scene_dims_vox)
    chunk_dims = models.preset.sem_latent_chunk
    padded = models.preset.sem_latent_padded
    for k, idx in enumerate(layout.traversal):
        feats, tok_mask = session._caption_features(session.captions[k])
        cond = {"text": feats, "text_mask": tok_mask}
        win, known, mask, unknown_frac = _window_tensors(scene, layout, idx)
        with torch.no_grad():
            out = sample(models.semantic_denoiser, models.schedule,
                         (1, 1) + padded, cond,
                         known=pad_latent(known, padded),
                         mask=pad_latent(mask, padded),
                         generator=session.rng)
        scene[(slice(None),) + win] = crop_latent(out, chunk_dims)[0]
        session.audit_log.append({"stage": "semantic", "chunk": list(idx),
                                  "unknown_fraction": round(unknown_frac, 4)})
    session.semantic_latents = scene
    session.semantic_scene = None
    session.geometry_scene = None
    return session.semantic_latent_grid()


def decode_semantic_scene(session: SceneSession) -> SemanticGrid:
    """Decode chunk-by-chunk; later chunks overwrite overlap voxels."""
    if session.semantic_latents is None:
        raise SessionStateError("semantic latents not generated yet")
    models = session.models
    lay_l = session.sem_latent_layout
    lay_v = session.sem_voxel_layout
    labels = np.zeros(lay_v.scene_dims_vox, dtype=np.uint8)
    cell_m = models.preset.sem_voxel_m * LATENT_FACTOR
    for idx in lay_l.traversal:
        win = lay_l.window(idx)
        chunk = session.semantic_latents[(slice(None),) + win]
        latent = LatentGrid(data=chunk.numpy(), space_tag="semantic", cell_size_m=cell_m)
        logits = decode_semantic(models.semantic_vqvae, latent)
        labels[lay_v.window(idx)] = np.argmax(logits, axis=0)
    grid = SemanticGrid.from_labels(labels, models.preset.sem_voxel_m)
    session.semantic_scene = grid
    return grid


def generate_geometric_scene(session: SceneSession) -> LatentGrid:
    """Outpaint geometric latent chunks conditioned on the semantic map."""
    if session.semantic_scene is None:
        raise SessionStateError("semantic scene missing; run decode_semantic_scene first")
    models = session.models
    layout = session.geo_latent_layout
    scene = torch.zeros((1,) + layout.scene_dims_vox)
    for idx in layout.traversal:
        cond = {"context": session._chunk_context(idx)}
        win, known, mask, unknown_frac = _window_tensors(scene, layout, idx)
        with torch.no_grad():
            out = sample(models.geometric_denoiser, models.schedule,
                         (1, 1) + layout.chunk_dims_vox, cond,
                         known=known, mask=mask, generator=session.rng)
        scene[(slice(None),) + win] = out[0]
        session.audit_log.append({"stage": "geometric", "chunk": list(idx),
                                  "unknown_fraction": round(unknown_frac, 4)})
    session.geometric_latents = scene
    session.geometry_scene = None
    return session.geometric_latent_grid()


def decode_geometric_scene(session: SceneSession) -> GeometryGrid:
    """One fully-convolutional pass over the whole assembled latent scene."""
    if session.geometric_latents is None:
        raise SessionStateError("geometric latents not generated yet")
    models = session.models
    dims = session.geometric_latents.shape[1:]
    cells = int(np.prod(dims))
    if cells > session.decode_budget_cells:
        raise CapacityError(
            f"scene latent has {cells} cells, over the single-pass decode budget "
            f"of {session.decode_budget_cells}; tiled decoding is not supported "
            f"because blended tiles would reintroduce seams")
    latent = LatentGrid(
        data=session.geometric_latents.numpy(),
        space_tag="geometric",
        cell_size_m=models.preset.geo_voxel_m * LATENT_FACTOR,
    )
    grid = decode_geometric(models.geometric_vqvae, latent)
    session.geometry_scene = grid
    return grid


def synthesize(session: SceneSession,
               progress: Optional[Callable[[str, int, int], None]] = None) -> SceneSession:
    """All four stages in order; ``progress(stage, done, total)`` if given."""
    stages = [
        ("semantic_latents", generate_semantic_scene),
        ("semantic_map", decode_semantic_scene),
        ("geometric_latents", generate_geometric_scene),
        ("geometry", decode_geometric_scene),
    ]
    for i, (name, fn) in enumerate(stages):
        if progress is not None:
            progress(name, i, len(stages))
        fn(session)
    if progress is not None:
        progress("done", len(stages), len(stages))
    return session


# --------------------------------------------------------------------------
# localized editing


def resynthesize_region(session: SceneSession, unknown: np.ndarray,
                        generator: Optional[torch.Generator] = None) -> SceneSession:
    """Regenerate geometric latents under ``unknown`` (bool, latent coords).

    Chunks that do not intersect the region are not touched at all; within
    resampled chunks, cells outside the region are pinned and therefore
    bit-identical afterwards.  An all-false mask is a no-op.
    """
    if session.geometric_latents is None:
        raise SessionStateError("geometric latents not generated yet")
    layout = session.geo_latent_layout
    unknown = np.asarray(unknown, dtype=bool)
    if unknown.shape != layout.scene_dims_vox:
        raise ValueError(f"mask shape {unknown.shape} != latent scene "
                         f"{layout.scene_dims_vox}")
    if not unknown.any():
        return session
    models = session.models
    gen = session.rng if generator is None else generator
    scene = session.geometric_latents
    remaining = unknown.copy()
    for idx in layout.traversal:
        win = layout.window(idx)
        sub = remaining[win]
        if not sub.any():
            continue
        cond = {"context": session._chunk_context(idx)}
        known = scene[(slice(None),) + win].unsqueeze(0).clone()
        mask = torch.from_numpy((~sub).astype(np.float32))[None, None]
        with torch.no_grad():
            out = _masked_window_sample(models, known, mask, cond, gen,
                                        session.edit_steps)
        scene[(slice(None),) + win] = out[0]
        session.audit_log.append({
            "stage": "resynthesis", "chunk": list(idx),
            "unknown_fraction": round(float(sub.mean()), 4)})
        remaining[win] = False
    session.geometry_scene = None
    return session


def _masked_window_sample(models: SceneModels, known: torch.Tensor,
                          mask: torch.Tensor, cond: dict,
                          generator: torch.Generator,
                          edit_steps: Optional[int]) -> torch.Tensor:
    """Masked sampling of one latent window, optionally on a shortened tail.

    With ``edit_steps`` set, the current window is forward-noised to that
    level and only the last ``edit_steps`` reverse steps run — cheaper, at
    the cost of staying closer to the pre-edit content.
    """
    schedule = models.schedule
    if edit_steps is None or edit_steps >= schedule.timesteps:
        return sample(models.geometric_denoiser, schedule, tuple(known.shape),
                      cond, known=known, mask=mask, generator=generator)
    noise = torch.randn(known.shape, generator=generator, dtype=known.dtype)
    x = schedule.forward_sample(known, torch.tensor([edit_steps]), noise)
    pinned = bool(mask.any())
    for t in range(edit_steps, 0, -1):
        if pinned:
            x = inpaint_step(models.geometric_denoiser, schedule, x, t,
                             known, mask, cond, generator)
        else:
            x = denoise_step(models.geometric_denoiser, schedule, x, t,
                             cond, generator)
    return x


def _dominant_object_category(labels: np.ndarray) -> Optional[int]:
    counts = np.bincount(labels.ravel(), minlength=SEM_CHANNELS)
    if counts[2:].sum() == 0:
        return None
    return int(np.argmax(counts[2:])) + 2


def validate_edit(session: SceneSession, request: EditRequest) -> None:
    """Raise if the request cannot be applied; never mutates the session.

    All failure modes of :func:`apply_edit` are checked here up front
    (:class:`SessionStateError` for an incomplete session,
    :class:`EditError` for bad regions/categories), so callers can reject
    a request cheaply before committing to the resampling work.
    """
    if session.semantic_scene is None or session.geometric_latents is None:
        raise SessionStateError("editing needs a fully synthesized scene "
                                "(semantic map and geometric latents)")
    labels = session.semantic_scene.labels()
    dims = labels.shape
    lo, hi = _check_region(request.region, dims, "region")
    sl = _box_slices(lo, hi)
    if request.op in ("add", "replace"):
        if request.category is None or not 2 <= int(request.category) < SEM_CHANNELS:
            raise EditError(f"{request.op} needs an object category in "
                            f"[2, {SEM_CHANNELS - 1}], got {request.category!r}")
        if request.op == "add" and (labels[sl] != FREE_SPACE).any():
            raise EditError("add region is not empty; use replace instead")
    elif request.op == "resize":
        if request.target_region is None:
            raise EditError("resize needs target_region (the new box)")
        _check_region(request.target_region, dims, "target_region")
        if _dominant_object_category(labels[sl]) is None:
            raise EditError("resize region contains no object voxels")
    elif request.op == "move":
        if request.target_region is None:
            raise EditError("move needs target_region")
        nlo, nhi = _check_region(request.target_region, dims, "target_region")
        if tuple(b - a for a, b in zip(lo, hi)) != tuple(b - a for a, b in zip(nlo, nhi)):
            raise EditError("move target_region must have the same shape as region")


def apply_edit(session: SceneSession, request: EditRequest,
               generator: Optional[torch.Generator] = None) -> SceneSession:
    """Apply one semantic edit and regenerate the geometry under it.

    The semantic map is edited in place (voxel labels), the geometric
    latent cells under the edited region are replaced with unit Gaussian
    noise (for move: translated first), and masked sampling re-runs with
    everything outside the region pinned.  The decoded geometry is
    refreshed at the end.
    """
    validate_edit(session, request)
    labels = np.array(session.semantic_scene.labels(), dtype=np.uint8)
    dims = labels.shape
    lo, hi = _check_region(request.region, dims, "region")
    sl = _box_slices(lo, hi)
    edit_mask = np.zeros(dims, dtype=bool)
    gen = session.rng if generator is None else generator
    scene = session.geometric_latents

    if request.op in ("add", "replace"):
        labels[sl] = np.uint8(request.category)
        edit_mask[sl] = True
    elif request.op == "remove":
        box = labels[sl]
        box[box >= 2] = FREE_SPACE  # objects only; structure stays
        labels[sl] = box
        edit_mask[sl] = True
    elif request.op == "resize":
        nlo, nhi = _check_region(request.target_region, dims, "target_region")
        cat = _dominant_object_category(labels[sl])
        box = labels[sl]
        box[box == cat] = FREE_SPACE
        labels[sl] = box
        labels[_box_slices(nlo, nhi)] = np.uint8(cat)
        edit_mask[sl] = True
        edit_mask[_box_slices(nlo, nhi)] = True
    elif request.op == "move":
        nlo, nhi = _check_region(request.target_region, dims, "target_region")
        nsl = _box_slices(nlo, nhi)
        snapshot = labels[sl].copy()
        lat_snapshot = scene[(slice(None),) + sl].clone()
        box = labels[sl]
        box[box >= 2] = FREE_SPACE
        labels[sl] = box
        labels[nsl] = snapshot
        scene[(slice(None),) + nsl] = lat_snapshot
        edit_mask[sl] = True
        edit_mask[nsl] = True

    session.semantic_scene = SemanticGrid.from_labels(
        labels, session.models.preset.sem_voxel_m, origin=session.semantic_scene.origin)
    session.audit_log.append({
        "stage": "edit", "op": request.op,
        "region": [list(lo), list(hi)],
        "edited_cells": int(edit_mask.sum())})

    if request.op == "move":
        # Only the vacated box is noised; the destination keeps the
        # translated latents (which seed the resample when edit_steps < T).
        noise = torch.randn(scene[(slice(None),) + sl].shape, generator=gen)
        scene[(slice(None),) + sl] = noise
    else:
        flat = torch.randn((int(edit_mask.sum()),), generator=gen)
        scene[:, torch.from_numpy(edit_mask)] = flat

    resynthesize_region(session, edit_mask, generator=gen)
    decode_geometric_scene(session)
    return session


# --------------------------------------------------------------------------
# snapshots


def save_snapshot(session: SceneSession, path, checkpoint_id: str = "") -> Path:
    """Serialize latents, decoded maps, captions, layout and rng state."""
    grids: dict[str, object] = {}
    if session.semantic_latents is not None:
        grids["semantic_latents"] = session.semantic_latent_grid()
    if session.geometric_latents is not None:
        grids["geometric_latents"] = session.geometric_latent_grid()
    if session.semantic_scene is not None:
        grids["semantic_map"] = session.semantic_scene
    if session.geometry_scene is not None:
        grids["geometry"] = session.geometry_scene
    grids["rng_state"] = session.rng.get_state().numpy().astype(np.uint8)
    meta = {
        "kind": "scene_snapshot",
        "captions": session.captions,
        "scene_chunks": list(session.scene_chunks),
        "preset": dataclasses.asdict(session.models.preset),
        "seed": session.seed,
        "checkpoint_id": checkpoint_id,
        "audit_log": session.audit_log,
    }
    return write_bundle(path, grids, meta)


def load_snapshot(models: SceneModels, path) -> SceneSession:
    """Rebuild a session from a snapshot written with the same preset."""
    grids, meta = read_bundle(path)
    if meta.get("kind") != "scene_snapshot":
        raise ValueError(f"{path} is not a scene snapshot")
    want = json.loads(json.dumps(dataclasses.asdict(models.preset)))
    if meta.get("preset") != want:
        raise ValueError("snapshot preset does not match the loaded models")
    session = SceneSession(models, tuple(meta["scene_chunks"]), list(meta["captions"]),
                           seed=int(meta.get("seed", 0)))
    session.audit_log = list(meta.get("audit_log", []))
    if "rng_state" in grids:
        session.rng.set_state(torch.from_numpy(
            np.array(grids["rng_state"].data, dtype=np.uint8)))
    if "semantic_latents" in grids:
        session.semantic_latents = torch.from_numpy(
            np.array(grids["semantic_latents"].data, dtype=np.float32))
    if "geometric_latents" in grids:
        session.geometric_latents = torch.from_numpy(
            np.array(grids["geometric_latents"].data, dtype=np.float32))
    if "semantic_map" in grids:
        g = grids["semantic_map"]
        session.semantic_scene = SemanticGrid.from_labels(
            np.array(g.data, dtype=np.uint8), g.voxel_size_m, g.origin)
    if "geometry" in grids:
        g = grids["geometry"]
        session.geometry_scene = GeometryGrid(
            data=np.array(g.data, dtype=np.float32),
            voxel_size_m=g.voxel_size_m, origin=g.origin)
    return session
