"""Named resolution presets tying the grid hierarchy together.

A preset fixes voxel sizes, chunk extents, codebook capacities and the
diffusion step count.  "paper" is the full-scale configuration; "desk" is
exactly half the resolution per axis (double the voxel size over the same
physical extents) with smaller capacities, sized to train on a CPU.

Resolution chain (per preset): geometric voxels are 4x finer than semantic
voxels; VQ-VAE latents compress 4x per axis, so geometric latent cells align
one-to-one with semantic voxels.  Diffusion chunks are twice the cubic
VQ-VAE training chunks along both horizontal axes.
"""
from __future__ import annotations

from dataclasses import dataclass

from .chunks import ChunkLayout

#: Spatial compression factor of the VQ-VAE latents, per axis.
LATENT_FACTOR = 4


@dataclass(frozen=True)
class GridPreset:
    name: str
    sem_voxel_m: float
    geo_voxel_m: float
    vq_chunk_sem: int                      # cubic, semantic voxels
    vq_chunk_geo: int                      # cubic, geometric voxels
    diff_chunk_sem: tuple[int, int, int]   # semantic voxels
    diff_chunk_geo: tuple[int, int, int]   # geometric voxels
    codebook_sem: int
    codebook_geo: int
    timesteps: int
    d_ctx: int                             # text feature dim
    context_channels: int                  # semantic context grid channels

    def __post_init__(self):
        if abs(self.geo_voxel_m * LATENT_FACTOR - self.sem_voxel_m) > 1e-9:
            raise ValueError("semantic voxels must be exactly 4x geometric voxels")
        for c in (self.vq_chunk_sem, self.vq_chunk_geo):
            if c % LATENT_FACTOR:
                raise ValueError(f"VQ chunk size {c} not divisible by {LATENT_FACTOR}")
        for dims in (self.diff_chunk_sem, self.diff_chunk_geo):
            if any(d % LATENT_FACTOR for d in dims):
                raise ValueError(f"diffusion chunk {dims} not divisible by {LATENT_FACTOR}")
        gx, gy, gz = self.diff_chunk_geo
        sx, sy, sz = self.diff_chunk_sem
        if (gx, gy, gz) != (sx * LATENT_FACTOR, sy * LATENT_FACTOR, sz * LATENT_FACTOR):
            raise ValueError("geometric diffusion chunk must be 4x the semantic one per axis")

    # -- latent shapes -------------------------------------------------------
    @property
    def sem_latent_chunk(self) -> tuple[int, int, int]:
        """Semantic diffusion-chunk latent dims (before cube padding)."""
        x, y, z = self.diff_chunk_sem
        return (x // LATENT_FACTOR, y // LATENT_FACTOR, z // LATENT_FACTOR)

    @property
    def sem_latent_padded(self) -> tuple[int, int, int]:
        """Semantic latent dims zero-padded to a cube for the denoiser."""
        m = max(self.sem_latent_chunk)
        return (m, m, m)

    @property
    def geo_latent_chunk(self) -> tuple[int, int, int]:
        x, y, z = self.diff_chunk_geo
        return (x // LATENT_FACTOR, y // LATENT_FACTOR, z // LATENT_FACTOR)

    # -- scene layouts -------------------------------------------------------
    def sem_layout(self, scene_chunks: tuple[int, int]) -> ChunkLayout:
        return ChunkLayout(scene_chunks, self.diff_chunk_sem)

    def geo_layout(self, scene_chunks: tuple[int, int]) -> ChunkLayout:
        return ChunkLayout(scene_chunks, self.diff_chunk_geo)

    def scene_extent_m(self, scene_chunks: tuple[int, int]) -> tuple[float, float, float]:
        x, y, z = self.sem_layout(scene_chunks).scene_dims_vox
        return (x * self.sem_voxel_m, y * self.sem_voxel_m, z * self.sem_voxel_m)


PAPER = GridPreset(
    name="paper",
    sem_voxel_m=0.168,
    geo_voxel_m=0.042,
    vq_chunk_sem=16,
    vq_chunk_geo=64,
    diff_chunk_sem=(32, 16, 32),
    diff_chunk_geo=(128, 64, 128),
    codebook_sem=8192,
    codebook_geo=32768,
    timesteps=1000,
    d_ctx=1280,
    context_channels=128,
)

DESK = GridPreset(
    name="desk",
    sem_voxel_m=0.336,
    geo_voxel_m=0.084,
    vq_chunk_sem=8,
    vq_chunk_geo=32,
    diff_chunk_sem=(16, 8, 16),
    diff_chunk_geo=(64, 32, 64),
    codebook_sem=512,
    codebook_geo=1024,
    timesteps=64,
    d_ctx=128,
    context_channels=64,
)

_PRESETS = {p.name: p for p in (PAPER, DESK)}


def get_preset(name: str) -> GridPreset:
    try:
        return _PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(_PRESETS)}") from None
