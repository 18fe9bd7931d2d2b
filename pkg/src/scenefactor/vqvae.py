"""Fully-convolutional 3D VQ-VAEs with scalar-code quantization.

Two models share one architecture: the semantic autoencoder maps one-hot
category chunks to per-class logits; the geometric autoencoder maps
normalized truncated-distance chunks to sigmoid outputs in [0, 1].  Both
compress 4x per spatial axis into a single-channel latent whose values are
drawn from a scalar codebook.

Quantization uses straight-through gradients for the encoder and an
exponential-moving-average dictionary update (decay 0.99, Laplace-smoothed
counts) with dead-code re-seeding: an entry unused for ``dead_code_steps``
training steps is re-seeded from the current batch of encoder outputs.

Normalization is per-position across channels only (no spatial pooling), so
every layer is exactly translation-equivariant and decoders accept latents
of any spatial size.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .grids import GeometryGrid, LatentGrid, SemanticGrid
from .grids.core import SEM_CHANNELS
from .grids.presets import LATENT_FACTOR, GridPreset

COMMITMENT_WEIGHT = 0.25
EMA_DECAY = 0.99
DEAD_CODE_STEPS = 2000


class TrainingDiverged(RuntimeError):
    """Raised when a training loss stops being finite."""


class ChannelNorm(nn.Module):
    """Layer norm over the channel axis at each spatial position."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(1, channels, 1, 1, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mean) / torch.sqrt(var + self.eps) * self.gamma + self.beta


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm1 = ChannelNorm(channels)
        self.conv1 = nn.Conv3d(channels, channels, 3, padding=1)
        self.norm2 = ChannelNorm(channels)
        self.conv2 = nn.Conv3d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.gelu(self.norm1(x)))
        h = self.conv2(F.gelu(self.norm2(h)))
        return x + h


class Encoder(nn.Module):
    """in -> width, two stride-2 stages (4x total), three residual blocks."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        self.stem = nn.Conv3d(in_channels, width, 3, padding=1)
        self.res1 = ResBlock(width)
        self.down1 = nn.Conv3d(width, width, 4, stride=2, padding=1)
        self.res2 = ResBlock(width)
        self.down2 = nn.Conv3d(width, width, 4, stride=2, padding=1)
        self.res3 = ResBlock(width)
        self.norm = ChannelNorm(width)
        self.head = nn.Conv3d(width, 1, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.res1(self.stem(x))
        h = self.res2(self.down1(h))
        h = self.res3(self.down2(h))
        return self.head(F.gelu(self.norm(h)))


class Decoder(nn.Module):
    """1 -> width, two trilinear 2x upsampling stages, three residual blocks."""

    def __init__(self, out_channels: int, width: int):
        super().__init__()
        self.stem = nn.Conv3d(1, width, 3, padding=1)
        self.res1 = ResBlock(width)
        self.up1 = nn.Conv3d(width, width, 3, padding=1)
        self.res2 = ResBlock(width)
        self.up2 = nn.Conv3d(width, width, 3, padding=1)
        self.res3 = ResBlock(width)
        self.norm = ChannelNorm(width)
        self.head = nn.Conv3d(width, out_channels, 3, padding=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.res1(self.stem(z))
        h = F.interpolate(h, scale_factor=2, mode="trilinear", align_corners=False)
        h = self.res2(self.up1(h))
        h = F.interpolate(h, scale_factor=2, mode="trilinear", align_corners=False)
        h = self.res3(self.up2(h))
        return self.head(F.gelu(self.norm(h)))

    def receptive_radius(self) -> int:
        """Output-voxel radius a single input cell can influence.

        Mirrors :meth:`forward` with interval arithmetic: a window-k
        convolution widens the reach by k//2 cells at the current scale,
        and trilinear 2x upsampling doubles it plus one interpolation tap
        (a cell at position i feeds outputs 2i-1..2i+2).
        """
        def conv_r(conv: nn.Conv3d) -> int:
            return conv.weight.shape[-1] // 2

        def res_r(block: ResBlock) -> int:
            return conv_r(block.conv1) + conv_r(block.conv2)

        r = conv_r(self.stem) + res_r(self.res1)
        r = 2 * r + 1
        r += conv_r(self.up1) + res_r(self.res2)
        r = 2 * r + 1
        r += conv_r(self.up2) + res_r(self.res3)
        return r + conv_r(self.head)


class ScalarCodebook(nn.Module):
    """Dictionary of scalar codes with EMA updates and usage tracking.

    State lives in buffers so it is saved/restored with the model but never
    touched by the optimizer.
    """

    def __init__(self, size: int, init_values: Optional[torch.Tensor] = None,
                 decay: float = EMA_DECAY, laplace_eps: float = 1e-5,
                 dead_code_steps: int = DEAD_CODE_STEPS):
        super().__init__()
        if size < 0:
            raise ValueError(f"codebook size must be >= 0, got {size}")
        if init_values is None:
            init_values = torch.linspace(-1.0, 1.0, size) if size else torch.zeros(0)
        init_values = init_values.detach().float().reshape(-1)
        if init_values.numel() != size:
            raise ValueError(f"expected {size} init values, got {init_values.numel()}")
        self.decay = decay
        self.laplace_eps = laplace_eps
        self.dead_code_steps = dead_code_steps
        self.register_buffer("entries", init_values.clone())
        self.register_buffer("ema_counts", torch.ones(size))
        self.register_buffer("ema_sums", init_values.clone())
        self.register_buffer("last_used", torch.zeros(size, dtype=torch.long))
        self.register_buffer("step", torch.zeros((), dtype=torch.long))

    @property
    def size(self) -> int:
        return int(self.entries.numel())

    def nearest(self, values: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Nearest entry per value; ties resolve to the lowest index."""
        if self.size == 0:
            raise ValueError("empty codebook")
        flat = values.detach().reshape(-1)
        if not bool(torch.isfinite(flat).all()):
            raise ValueError("cannot quantize non-finite latent values")
        idx = torch.empty(flat.numel(), dtype=torch.long)
        arange = torch.arange(self.size)
        for lo in range(0, flat.numel(), 16384):
            chunk = flat[lo:lo + 16384]
            dist = (chunk.unsqueeze(1) - self.entries.unsqueeze(0)).abs()
            is_min = dist == dist.min(dim=1, keepdim=True).values
            idx[lo:lo + chunk.numel()] = torch.where(is_min, arange, self.size).min(dim=1).values
        idx = idx.reshape(values.shape)
        return self.entries[idx].to(values.dtype), idx

    def forward(self, pre: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor,
                                                  torch.Tensor, torch.Tensor]:
        """(straight-through quantized, indices, codebook term, commitment term)."""
        q, idx = self.nearest(pre)
        codebook_term = F.mse_loss(q, pre.detach())
        commitment_term = COMMITMENT_WEIGHT * F.mse_loss(pre, q.detach())
        quantized = pre + (q - pre).detach()
        return quantized, idx, codebook_term, commitment_term

    @torch.no_grad()
    def ema_update(self, pre: torch.Tensor, idx: torch.Tensor,
                   generator: Optional[torch.Generator] = None) -> None:
        flat = pre.detach().reshape(-1).float()
        flat_idx = idx.reshape(-1)
        counts = torch.bincount(flat_idx, minlength=self.size).float()
        sums = torch.zeros(self.size).index_add_(0, flat_idx, flat)
        self.ema_counts.mul_(self.decay).add_(counts, alpha=1.0 - self.decay)
        self.ema_sums.mul_(self.decay).add_(sums, alpha=1.0 - self.decay)
        total = self.ema_counts.sum()
        smoothed = ((self.ema_counts + self.laplace_eps)
                    / (total + self.size * self.laplace_eps) * total)
        self.entries.copy_(self.ema_sums / smoothed)
        self.step.add_(1)
        self.last_used[counts > 0] = int(self.step)
        dead = (int(self.step) - self.last_used) >= self.dead_code_steps
        if bool(dead.any()):
            pick = torch.randint(flat.numel(), (int(dead.sum()),), generator=generator)
            seeds = flat[pick]
            self.entries[dead] = seeds
            self.ema_sums[dead] = seeds
            self.ema_counts[dead] = 1.0
            self.last_used[dead] = int(self.step)

    def usage_perplexity(self, idx: torch.Tensor) -> float:
        probs = torch.bincount(idx.reshape(-1), minlength=self.size).float()
        probs = probs / probs.sum()
        entropy = -(probs[probs > 0] * probs[probs > 0].log()).sum()
        return float(entropy.exp())


def quantize(codebook: ScalarCodebook, pre_latent: torch.Tensor,
             ) -> tuple[torch.Tensor, torch.Tensor, dict[str, torch.Tensor]]:
    """Quantize encoder outputs; returns loss terms keyed by name."""
    quantized, idx, codebook_term, commitment_term = codebook(pre_latent)
    return quantized, idx, {"codebook": codebook_term, "commitment": commitment_term}


class VqVaeModel(nn.Module):
    """Encoder + scalar codebook + fully-convolutional decoder for one space."""

    def __init__(self, space_tag: str, codebook_size: int, width: int = 32):
        super().__init__()
        if space_tag not in ("semantic", "geometric"):
            raise ValueError(f"unknown space_tag {space_tag!r}")
        channels = SEM_CHANNELS if space_tag == "semantic" else 1
        self.space_tag = space_tag
        self.width = width
        self.encoder = Encoder(channels, width)
        self.decoder = Decoder(channels, width)
        self.codebook = ScalarCodebook(codebook_size)

    def encode_tensor(self, x: torch.Tensor) -> torch.Tensor:
        """Batched chunks (B, C, X, Y, Z) -> pre-quantization latents (B, 1, x, y, z)."""
        for d in x.shape[2:]:
            if d % LATENT_FACTOR:
                raise ValueError(
                    f"chunk dims {tuple(x.shape[2:])} not divisible by {LATENT_FACTOR}")
        return self.encoder(x)

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        out = self.decoder(z)
        if self.space_tag == "geometric":
            out = torch.sigmoid(out)
        return out


def build_vqvae(space_tag: str, preset: GridPreset, width: int = 32,
                seed: int = 0) -> VqVaeModel:
    codebook = preset.codebook_sem if space_tag == "semantic" else preset.codebook_geo
    torch.manual_seed(seed)
    return VqVaeModel(space_tag, codebook, width)


# ----------------------------------------------------------- grid adapters


def _chunk_tensor(model: VqVaeModel, chunk: SemanticGrid | GeometryGrid) -> torch.Tensor:
    if model.space_tag == "semantic":
        if not isinstance(chunk, SemanticGrid):
            raise TypeError(f"semantic model cannot encode {type(chunk).__name__}")
        return torch.from_numpy(np.array(chunk.data, dtype=np.float32)).unsqueeze(0)
    if not isinstance(chunk, GeometryGrid):
        raise TypeError(f"geometric model cannot encode {type(chunk).__name__}")
    return torch.from_numpy(np.array(chunk.data, dtype=np.float32))[None, None]


@torch.no_grad()
def encode(model: VqVaeModel, chunk: SemanticGrid | GeometryGrid) -> LatentGrid:
    """Chunk -> quantized single-channel latent at 1/4 resolution per axis."""
    model.eval()
    x = _chunk_tensor(model, chunk)
    pre = model.encode_tensor(x)
    q, idx = model.codebook.nearest(pre)
    return LatentGrid(
        data=q[0].numpy(),
        space_tag=model.space_tag,
        code_indices=idx[0, 0].numpy(),
        cell_size_m=chunk.voxel_size_m * LATENT_FACTOR,
        origin=chunk.origin,
    )


def _check_latent(model: VqVaeModel, latent: LatentGrid, expected_tag: str) -> torch.Tensor:
    if model.space_tag != expected_tag or latent.space_tag != expected_tag:
        raise ValueError(
            f"space_tag mismatch: model={model.space_tag!r}, latent={latent.space_tag!r}, "
            f"expected {expected_tag!r}")
    return torch.from_numpy(np.array(latent.data, dtype=np.float32)).unsqueeze(0)


@torch.no_grad()
def decode_geometric(model: VqVaeModel, latent: LatentGrid) -> GeometryGrid:
    """Latent -> normalized distance grid, 4x the latent extent per axis."""
    model.eval()
    z = _check_latent(model, latent, "geometric")
    out = model.decode_tensor(z).clamp(0.0, 1.0)
    return GeometryGrid(
        data=out[0, 0].numpy(),
        voxel_size_m=latent.cell_size_m / LATENT_FACTOR,
        origin=latent.origin,
    )


@torch.no_grad()
def decode_semantic(model: VqVaeModel, latent: LatentGrid) -> np.ndarray:
    """Latent -> per-class logits (10, X, Y, Z), 4x the latent extent."""
    model.eval()
    z = _check_latent(model, latent, "semantic")
    return model.decode_tensor(z)[0].numpy()


def semantic_from_logits(logits: np.ndarray, voxel_size_m: float,
                         origin=(0.0, 0.0, 0.0)) -> SemanticGrid:
    labels = np.argmax(logits, axis=0)
    return SemanticGrid.from_labels(labels, voxel_size_m, origin)


# ------------------------------------------------------------- objectives


def semantic_nll(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean per-voxel negative log softmax probability of the true channel."""
    return F.cross_entropy(logits, labels)


def semantic_voxel_accuracy(logits: torch.Tensor, labels: torch.Tensor) -> float:
    return float((logits.argmax(dim=1) == labels).float().mean())


# --------------------------------------------------------------- training


@dataclass
class VqTrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    seed: int = 0
    log_every: int = 50
    early_stop_recon: Optional[float] = None
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("steps and batch_size must be >= 1 and lr > 0")


def _stack_chunks(model: VqVaeModel,
                  chunks: Sequence[SemanticGrid | GeometryGrid]) -> torch.Tensor:
    if len(chunks) == 0:
        raise ValueError("empty training dataset")
    tensors = [_chunk_tensor(model, c) for c in chunks]
    dims = {t.shape for t in tensors}
    if len(dims) != 1:
        raise ValueError(f"training chunks must share one shape, got {sorted(dims)}")
    return torch.cat(tensors, dim=0)


def train_vqvae(model: VqVaeModel, chunks: Sequence[SemanticGrid | GeometryGrid],
                config: VqTrainConfig) -> list[dict]:
    """Optimize reconstruction + quantization losses; returns the loss curve.

    The reported loss is reconstruction + codebook + commitment terms; the
    dictionary itself is updated by EMA rather than gradients.  A non-finite
    loss aborts with diagnostics.
    """
    data = _stack_chunks(model, chunks)
    if model.space_tag == "semantic":
        targets = data.argmax(dim=1)
    else:
        targets = data
    gen = torch.Generator().manual_seed(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr,
                                 weight_decay=config.weight_decay)
    model.train()
    history: list[dict] = []

    def record(step: int, recon, codebook_term, commit, idx):
        r, cb, cm = (float(v.detach()) for v in (recon, codebook_term, commit))
        history.append({
            "step": step,
            "loss": r + cb + cm,
            "recon": r,
            "codebook": cb,
            "commitment": cm,
            "perplexity": model.codebook.usage_perplexity(idx),
        })

    for step in range(1, config.steps + 1):
        pick = torch.randint(data.shape[0], (min(config.batch_size, data.shape[0]),),
                             generator=gen)
        batch = data[pick]
        pre = model.encode_tensor(batch)
        if not bool(torch.isfinite(pre).all()):
            raise TrainingDiverged(
                f"non-finite encoder output at step {step} (space={model.space_tag}); "
                f"last logged losses: {history[-3:]}")
        quantized, idx, codebook_term, commit = model.codebook(pre)
        out = model.decode_tensor(quantized)
        if model.space_tag == "semantic":
            recon = semantic_nll(out, targets[pick])
        else:
            recon = F.l1_loss(out, targets[pick])
        loss = recon + commit
        if not bool(torch.isfinite(loss)):
            record(step, recon, codebook_term, commit, idx)
            raise TrainingDiverged(
                f"non-finite loss at step {step}: recon={float(recon.detach())}, "
                f"commitment={float(commit.detach())} (space={model.space_tag})")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        model.codebook.ema_update(pre, idx, generator=gen)
        if step % config.log_every == 0 or step == config.steps or step == 1:
            record(step, recon, codebook_term, commit, idx)
        if (config.early_stop_recon is not None
                and float(recon.detach()) < config.early_stop_recon):
            record(step, recon, codebook_term, commit, idx)
            break
    model.eval()
    return history
