"""Ancestral sampling and mask-composed inpainting steps.

A denoiser is any callable ``model(x_t, t, cond) -> v_hat`` where ``t`` is a
per-sample long tensor.  Steps operate on ``(B, C, X, Y, Z)`` tensors (any
trailing layout works; coefficients broadcast from the batch axis).

Inpainting composes, at every step, a freshly noised version of the known
signal with the model's denoised unknown region:

    out = mask * known_branch + (1 - mask) * denoise_branch

where ``known_branch ~ N(sqrt(alpha_bar_{t-1}) * known, (1 - alpha_bar_{t-1}) I)``.
At t = 1 the known branch is exact (alpha_bar_0 = 1, zero variance, no rng
draw), so a fully masked final step returns ``known`` bit-for-bit.  The
denoise branch draws from the generator *first*, so with an all-zero mask a
single step reproduces ``denoise_step`` under an identical rng stream.
"""
from __future__ import annotations

from typing import Callable, Optional

import torch

from .schedule import NoiseSchedule

Denoiser = Callable[[torch.Tensor, torch.Tensor, Optional[torch.Tensor]], torch.Tensor]


def _randn_like(x: torch.Tensor, generator: Optional[torch.Generator]) -> torch.Tensor:
    return torch.randn(x.shape, generator=generator, dtype=x.dtype, device=x.device)


def _batch_t(t: int, x: torch.Tensor) -> torch.Tensor:
    return torch.full((x.shape[0],), int(t), dtype=torch.long, device=x.device)


def denoise_step(model: Denoiser, schedule: NoiseSchedule, x_t: torch.Tensor,
                 t: int, cond: Optional[torch.Tensor] = None,
                 generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """One ancestral step x_t -> x_{t-1}; deterministic at t = 1."""
    t = int(t)
    if t < 1 or t > schedule.timesteps:
        raise ValueError(f"denoise_step needs 1 <= t <= {schedule.timesteps}, got {t}")
    v_hat = model(x_t, _batch_t(t, x_t), cond)
    if v_hat.shape != x_t.shape:
        raise ValueError(f"model output shape {tuple(v_hat.shape)} != input {tuple(x_t.shape)}")
    x0_hat = schedule.x0_from(x_t, v_hat, t)
    mean = schedule.posterior_mean(x0_hat, x_t, t)
    if t == 1:
        return mean
    _, _, variance = schedule.posterior_coefficients(t)
    sigma = NoiseSchedule._broadcast(variance.sqrt(), x_t)
    return mean + sigma * _randn_like(x_t, generator)


def _check_mask(mask: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    if mask.shape != x.shape:
        raise ValueError(f"mask shape {tuple(mask.shape)} != latent shape {tuple(x.shape)}")
    vals = torch.unique(mask)
    if not bool(((vals == 0) | (vals == 1)).all()):
        raise ValueError("mask must contain only 0 and 1")
    return mask.to(x.dtype)


def inpaint_step(model: Denoiser, schedule: NoiseSchedule, x_t: torch.Tensor,
                 t: int, known: torch.Tensor, mask: torch.Tensor,
                 cond: Optional[torch.Tensor] = None,
                 generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """One masked step; mask = 1 marks cells pinned to ``known``."""
    m = _check_mask(mask, x_t)
    if known.shape != x_t.shape:
        raise ValueError(f"known shape {tuple(known.shape)} != latent shape {tuple(x_t.shape)}")
    x_unknown = denoise_step(model, schedule, x_t, t, cond, generator)
    ab_prev = schedule.alpha_bars[int(t) - 1].to(x_t.dtype)
    if t > 1:
        x_known = ab_prev.sqrt() * known + (1.0 - ab_prev).sqrt() * _randn_like(x_t, generator)
    else:
        x_known = known
    return m * x_known + (1.0 - m) * x_unknown


def sample(model: Denoiser, schedule: NoiseSchedule, shape: tuple[int, ...],
           cond: Optional[torch.Tensor] = None,
           known: Optional[torch.Tensor] = None,
           mask: Optional[torch.Tensor] = None,
           generator: Optional[torch.Generator] = None,
           dtype: torch.dtype = torch.float32,
           resample_n: int = 1,
           callback: Optional[Callable[[int, torch.Tensor], None]] = None) -> torch.Tensor:
    """Full ancestral loop t = T..1 from pure noise; optionally mask-composed.

    A ``None`` or all-zero mask runs the plain denoising path so the rng
    stream (and therefore the output) matches unconditional sampling.
    ``resample_n > 1`` repeats each masked step that many times, re-noising
    the intermediate back to level t with the one-step forward kernel
    between repeats (experimental; default is a single pass).
    """
    if resample_n < 1:
        raise ValueError(f"resample_n must be >= 1, got {resample_n}")
    x = torch.randn(shape, generator=generator, dtype=dtype)
    inpainting = mask is not None and bool(mask.any())
    if inpainting:
        if known is None:
            raise ValueError("mask given without known signal")
        known = known.to(dtype)
        mask = mask.to(dtype)
    for t in range(schedule.timesteps, 0, -1):
        if inpainting:
            repeats = resample_n if t > 1 else 1
            for r in range(repeats):
                if r > 0:
                    alpha = schedule.alphas[t].to(dtype)
                    beta = schedule.betas[t].to(dtype)
                    x = alpha.sqrt() * x + beta.sqrt() * _randn_like(x, generator)
                x = inpaint_step(model, schedule, x, t, known, mask, cond, generator)
        else:
            x = denoise_step(model, schedule, x, t, cond, generator)
        if callback is not None:
            callback(t, x)
    return x
