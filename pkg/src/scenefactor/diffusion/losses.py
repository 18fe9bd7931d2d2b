"""Single-batch training objectives for the two denoising stages.

Each step draws one uniform timestep per sample, forms the noisy latent
with the forward kernel, and regresses the model output onto the v
target — mean absolute error for the semantic stage, mean squared error
for the geometric stage.  Non-finite inputs or losses abort training.
"""
from __future__ import annotations

from typing import Optional

import torch

from ..vqvae import TrainingDiverged
from .sampling import Denoiser
from .schedule import NoiseSchedule


def _draw_t_eps(schedule: NoiseSchedule, x0: torch.Tensor,
                generator: Optional[torch.Generator]) -> tuple[torch.Tensor, torch.Tensor]:
    t = torch.randint(1, schedule.timesteps + 1, (x0.shape[0],), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    return t, eps


def _v_regression(model: Denoiser, schedule: NoiseSchedule, x0: torch.Tensor,
                  cond: dict, generator: Optional[torch.Generator],
                  squared: bool) -> torch.Tensor:
    if not torch.isfinite(x0).all():
        raise TrainingDiverged("denoiser training saw non-finite latents")
    t, eps = _draw_t_eps(schedule, x0, generator)
    x_t = schedule.forward_sample(x0, t, eps)
    v = schedule.v_from(x0, eps, t)
    v_hat = model(x_t, t, cond)
    diff = v_hat - v
    loss = (diff.square() if squared else diff.abs()).mean()
    if not torch.isfinite(loss):
        raise TrainingDiverged("denoiser training loss is non-finite")
    return loss


def train_step_semantic(model: Denoiser, schedule: NoiseSchedule, latents: torch.Tensor,
                        text: torch.Tensor, text_mask: torch.Tensor,
                        generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Mean |v̂ − v| over a batch of caption-conditioned layout latents."""
    cond = {"text": text, "text_mask": text_mask}
    return _v_regression(model, schedule, latents, cond, generator, squared=False)


def train_step_geometric(model: Denoiser, schedule: NoiseSchedule, latents: torch.Tensor,
                         context: torch.Tensor,
                         generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Mean (v̂ − v)² over a batch of context-conditioned geometry latents."""
    return _v_regression(model, schedule, latents, {"context": context},
                         generator, squared=True)
