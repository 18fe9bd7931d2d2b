"""Denoising-diffusion noise schedule and v-parameterization algebra.

Tables are indexed t = 0..T with the t = 0 convention beta_0 = 0 and
alpha_bar_0 = 1.  The linear beta ramp is scaled by (reference_steps / T)
so that shortened schedules keep the terminal signal-to-noise of the
reference-length schedule: x_T stays approximately standard normal for
any supported T.

The model target is the v parameterization over the clean signal:
    v_t = sqrt(alpha_bar_t) * eps - sqrt(1 - alpha_bar_t) * x0
with exact inverses
    x0  = sqrt(alpha_bar_t) * x_t - sqrt(1 - alpha_bar_t) * v_t
    eps = sqrt(1 - alpha_bar_t) * x_t + sqrt(alpha_bar_t) * v_t.
"""
from __future__ import annotations

import torch


class NoiseSchedule:
    """Linear-beta DDPM schedule with float64 tables."""

    def __init__(self, timesteps: int, beta_start: float = 1e-4,
                 beta_end: float = 2e-2, reference_steps: int = 1000):
        if timesteps < 2:
            raise ValueError(f"need at least 2 timesteps, got {timesteps}")
        if not (0.0 < beta_start < beta_end):
            raise ValueError(f"need 0 < beta_start < beta_end, got {beta_start}, {beta_end}")
        scale = reference_steps / timesteps
        ramp = torch.linspace(beta_start, beta_end, timesteps, dtype=torch.float64) * scale
        if ramp[-1] >= 1.0:
            raise ValueError(
                f"terminal beta {float(ramp[-1]):.4f} >= 1; "
                f"timesteps={timesteps} is too short for reference_steps={reference_steps}")
        self.timesteps = int(timesteps)
        self.betas = torch.cat([torch.zeros(1, dtype=torch.float64), ramp])
        self.alphas = 1.0 - self.betas
        self.alpha_bars = torch.cumprod(self.alphas, dim=0)

    # ------------------------------------------------------------ helpers

    def _check_t(self, t, lowest: int) -> torch.Tensor:
        ts = torch.as_tensor(t, dtype=torch.long)
        if ts.numel() == 0:
            raise ValueError("empty timestep tensor")
        if int(ts.min()) < lowest or int(ts.max()) > self.timesteps:
            raise ValueError(
                f"timestep out of range [{lowest}, {self.timesteps}]: {t}")
        return ts

    def _gather(self, table: torch.Tensor, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        """Per-sample coefficients shaped to broadcast against ``like``."""
        coef = table[t].to(like.dtype)
        if coef.ndim == 0:
            return coef
        return coef.reshape(coef.shape + (1,) * (like.ndim - coef.ndim))

    # ---------------------------------------------------------- forward

    def forward_sample(self, x0: torch.Tensor, t, noise: torch.Tensor) -> torch.Tensor:
        """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise; t may be 0..T."""
        if noise.shape != x0.shape:
            raise ValueError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
        ts = self._check_t(t, lowest=0)
        ab = self._gather(self.alpha_bars, ts, x0)
        return ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise

    def v_from(self, x0: torch.Tensor, eps: torch.Tensor, t) -> torch.Tensor:
        ts = self._check_t(t, lowest=0)
        ab = self._gather(self.alpha_bars, ts, x0)
        return ab.sqrt() * eps - (1.0 - ab).sqrt() * x0

    def x0_from(self, x_t: torch.Tensor, v: torch.Tensor, t) -> torch.Tensor:
        ts = self._check_t(t, lowest=0)
        ab = self._gather(self.alpha_bars, ts, x_t)
        return ab.sqrt() * x_t - (1.0 - ab).sqrt() * v

    def eps_from(self, x_t: torch.Tensor, v: torch.Tensor, t) -> torch.Tensor:
        ts = self._check_t(t, lowest=0)
        ab = self._gather(self.alpha_bars, ts, x_t)
        return (1.0 - ab).sqrt() * x_t + ab.sqrt() * v

    # --------------------------------------------------------- posterior

    def posterior_coefficients(self, t) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(coef on x0_hat, coef on x_t, variance) of q(x_{t-1} | x_t, x0).

        mean = coef_x0 * x0_hat + coef_xt * x_t;  the t = 1 step has zero
        variance (the final draw is deterministic).
        """
        ts = self._check_t(t, lowest=1)
        beta = self.betas[ts]
        alpha = self.alphas[ts]
        ab = self.alpha_bars[ts]
        ab_prev = self.alpha_bars[ts - 1]
        coef_x0 = ab_prev.sqrt() * beta / (1.0 - ab)
        coef_xt = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab)
        variance = (1.0 - ab_prev) / (1.0 - ab) * beta
        return coef_x0, coef_xt, variance

    def posterior_mean(self, x0_hat: torch.Tensor, x_t: torch.Tensor, t) -> torch.Tensor:
        coef_x0, coef_xt, _ = self.posterior_coefficients(t)
        c0 = self._broadcast(coef_x0, x_t)
        cx = self._broadcast(coef_xt, x_t)
        return c0 * x0_hat + cx * x_t

    @staticmethod
    def _broadcast(coef: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        coef = coef.to(like.dtype)
        if coef.ndim == 0:
            return coef
        return coef.reshape(coef.shape + (1,) * (like.ndim - coef.ndim))
