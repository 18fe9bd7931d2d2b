"""Conditional 3D UNet denoisers for the two latent spaces.

Both denoisers predict v targets on single-channel latent grids and embed
the timestep with a sinusoidal MLP.  They differ in conditioning:

- ``text_attention`` (semantic stage): at every resolution the latent
  attends over a joint token set in which latent positions supply queries
  and keys while caption tokens contribute the injected values (their
  key rows exist only to address them); padding tokens are masked out.
  A conventional query-latent/key-value-text variant sits behind
  ``cross_attention=True``.
- ``conv_semantic_attention`` (geometric stage): global softmax attention
  whose query projection is a window-3 convolution over the latent and
  whose key/value projections are window-3 convolutions over the semantic
  context grid, trilinearly resized to the latent's resolution at each
  level.  With all non-center kernel taps zeroed this reduces exactly to
  pointwise attention.

Stages run at ``len(channel_mult)`` resolutions with attention at every
level (8 heads); the number of stride-2 downsamplings adapts to the latent
size so small presets keep the deepest stages at the coarsest resolution.
"""
from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from ..grids.presets import GridPreset

CONDITIONING_MODES = ("text_attention", "conv_semantic_attention")
ATTENTION_HEADS = 8


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32)
                      / max(half - 1, 1)).to(t.device)
    args = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb.to(t.device)


class ChannelNorm(nn.Module):
    """Per-position normalization over channels (translation-equivariant)."""

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
    """Residual block with scale-shift timestep modulation.

    The timestep embedding produces a per-channel gain and bias applied to
    the normalized mid-activation, so the block can realize the strongly
    t-dependent output scales of v targets (which grow like 1/sqrt(1 - ᾱ_t)
    near t = 0) without inflating convolution weights.
    """

    def __init__(self, ch_in: int, ch_out: int, emb_dim: int):
        super().__init__()
        self.norm1 = ChannelNorm(ch_in)
        self.conv1 = nn.Conv3d(ch_in, ch_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, 2 * ch_out)
        self.norm2 = ChannelNorm(ch_out)
        self.conv2 = nn.Conv3d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv3d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.gelu(self.norm1(x)))
        scale, shift = self.emb(emb)[:, :, None, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1.0 + scale) + shift
        h = self.conv2(F.gelu(h))
        return self.skip(x) + h


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    """(B, L, C) -> (B, heads, L, C / heads)."""
    b, l, c = x.shape
    return x.reshape(b, l, heads, c // heads).permute(0, 2, 1, 3)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, l, d = x.shape
    return x.permute(0, 2, 1, 3).reshape(b, l, h * d)


class TextLatentAttention(nn.Module):
    """Caption-conditioned attention over latent positions.

    Default ("hybrid") role assignment: queries and keys come from the
    latent tokens; caption tokens join the key/value set so their value
    rows are what the text contributes.  ``cross_attention=True`` switches
    to the conventional form (queries latent, keys and values text-only).
    """

    def __init__(self, channels: int, d_ctx: int, heads: int = ATTENTION_HEADS,
                 cross_attention: bool = False):
        super().__init__()
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.cross = cross_attention
        self.norm = ChannelNorm(channels)
        self.to_q = nn.Conv3d(channels, channels, 1)
        if not cross_attention:
            self.to_k = nn.Conv3d(channels, channels, 1)
            self.to_v = nn.Conv3d(channels, channels, 1)
        self.text_k = nn.Linear(d_ctx, channels)
        self.text_v = nn.Linear(d_ctx, channels)
        self.proj = nn.Conv3d(channels, channels, 1)

    def forward(self, h: torch.Tensor, text: torch.Tensor,
                text_mask: torch.Tensor) -> torch.Tensor:
        b, c = h.shape[:2]
        spatial = h.shape[2:]
        x = self.norm(h)
        q = _split_heads(self.to_q(x).reshape(b, c, -1).transpose(1, 2), self.heads)
        k_txt = self.text_k(text)
        v_txt = self.text_v(text)
        if self.cross:
            k, v = k_txt, v_txt
            key_mask = text_mask
        else:
            k_lat = self.to_k(x).reshape(b, c, -1).transpose(1, 2)
            v_lat = self.to_v(x).reshape(b, c, -1).transpose(1, 2)
            k = torch.cat([k_lat, k_txt], dim=1)
            v = torch.cat([v_lat, v_txt], dim=1)
            key_mask = torch.cat(
                [torch.ones(b, k_lat.shape[1], dtype=text_mask.dtype,
                            device=text_mask.device), text_mask], dim=1)
        k = _split_heads(k, self.heads)
        v = _split_heads(v, self.heads)
        scale = 1.0 / math.sqrt(q.shape[-1])
        scores = (q @ k.transpose(-2, -1)) * scale
        scores = scores.masked_fill(key_mask[:, None, None, :] == 0, float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        out = _merge_heads(out).transpose(1, 2).reshape(b, c, *spatial)
        return h + self.proj(out)


class ConvContextAttention(nn.Module):
    """Global attention with window-3 convolutional Q/K/V projections.

    Queries come from the latent; keys and values from the semantic context
    grid resized to the latent's spatial dims.  Zeroing every non-center
    kernel tap makes the projections pointwise, so the module then equals
    ordinary dot-product attention.
    """

    def __init__(self, channels: int, ctx_channels: int, heads: int = ATTENTION_HEADS):
        super().__init__()
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.norm = ChannelNorm(channels)
        self.to_q = nn.Conv3d(channels, channels, 3, padding=1)
        self.to_k = nn.Conv3d(ctx_channels, channels, 3, padding=1)
        self.to_v = nn.Conv3d(ctx_channels, channels, 3, padding=1)
        self.proj = nn.Conv3d(channels, channels, 1)

    def forward(self, h: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, c = h.shape[:2]
        spatial = h.shape[2:]
        if context.shape[2:] != spatial:
            context = F.interpolate(context, size=spatial, mode="trilinear",
                                    align_corners=False)
        q = self.to_q(self.norm(h)).reshape(b, c, -1).transpose(1, 2)
        k = self.to_k(context).reshape(b, c, -1).transpose(1, 2)
        v = self.to_v(context).reshape(b, c, -1).transpose(1, 2)
        q, k, v = (_split_heads(t, self.heads) for t in (q, k, v))
        scale = 1.0 / math.sqrt(q.shape[-1])
        out = torch.softmax((q @ k.transpose(-2, -1)) * scale, dim=-1) @ v
        out = _merge_heads(out).transpose(1, 2).reshape(b, c, *spatial)
        return h + self.proj(out)


def _make_attention(mode: str, channels: int, d_ctx: Optional[int],
                    ctx_channels: Optional[int], cross_attention: bool) -> nn.Module:
    if mode == "text_attention":
        return TextLatentAttention(channels, d_ctx, cross_attention=cross_attention)
    return ConvContextAttention(channels, ctx_channels)


class LatentUNet(nn.Module):
    """v-prediction UNet over (B, 1, X, Y, Z) latents with per-level attention."""

    def __init__(self, mode: str, base: int = 32,
                 channel_mult: tuple[int, ...] = (1, 2, 4),
                 downsamples: Optional[int] = None,
                 d_ctx: Optional[int] = None,
                 ctx_channels: Optional[int] = None,
                 cross_attention: bool = False):
        super().__init__()
        if mode not in CONDITIONING_MODES:
            raise ValueError(f"mode must be one of {CONDITIONING_MODES}, got {mode!r}")
        if mode == "text_attention" and d_ctx is None:
            raise ValueError("text_attention requires d_ctx")
        if mode == "conv_semantic_attention" and ctx_channels is None:
            raise ValueError("conv_semantic_attention requires ctx_channels")
        levels = len(channel_mult)
        if downsamples is None:
            downsamples = levels - 1
        if not 0 <= downsamples <= levels - 1:
            raise ValueError(f"downsamples {downsamples} outside [0, {levels - 1}]")
        self.mode = mode
        self.downsamples = downsamples
        chs = [base * m for m in channel_mult]
        emb_dim = base * 4
        self.time_mlp = nn.Sequential(
            nn.Linear(base, emb_dim), nn.GELU(), nn.Linear(emb_dim, emb_dim))
        self.base = base
        self.stem = nn.Conv3d(1, chs[0], 3, padding=1)

        def attn(ch):
            return _make_attention(mode, ch, d_ctx, ctx_channels, cross_attention)

        self.enc_res = nn.ModuleList()
        self.enc_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = chs[0]
        for i, ch in enumerate(chs):
            self.enc_res.append(ResBlock(prev, ch, emb_dim))
            self.enc_attn.append(attn(ch))
            if i < downsamples:
                self.downs.append(nn.Conv3d(ch, ch, 4, stride=2, padding=1))
            prev = ch
        self.mid_res1 = ResBlock(prev, prev, emb_dim)
        self.mid_attn = attn(prev)
        self.mid_res2 = ResBlock(prev, prev, emb_dim)
        self.dec_res = nn.ModuleList()
        self.dec_attn = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(levels)):
            self.dec_res.append(ResBlock(prev + chs[i], chs[i], emb_dim))
            self.dec_attn.append(attn(chs[i]))
            if 0 < i <= downsamples:
                self.ups.append(nn.Conv3d(chs[i], chs[i], 3, padding=1))
            prev = chs[i]
        self.out_norm = ChannelNorm(chs[0])
        self.out = nn.Conv3d(chs[0], 1, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def _apply_attention(self, module: nn.Module, h: torch.Tensor, cond: dict):
        if self.mode == "text_attention":
            return module(h, cond["text"], cond["text_mask"])
        return module(h, cond["context"])

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: Optional[dict]) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] != 1:
            raise ValueError(f"expected (B, 1, X, Y, Z) latent, got {tuple(x.shape)}")
        factor = 2 ** self.downsamples
        if any(d % factor for d in x.shape[2:]):
            raise ValueError(
                f"latent dims {tuple(x.shape[2:])} not divisible by the "
                f"downsampling factor {factor}")
        if cond is None:
            raise ValueError(f"{self.mode} denoiser requires conditioning inputs")
        emb = self.time_mlp(timestep_embedding(t, self.base).to(x.dtype))
        h = self.stem(x)
        skips = []
        d = 0
        for i in range(len(self.enc_res)):
            h = self.enc_res[i](h, emb)
            h = self._apply_attention(self.enc_attn[i], h, cond)
            skips.append(h)
            if i < self.downsamples:
                h = self.downs[d](h)
                d += 1
        h = self.mid_res1(h, emb)
        h = self._apply_attention(self.mid_attn, h, cond)
        h = self.mid_res2(h, emb)
        u = 0
        levels = len(self.enc_res)
        for j, i in enumerate(reversed(range(levels))):
            skip = skips[i]
            if h.shape[2:] != skip.shape[2:]:
                h = F.interpolate(h, size=skip.shape[2:], mode="trilinear",
                                  align_corners=False)
                h = self.ups[u](h)
                u += 1
            h = self.dec_res[j](torch.cat([h, skip], dim=1), emb)
            h = self._apply_attention(self.dec_attn[j], h, cond)
        return self.out(F.gelu(self.out_norm(h)))


def _max_downsamples(dims: tuple[int, int, int], cap: int) -> int:
    n = 0
    while n < cap and all(d % 2 == 0 and d // 2 >= 1 for d in dims):
        dims = tuple(d // 2 for d in dims)
        n += 1
    return n


def build_semantic_denoiser(preset: GridPreset, base: int = 48,
                            cross_attention: bool = False, seed: int = 0) -> LatentUNet:
    """Four-stage text-conditioned denoiser sized to the preset's latents."""
    torch.manual_seed(seed)
    downs = _max_downsamples(preset.sem_latent_padded, 3)
    return LatentUNet("text_attention", base=base, channel_mult=(1, 2, 3, 4),
                      downsamples=downs, d_ctx=preset.d_ctx,
                      cross_attention=cross_attention)


def build_geometric_denoiser(preset: GridPreset, base: int = 32, seed: int = 0) -> LatentUNet:
    """Three-stage semantic-context-conditioned denoiser."""
    torch.manual_seed(seed)
    downs = _max_downsamples(preset.geo_latent_chunk, 2)
    return LatentUNet("conv_semantic_attention", base=base, channel_mult=(1, 2, 4),
                      downsamples=downs, ctx_channels=preset.context_channels)
