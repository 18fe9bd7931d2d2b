"""Latent diffusion: noise schedule, v-parameterization, sampling, denoisers."""
from .losses import train_step_geometric, train_step_semantic
from .sampling import denoise_step, inpaint_step, sample
from .schedule import NoiseSchedule
from .unet import (
    ATTENTION_HEADS,
    CONDITIONING_MODES,
    ConvContextAttention,
    LatentUNet,
    TextLatentAttention,
    build_geometric_denoiser,
    build_semantic_denoiser,
)

__all__ = [
    "ATTENTION_HEADS",
    "CONDITIONING_MODES",
    "ConvContextAttention",
    "LatentUNet",
    "NoiseSchedule",
    "TextLatentAttention",
    "build_geometric_denoiser",
    "build_semantic_denoiser",
    "denoise_step",
    "inpaint_step",
    "sample",
    "train_step_semantic",
    "train_step_geometric",
]
