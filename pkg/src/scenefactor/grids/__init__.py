"""Core voxel/latent data model, chunk layouts, and bit-exact serialization."""
from .bundle import BundleError, BundleGrid, read_bundle, write_bundle
from .chunks import ChunkIndex, ChunkLayout, chunk_of
from .presets import DESK, LATENT_FACTOR, PAPER, GridPreset, get_preset
from .core import (
    FREE_SPACE,
    ISO_VOXELS,
    REFLECTIONS,
    SEM_CHANNELS,
    TRUNC_VOXELS,
    WALL_FLOOR,
    BinaryMask,
    GeometryGrid,
    Grid,
    LatentGrid,
    SemanticGrid,
    augment,
    labels_to_one_hot,
    one_hot_to_labels,
)

__all__ = [
    "BinaryMask",
    "BundleError",
    "BundleGrid",
    "ChunkIndex",
    "ChunkLayout",
    "DESK",
    "FREE_SPACE",
    "GridPreset",
    "LATENT_FACTOR",
    "PAPER",
    "get_preset",
    "GeometryGrid",
    "Grid",
    "ISO_VOXELS",
    "LatentGrid",
    "REFLECTIONS",
    "SEM_CHANNELS",
    "SemanticGrid",
    "TRUNC_VOXELS",
    "WALL_FLOOR",
    "augment",
    "chunk_of",
    "labels_to_one_hot",
    "one_hot_to_labels",
    "read_bundle",
    "write_bundle",
]
