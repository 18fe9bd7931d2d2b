"""Context encoders for the two generation stages.

- A deterministic word-level tokenizer whose vocabulary is assembled from
  the caption templates (categories, subcategories, room types, count
  words, and the fixed structural words), serialized as versioned JSON.
- A small bidirectional self-attention text encoder producing per-token
  features; padding positions are masked out of attention so extra padding
  never changes the features of real tokens.
- A fully-convolutional semantic context encoder that halves each spatial
  axis of a one-hot semantic grid.
"""
from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .grids import SemanticGrid
from .grids.core import SEM_CHANNELS
from .grids.presets import GridPreset
from .synthdata.captions import COUNT_WORDS, plural
from .synthdata.scenes import CATEGORIES, ROOM_TYPES, SUBCATEGORIES

MAX_TOKENS = 77
PAD, BOS, EOS, UNK = 0, 1, 2, 3
_SPECIALS = ("[pad]", "[bos]", "[eos]", "[unk]")

#: Fixed wording of the caption templates (articles, joiners, relations).
STRUCTURAL_WORDS = (
    "a", "an", "and", "the", "room", "with", "empty", "view", "of", "area",
    "wall", "walls", "along", "one", "two", "three", "side", "sides",
    "enclosed", "by", "group", "stands", "next", "to", "sits", "across",
    "from", ",", ";",
)

_TOKEN_RE = re.compile(r"[a-z][a-z'\-]*|\d+|[,;]")


def build_vocabulary() -> dict[str, int]:
    """token -> id map covering every word the caption generator can emit."""
    words: set[str] = set(STRUCTURAL_WORDS)
    for cat in CATEGORIES:
        words.add(cat)
        words.update(plural(cat).split())
        for sub in SUBCATEGORIES[cat]:
            words.update(sub.split())
            words.update(plural(sub).split())
    for room in ROOM_TYPES:
        words.update(room.split())
    words.update(COUNT_WORDS.values())
    vocab = {tok: i for i, tok in enumerate(_SPECIALS)}
    for tok in sorted(words):
        vocab[tok] = len(vocab)
    return vocab


def save_vocabulary(vocab: dict[str, int], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"version": 1, "tokens": vocab},
                               indent=0, sort_keys=True))
    return path


def load_vocabulary(path: str | Path) -> dict[str, int]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise ValueError(f"unsupported vocabulary version {doc.get('version')!r}")
    return {str(k): int(v) for k, v in doc["tokens"].items()}


@dataclass(frozen=True)
class TokenSequence:
    """Padded token ids with a validity mask; mask 1 marks real tokens."""

    ids: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        mask = np.asarray(self.mask, dtype=np.int64)
        if ids.ndim != 1 or ids.shape != mask.shape:
            raise ValueError("ids and mask must be equal-length 1-D arrays")
        if ids.shape[0] > MAX_TOKENS:
            raise ValueError(f"sequence length {ids.shape[0]} exceeds {MAX_TOKENS}")
        if not np.isin(mask, (0, 1)).all() or (ids[mask == 0] != PAD).any():
            raise ValueError("mask must be 0/1 with PAD ids at masked positions")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "mask", mask)

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def tokenize(text: str, vocab: dict[str, int], max_tokens: int = MAX_TOKENS) -> TokenSequence:
    """Deterministic lowercase word/punctuation tokenization, BOS...EOS framed."""
    pieces = _TOKEN_RE.findall(text.lower())
    ids = [BOS] + [vocab.get(p, UNK) for p in pieces] + [EOS]
    if len(ids) > max_tokens:
        warnings.warn(f"caption of {len(ids)} tokens truncated to {max_tokens}")
        ids = ids[:max_tokens - 1] + [EOS]
    mask = [1] * len(ids) + [0] * (max_tokens - len(ids))
    ids = ids + [PAD] * (max_tokens - len(ids))
    return TokenSequence(np.array(ids), np.array(mask))


def detokenize(tokens: TokenSequence, vocab: dict[str, int]) -> str:
    """Inverse of tokenize up to whitespace normalization."""
    reverse = {i: t for t, i in vocab.items()}
    words = [reverse[int(i)] for i, m in zip(tokens.ids, tokens.mask)
             if m and int(i) not in (PAD, BOS, EOS)]
    text = " ".join(words)
    return re.sub(r" ([,;])", r"\1", text)


class TextEncoder(nn.Module):
    """Bidirectional self-attention stack over embedded tokens."""

    def __init__(self, vocab_size: int, d_ctx: int, depth: int = 4, heads: int = 8):
        super().__init__()
        self.d_ctx = d_ctx
        self.embed = nn.Embedding(vocab_size, d_ctx, padding_idx=PAD)
        self.positions = nn.Parameter(torch.zeros(MAX_TOKENS, d_ctx))
        nn.init.normal_(self.positions, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=d_ctx, nhead=heads, dim_feedforward=d_ctx * 4,
            batch_first=True, norm_first=True, dropout=0.0)
        self.stack = nn.TransformerEncoder(
            layer, num_layers=depth, enable_nested_tensor=False
        )

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, L) ids + (B, L) mask -> (B, L, d_ctx) features."""
        h = self.embed(ids) + self.positions[: ids.shape[1]]
        return self.stack(h, src_key_padding_mask=(mask == 0))


def build_text_encoder(preset: GridPreset, vocab: dict[str, int] | None = None,
                       seed: int = 0) -> TextEncoder:
    vocab = build_vocabulary() if vocab is None else vocab
    torch.manual_seed(seed)
    return TextEncoder(len(vocab), preset.d_ctx)


@torch.no_grad()
def encode_text(encoder: TextEncoder, tokens: TokenSequence | list[TokenSequence],
                ) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-token context features; returns (features (B, L, D), mask (B, L))."""
    batch = [tokens] if isinstance(tokens, TokenSequence) else list(tokens)
    ids = torch.from_numpy(np.stack([t.ids for t in batch]))
    mask = torch.from_numpy(np.stack([t.mask for t in batch]))
    encoder.eval()
    return encoder(ids, mask), mask


class SemanticContextEncoder(nn.Module):
    """One-hot semantic grid -> feature grid at half resolution per axis."""

    def __init__(self, context_channels: int, width: int = 32):
        super().__init__()
        self.context_channels = context_channels
        self.net = nn.Sequential(
            nn.Conv3d(SEM_CHANNELS, width, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv3d(width, width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv3d(width, width, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv3d(width, context_channels, 3, padding=1),
        )

    def forward(self, s_onehot: torch.Tensor) -> torch.Tensor:
        if s_onehot.ndim != 5 or s_onehot.shape[1] != SEM_CHANNELS:
            raise ValueError(
                f"expected (B, {SEM_CHANNELS}, X, Y, Z) one-hot input, "
                f"got {tuple(s_onehot.shape)}")
        if any(d % 2 for d in s_onehot.shape[2:]):
            raise ValueError(f"spatial dims {tuple(s_onehot.shape[2:])} must be even")
        return self.net(s_onehot)


def build_context_encoder(preset: GridPreset, seed: int = 0) -> SemanticContextEncoder:
    torch.manual_seed(seed)
    return SemanticContextEncoder(preset.context_channels)


@torch.no_grad()
def encode_semantic_context(encoder: SemanticContextEncoder,
                            semantic: SemanticGrid | torch.Tensor) -> torch.Tensor:
    """Condition grid -> (B, context_channels, X/2, Y/2, Z/2) features."""
    if isinstance(semantic, SemanticGrid):
        x = torch.from_numpy(np.array(semantic.data, dtype=np.float32)).unsqueeze(0)
    else:
        x = semantic
    encoder.eval()
    return encoder(x)
