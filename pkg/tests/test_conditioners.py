"""Tokenizer, text encoder, and semantic context encoder."""
from __future__ import annotations

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from scenefactor.conditioners import (
    BOS,
    EOS,
    MAX_TOKENS,
    PAD,
    UNK,
    TokenSequence,
    build_context_encoder,
    build_text_encoder,
    build_vocabulary,
    detokenize,
    encode_semantic_context,
    encode_text,
    load_vocabulary,
    save_vocabulary,
    tokenize,
)
from scenefactor.grids import SemanticGrid
from scenefactor.grids.presets import DESK, PAPER
from scenefactor.synthdata import (
    CAPTION_TYPES,
    caption_chunk,
    default_scene_config,
    rasterize,
    sample_scene,
)

VOCAB = build_vocabulary()


# -------------------------------------------------------------- tokenizer


def test_empty_text_is_bos_eos_padded():
    seq = tokenize("", VOCAB)
    assert seq.ids.shape == (MAX_TOKENS,)
    assert seq.ids[0] == BOS and seq.ids[1] == EOS
    assert (seq.ids[2:] == PAD).all()
    assert seq.length == 2


def test_tokenize_is_deterministic_and_reversible():
    captions = [
        "a room with two chairs and one table, enclosed by walls",
        "an empty room, with a wall along one side",
        "a view of a bedroom and a living room",
        "a room with an armchair and three bookshelves; a group of two chairs",
        "a room with a chaise longue and a tv stand",
    ]
    for text in captions:
        a = tokenize(text, VOCAB)
        b = tokenize(text, VOCAB)
        assert np.array_equal(a.ids, b.ids) and np.array_equal(a.mask, b.mask)
        assert UNK not in a.ids[a.mask == 1]
        assert detokenize(a, VOCAB) == text


def test_unknown_words_map_to_unk():
    seq = tokenize("a room with a zeppelin", VOCAB)
    assert UNK in seq.ids[seq.mask == 1]


def test_overlength_text_truncates_with_warning():
    text = " ".join(["chair"] * 100)
    with pytest.warns(UserWarning, match="truncated"):
        seq = tokenize(text, VOCAB)
    assert seq.length == MAX_TOKENS
    assert seq.ids[MAX_TOKENS - 1] == EOS


def test_token_sequence_validation():
    with pytest.raises(ValueError):
        TokenSequence(np.zeros(MAX_TOKENS + 1, dtype=np.int64),
                      np.zeros(MAX_TOKENS + 1, dtype=np.int64))
    with pytest.raises(ValueError):  # PAD required at masked positions
        TokenSequence(np.array([1, 2, 9]), np.array([1, 1, 0]))
    with pytest.raises(ValueError):
        TokenSequence(np.array([1, 2]), np.array([1, 2]))


def test_every_generated_caption_tokenizes_without_unk():
    for seed in range(12):
        spec = sample_scene(seed, default_scene_config(DESK))
        layout = DESK.sem_layout((2, 2))
        for idx in layout.traversal:
            for ctype in CAPTION_TYPES:
                text = caption_chunk(spec, DESK, layout, idx, ctype)
                seq = tokenize(text, VOCAB)
                real = seq.ids[seq.mask == 1]
                assert UNK not in real, f"UNK in {text!r}"
                assert detokenize(seq, VOCAB) == text


def test_vocabulary_json_round_trip(tmp_path):
    path = save_vocabulary(VOCAB, tmp_path / "vocab.json")
    assert load_vocabulary(path) == VOCAB
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 9, "tokens": {}}')
    with pytest.raises(ValueError):
        load_vocabulary(bad)


# ------------------------------------------------------------ text encoder


@pytest.fixture(scope="module")
def text_encoder():
    return build_text_encoder(DESK, VOCAB, seed=5)


def test_text_features_shape_and_determinism(text_encoder):
    seq = tokenize("a room with one sofa", VOCAB)
    feats, mask = encode_text(text_encoder, seq)
    assert feats.shape == (1, MAX_TOKENS, DESK.d_ctx)
    assert mask.shape == (1, MAX_TOKENS)
    again, _ = encode_text(text_encoder, seq)
    assert torch.equal(feats, again)
    assert bool(torch.isfinite(feats).all())


def test_extra_padding_leaves_real_token_features_unchanged(text_encoder):
    text = "a room with two lamps and a table"
    short = tokenize(text, VOCAB, max_tokens=16)
    full = tokenize(text, VOCAB)
    assert short.length == full.length
    f_short, _ = encode_text(text_encoder, short)
    f_full, _ = encode_text(text_encoder, full)
    n = short.length
    assert torch.allclose(f_short[0, :n], f_full[0, :n], atol=1e-6)


def test_batched_encoding_matches_single(text_encoder):
    a = tokenize("an empty room", VOCAB)
    b = tokenize("a view of a kitchen", VOCAB)
    batch, _ = encode_text(text_encoder, [a, b])
    single_a, _ = encode_text(text_encoder, a)
    single_b, _ = encode_text(text_encoder, b)
    assert torch.allclose(batch[0], single_a[0], atol=1e-6)
    assert torch.allclose(batch[1], single_b[0], atol=1e-6)


# ------------------------------------------------- semantic context encoder


@pytest.fixture(scope="module")
def ctx_encoder():
    return build_context_encoder(DESK, seed=6)


def test_context_shape_halves_every_axis(ctx_encoder):
    spec = sample_scene(3, default_scene_config(DESK, scene_chunks=(1, 1)))
    semantic, _ = rasterize(spec, DESK)
    assert semantic.data.shape == (10, 16, 8, 16)
    ctx = encode_semantic_context(ctx_encoder, semantic)
    assert ctx.shape == (1, DESK.context_channels, 8, 4, 8)
    again = encode_semantic_context(ctx_encoder, semantic)
    assert torch.equal(ctx, again)


def test_full_scale_context_shape():
    enc = build_context_encoder(PAPER, seed=7)
    x = torch.zeros((1, 10, 32, 16, 32))
    x[:, 0] = 1.0
    assert encode_semantic_context(enc, x).shape == (1, 128, 16, 8, 16)


def test_context_encoder_rejects_bad_inputs(ctx_encoder):
    with pytest.raises(ValueError):
        encode_semantic_context(ctx_encoder, torch.zeros((1, 9, 16, 8, 16)))
    with pytest.raises(ValueError):
        encode_semantic_context(ctx_encoder, torch.zeros((1, 10, 15, 8, 16)))


def test_context_translation_equivariance(ctx_encoder):
    g = torch.Generator().manual_seed(31)
    labels = torch.randint(10, (1, 32, 16, 32), generator=g)
    fresh = torch.randint(10, (1, 2, 16, 32), generator=g)
    shifted = torch.cat([fresh, labels[:, :-2]], dim=1)

    def onehot(lab):
        return F.one_hot(lab, 10).permute(0, 4, 1, 2, 3).float()

    ctx = encode_semantic_context(ctx_encoder, onehot(labels))
    ctx_shift = encode_semantic_context(ctx_encoder, onehot(shifted))
    m = 5  # receptive-field margin in context cells (16 along x)
    a = ctx[:, :, m - 1:16 - m - 1]
    b = ctx_shift[:, :, m:16 - m]
    assert a.shape[2] >= 6
    assert torch.allclose(a, b, atol=1e-5, rtol=0.0)
