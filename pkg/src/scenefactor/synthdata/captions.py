"""Seven template caption types for scene chunks.

Inclusion rules: an object is mentioned when >=35% of its semantic-voxel
volume lies inside the chunk; a room type when >=25% of the room footprint
does.  Fractions are measured on the rasterized voxelization, which makes
caption category sets consistent with the semantic grid by construction.

Types: 1 category list, 2 counted categories, 3 counts + spatial relations,
4-6 the same three with subcategory names, 7 room types.  Wall presence
along the chunk borders is appended to types 1-6 when applicable.
"""
from __future__ import annotations

import functools
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..grids import WALL_FLOOR, ChunkLayout, GridPreset
from .rasterize import rasterize_object_ids, rasterize_semantic
from .scenes import (CATEGORIES, CATEGORY_CHANNEL, ROOM_TYPES, SUBCATEGORIES,
                     ObjectSpec, SceneSpec)

CAPTION_TYPES = (1, 2, 3, 4, 5, 6, 7)
EMPTY_ROOM_CAPTION = "an empty room"
EMPTY_VIEW_CAPTION = "a view of an empty area"

COUNT_WORDS = {
    1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six", 7: "seven",
    8: "eight", 9: "nine", 10: "ten", 11: "eleven", 12: "twelve", 13: "thirteen",
    14: "fourteen", 15: "fifteen", 16: "sixteen", 17: "seventeen", 18: "eighteen",
    19: "nineteen", 20: "twenty",
}

WALL_SUFFIXES = {
    1: ", with a wall along one side",
    2: ", with walls along two sides",
    3: ", with walls along three sides",
    4: ", enclosed by walls",
}


@dataclass(frozen=True)
class CaptionConfig:
    include_fraction: float = 0.35   # object-volume share inside the chunk
    room_fraction: float = 0.25     # room-footprint share inside the chunk
    group_distance_m: float = 1.0   # same-category centers closer than this form a group
    wall_distance_m: float = 0.5    # center-to-room-boundary for "next to the wall"
    across_axis_m: float = 0.3      # shared-axis tolerance for "across from"
    across_distance_m: float = 1.5  # minimum separation for "across from"
    border_wall_fraction: float = 0.5  # share of border columns containing wall


DEFAULT_CAPTION_CONFIG = CaptionConfig()


def plural(noun: str) -> str:
    if noun.endswith("shelf"):
        return noun[:-5] + "shelves"
    return noun + "s"


def article(noun: str) -> str:
    return "an" if noun[0] in "aeiou" else "a"


def count_word(n: int) -> str:
    return COUNT_WORDS.get(n, str(n))


def _join(parts: list[str]) -> str:
    if len(parts) <= 1:
        return parts[0] if parts else ""
    return ", ".join(parts[:-1]) + " and " + parts[-1]


@functools.lru_cache(maxsize=8)
def _voxel_bookkeeping(spec: SceneSpec, preset: GridPreset, dims: tuple[int, int, int]):
    ids = rasterize_object_ids(spec, preset, dims)
    labels = rasterize_semantic(spec, preset, dims).labels()
    totals = np.bincount(ids[ids >= 0].reshape(-1), minlength=len(spec.objects))
    return ids, labels, totals


def chunk_mentions(spec: SceneSpec, preset: GridPreset, layout: ChunkLayout,
                   idx, config: CaptionConfig = DEFAULT_CAPTION_CONFIG) -> list[int]:
    """Indices of objects whose in-chunk voxel share passes the inclusion rule."""
    ids, _, totals = _voxel_bookkeeping(spec, preset, layout.scene_dims_vox)
    window = layout.window(idx)
    inside = np.bincount(ids[window][ids[window] >= 0].reshape(-1), minlength=len(spec.objects))
    out = []
    for i in range(len(spec.objects)):
        if totals[i] > 0 and inside[i] / totals[i] >= config.include_fraction:
            out.append(i)
    return out


def _room_mentions(spec: SceneSpec, preset: GridPreset, layout: ChunkLayout, idx,
                   config: CaptionConfig) -> list[str]:
    """Room types whose footprint share inside the chunk passes the room rule."""
    v = preset.sem_voxel_m
    window = layout.window(idx)
    wx = (window[0].start * v, window[0].stop * v)
    wz = (window[2].start * v, window[2].stop * v)
    types = []
    for room in spec.rooms:
        x0, z0, x1, z1 = room.rect
        ox = max(0.0, min(x1, wx[1]) - max(x0, wx[0]))
        oz = max(0.0, min(z1, wz[1]) - max(z0, wz[0]))
        if ox * oz / room.footprint_area >= config.room_fraction:
            types.append(room.room_type)
    seen = []
    for t in sorted(types, key=ROOM_TYPES.index):
        if t not in seen:
            seen.append(t)
    return seen


def _walled_sides(spec: SceneSpec, preset: GridPreset, layout: ChunkLayout, idx,
                  config: CaptionConfig) -> int:
    """Number of chunk borders (of 4) with walls along at least half their length."""
    _, labels, _ = _voxel_bookkeeping(spec, preset, layout.scene_dims_vox)
    window = layout.window(idx)
    chunk = labels[window]
    sides = [chunk[0, :, :], chunk[-1, :, :], chunk[:, :, 0].T, chunk[:, :, -1].T]
    walled = 0
    for side in sides:  # side dims (y, border length)
        has_wall = (side == WALL_FLOOR).any(axis=0)
        # Ignore the floor layer: walls must rise above it to count.
        above = (side[1:, :] == WALL_FLOOR).any(axis=0) if side.shape[0] > 1 else has_wall
        if above.mean() >= config.border_wall_fraction:
            walled += 1
    return walled


def _room_of(spec: SceneSpec, obj: ObjectSpec):
    cx, _, cz = obj.box.center
    for room in spec.rooms:
        x0, z0, x1, z1 = room.rect
        if x0 <= cx < x1 and z0 <= cz < z1:
            return room
    return None


def _relation_phrases(spec: SceneSpec, mentioned: list[ObjectSpec],
                      config: CaptionConfig, noun_of) -> list[str]:
    phrases: list[str] = []
    # Same-category groups via single-link clustering of centers.
    by_cat: dict[str, list[ObjectSpec]] = {}
    for obj in mentioned:
        by_cat.setdefault(obj.category, []).append(obj)
    for cat in sorted(by_cat, key=CATEGORIES.index):
        objs = by_cat[cat]
        if len(objs) < 2:
            continue
        parent = list(range(len(objs)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                ci, cj = objs[i].box.center, objs[j].box.center
                d = float(np.hypot(ci[0] - cj[0], ci[2] - cj[2]))
                if d < config.group_distance_m:
                    parent[find(i)] = find(j)
        sizes = Counter(find(i) for i in range(len(objs)))
        best = max(sizes.values())
        if best >= 2:
            phrases.append(f"a group of {count_word(best)} {plural(cat)}")
    # Next to a wall: distance from center to the containing room boundary.
    near_wall = []
    for obj in mentioned:
        room = _room_of(spec, obj)
        if room is None:
            continue
        x0, z0, x1, z1 = room.rect
        cx, _, cz = obj.box.center
        d = min(cx - x0, x1 - cx, cz - z0, z1 - cz)
        if d < config.wall_distance_m and obj.category not in near_wall:
            near_wall.append(obj.category)
    for cat in near_wall:
        noun = noun_of(next(o for o in mentioned if o.category == cat))
        phrases.append(f"{article(noun)} {noun} stands next to the wall")
    # Across from: near-shared axis, far apart.
    for i in range(len(mentioned)):
        hit = None
        for j in range(i + 1, len(mentioned)):
            a, b = mentioned[i].box.center, mentioned[j].box.center
            shared = min(abs(a[0] - b[0]), abs(a[2] - b[2])) < config.across_axis_m
            far = np.hypot(a[0] - b[0], a[2] - b[2]) > config.across_distance_m
            if shared and far:
                hit = (mentioned[i], mentioned[j])
                break
        if hit:
            na, nb = noun_of(hit[0]), noun_of(hit[1])
            phrases.append(f"{article(na)} {na} sits across from {article(nb)} {nb}")
            break
    return phrases


def caption_chunk(spec: SceneSpec, preset: GridPreset, layout: ChunkLayout, idx,
                  caption_type: int,
                  config: CaptionConfig = DEFAULT_CAPTION_CONFIG) -> str:
    """One caption of the requested type for chunk ``idx``."""
    if caption_type not in CAPTION_TYPES:
        raise ValueError(f"caption_type must be in {CAPTION_TYPES}, got {caption_type}")

    if caption_type == 7:
        rooms = _room_mentions(spec, preset, layout, idx, config)
        if not rooms:
            return EMPTY_VIEW_CAPTION
        return "a view of " + _join([f"{article(r)} {r}" for r in rooms])

    mentioned = [spec.objects[i] for i in chunk_mentions(spec, preset, layout, idx, config)]
    subcats = caption_type >= 4
    noun_of = (lambda o: o.subcategory) if subcats else (lambda o: o.category)

    suffix = WALL_SUFFIXES.get(_walled_sides(spec, preset, layout, idx, config), "")
    if not mentioned:
        return EMPTY_ROOM_CAPTION + suffix

    order: list[str] = []
    counts: Counter[str] = Counter()
    for obj in sorted(mentioned, key=lambda o: (CATEGORIES.index(o.category), o.subcategory)):
        noun = noun_of(obj)
        if noun not in order:
            order.append(noun)
        counts[noun] += 1

    if caption_type in (1, 4):
        body = _join([f"{article(n)} {n}" for n in order])
    else:
        body = _join([
            f"{count_word(counts[n])} {plural(n)}" if counts[n] > 1 else f"{count_word(1)} {n}"
            for n in order
        ])
    text = f"a room with {body}"
    if caption_type in (3, 6):
        for phrase in _relation_phrases(spec, mentioned, config, noun_of):
            text += f"; {phrase}"
    return text + suffix


def all_captions(spec: SceneSpec, preset: GridPreset, layout: ChunkLayout, idx,
                 config: CaptionConfig = DEFAULT_CAPTION_CONFIG) -> list[str]:
    """All seven caption types, in type order."""
    return [caption_chunk(spec, preset, layout, idx, t, config) for t in CAPTION_TYPES]


@functools.lru_cache(maxsize=1)
def _vocabulary() -> tuple[tuple[str, int], ...]:
    """(phrase, channel) pairs, longest phrase first so multi-word names
    consume their parts ("table lamp" must not also count as a table)."""
    vocab: dict[str, int] = {}
    for cat, channel in CATEGORY_CHANNEL.items():
        vocab[cat] = channel
        vocab[plural(cat)] = channel
        for sub in SUBCATEGORIES[cat]:
            vocab[sub] = channel
            vocab[plural(sub)] = channel
    vocab["wall"] = WALL_FLOOR
    vocab["walls"] = WALL_FLOOR
    return tuple(sorted(vocab.items(), key=lambda kv: -len(kv[0])))


_SKELETONS = ("a room with", "an empty room", "a view of")


def caption_channels(text: str) -> frozenset[int]:
    """Semantic channels named by a template caption.

    Room types and counts carry no channel; a caption naming no object or
    wall is valid only when it matches one of the template skeletons.
    Raises ValueError otherwise.
    """
    lowered = text.strip().lower()
    remaining = lowered
    found: set[int] = set()
    for phrase, channel in _vocabulary():
        pattern = r"\b" + re.escape(phrase) + r"\b"
        if re.search(pattern, remaining):
            found.add(channel)
            remaining = re.sub(pattern, " ", remaining)
    if not found and not lowered.startswith(_SKELETONS):
        raise ValueError(f"caption does not match the template grammar: {text!r}")
    return frozenset(found)
