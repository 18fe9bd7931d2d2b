"""Procedural indoor box-scene sampler.

Scenes are axis-aligned: rooms tile the scene footprint on the semantic
voxel lattice, each room gets a one-voxel-thick wall ring and floor slab,
and furniture boxes are placed inside room interiors without overlaps.
Everything is deterministic given the seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..grids import GridPreset

#: Object categories, in semantic-channel order (channels 2..9).
CATEGORIES = ("bed", "cabinet", "chair", "lamp", "shelf", "sofa", "stool", "table")
CATEGORY_CHANNEL = {name: i + 2 for i, name in enumerate(CATEGORIES)}
CHANNEL_CATEGORY = {i + 2: name for i, name in enumerate(CATEGORIES)}

SUBCATEGORIES = {
    "bed": ("single bed", "double bed", "bunk bed", "kids bed"),
    "cabinet": ("wardrobe", "dresser", "tv stand", "wine cabinet"),
    "chair": ("armchair", "dining chair", "office chair", "lounge chair"),
    "lamp": ("floor lamp", "table lamp", "reading lamp"),
    "shelf": ("bookshelf", "display shelf", "corner shelf"),
    "sofa": ("corner sofa", "loveseat", "three-seat sofa", "chaise longue"),
    "stool": ("bar stool", "footstool", "ottoman"),
    "table": ("coffee table", "dining table", "desk", "side table"),
}

ROOM_TYPES = ("bedroom", "living room", "dining room", "office", "kitchen")

#: Category sampling weights per room type.
ROOM_CATEGORY_WEIGHTS = {
    "bedroom":     {"bed": 3.0, "cabinet": 1.5, "lamp": 1.0, "chair": 0.5, "shelf": 0.5, "stool": 0.5, "table": 0.5, "sofa": 0.2},
    "living room": {"sofa": 3.0, "table": 1.5, "chair": 1.0, "lamp": 1.0, "shelf": 1.0, "cabinet": 0.8, "stool": 0.8, "bed": 0.05},
    "dining room": {"table": 3.0, "chair": 3.0, "cabinet": 1.0, "lamp": 0.5, "shelf": 0.5, "stool": 0.5, "sofa": 0.3, "bed": 0.05},
    "office":      {"table": 2.5, "chair": 2.5, "shelf": 1.5, "cabinet": 1.0, "lamp": 1.0, "stool": 0.5, "sofa": 0.3, "bed": 0.05},
    "kitchen":     {"cabinet": 3.0, "table": 1.5, "stool": 1.5, "chair": 1.0, "shelf": 1.0, "lamp": 0.5, "sofa": 0.1, "bed": 0.05},
}

#: Base size ranges in meters as ((long footprint), (short footprint), (height)).
CATEGORY_SIZE_RANGES = {
    "bed":     ((1.9, 2.1), (1.4, 1.8), (0.5, 0.7)),
    "cabinet": ((0.9, 1.6), (0.45, 0.65), (1.4, 2.0)),
    "chair":   ((0.5, 0.7), (0.5, 0.65), (0.85, 1.1)),
    "lamp":    ((0.3, 0.5), (0.3, 0.5), (1.3, 1.7)),
    "shelf":   ((0.8, 1.4), (0.3, 0.45), (1.2, 1.9)),
    "sofa":    ((1.7, 2.4), (0.85, 1.05), (0.75, 0.95)),
    "stool":   ((0.35, 0.5), (0.35, 0.5), (0.45, 0.6)),
    "table":   ((1.2, 1.9), (0.75, 1.0), (0.72, 0.78)),
}


class GenerationError(RuntimeError):
    """The scene configuration cannot be realized (e.g. object larger than room)."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in meters: [min, max) per axis."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "min_corner", tuple(float(c) for c in self.min_corner))
        object.__setattr__(self, "max_corner", tuple(float(c) for c in self.max_corner))
        if any(hi <= lo for lo, hi in zip(self.min_corner, self.max_corner)):
            raise ValueError(f"degenerate box {self.min_corner}..{self.max_corner}")

    @property
    def extents(self) -> tuple[float, float, float]:
        return tuple(hi - lo for lo, hi in zip(self.min_corner, self.max_corner))

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple((lo + hi) / 2 for lo, hi in zip(self.min_corner, self.max_corner))

    def intersects(self, other: "Box") -> bool:
        return all(lo < ohi and olo < hi for lo, hi, olo, ohi in
                   zip(self.min_corner, self.max_corner, other.min_corner, other.max_corner))

    def contains_box(self, other: "Box") -> bool:
        return all(lo <= olo and ohi <= hi for lo, hi, olo, ohi in
                   zip(self.min_corner, self.max_corner, other.min_corner, other.max_corner))


@dataclass(frozen=True)
class ObjectSpec:
    category: str
    subcategory: str
    box: Box
    yaw: int  # degrees, one of {0, 90, 180, 270}

    def __post_init__(self):
        if self.category not in CATEGORY_CHANNEL:
            raise ValueError(f"unknown category {self.category!r}")
        if self.yaw not in (0, 90, 180, 270):
            raise ValueError(f"yaw must be one of 0/90/180/270, got {self.yaw}")


@dataclass(frozen=True)
class RoomSpec:
    """Room rectangle in meters (snapped to the semantic lattice) + type."""

    rect: tuple[float, float, float, float]  # x0, z0, x1, z1
    wall_height_m: float
    room_type: str

    def __post_init__(self):
        x0, z0, x1, z1 = self.rect
        if x1 <= x0 or z1 <= z0:
            raise ValueError(f"degenerate room rect {self.rect}")
        if self.room_type not in ROOM_TYPES:
            raise ValueError(f"unknown room type {self.room_type!r}")

    @property
    def footprint_area(self) -> float:
        x0, z0, x1, z1 = self.rect
        return (x1 - x0) * (z1 - z0)


@dataclass(frozen=True)
class SceneSpec:
    extent_m: tuple[float, float, float]
    rooms: tuple[RoomSpec, ...]
    objects: tuple[ObjectSpec, ...]
    wall_thickness_m: float
    floor_thickness_m: float

    def __post_init__(self):
        scene = Box((0.0, 0.0, 0.0), self.extent_m)
        for obj in self.objects:
            if not scene.contains_box(obj.box):
                raise ValueError(f"object {obj.category} escapes the scene bounds")


@dataclass(frozen=True)
class SceneConfig:
    """Sampler difficulty knobs; extents come from the preset and chunk layout."""

    preset: GridPreset
    scene_chunks: tuple[int, int] = (2, 2)
    rooms_range: tuple[int, int] = (1, 3)
    objects_per_room: tuple[int, int] = (2, 5)
    min_room_side_vox: int = 8
    size_multiplier: float = 1.0
    placement_attempts: int = 60
    object_gap_m: float = 0.05

    @property
    def min_footprint_vox(self) -> tuple[float, float]:
        """Lower bounds (long, short) in semantic voxels that every object's
        footprint must meet so it rasterizes to a >=(3,2)-voxel footprint."""
        return (3.0, 2.0)


def _clamped_size_range(category: str, config: SceneConfig):
    """Category size ranges, scaled and clamped to rasterization minima."""
    v = config.preset.sem_voxel_m
    (l_lo, l_hi), (s_lo, s_hi), (h_lo, h_hi) = CATEGORY_SIZE_RANGES[category]
    m = config.size_multiplier
    lo_long, lo_short, lo_h = 3.0 * v, 2.0 * v, 2.0 * v
    l_lo, l_hi = max(l_lo * m, lo_long), max(l_hi * m, lo_long)
    s_lo, s_hi = max(s_lo * m, lo_short), max(s_hi * m, lo_short)
    h_lo, h_hi = max(h_lo * m, lo_h), max(h_hi * m, lo_h)
    return (l_lo, max(l_hi, l_lo)), (s_lo, max(s_hi, s_lo)), (h_lo, max(h_hi, h_lo))


def _split_rooms(rng: np.random.Generator, dims_vox: tuple[int, int], n_rooms: int,
                 min_side: int) -> list[tuple[int, int, int, int]]:
    """Recursively split the scene footprint into room rects (voxel coords)."""
    rects = [(0, 0, dims_vox[0], dims_vox[1])]
    while len(rects) < n_rooms:
        # Split the largest splittable rect.
        order = sorted(range(len(rects)), key=lambda i: -(rects[i][2] - rects[i][0]) * (rects[i][3] - rects[i][1]))
        for i in order:
            x0, z0, x1, z1 = rects[i]
            horizontal = (x1 - x0) >= (z1 - z0)
            side = (x1 - x0) if horizontal else (z1 - z0)
            if side < 2 * min_side:
                continue
            cut = int(rng.integers(min_side, side - min_side + 1))
            if horizontal:
                a, b = (x0, z0, x0 + cut, z1), (x0 + cut, z0, x1, z1)
            else:
                a, b = (x0, z0, x1, z0 + cut), (x0, z0 + cut, x1, z1)
            rects[i:i + 1] = [a, b]
            break
        else:
            break  # nothing splittable; fewer rooms than requested
    return rects


def sample_scene(rng_seed: int, config: SceneConfig) -> SceneSpec:
    """Deterministically sample a scene: rooms with walls/floor plus objects."""
    rng = np.random.default_rng(rng_seed)
    preset = config.preset
    v = preset.sem_voxel_m
    dims_vox = preset.sem_layout(config.scene_chunks).scene_dims_vox
    extent = (dims_vox[0] * v, dims_vox[1] * v, dims_vox[2] * v)
    wall_t = v          # one semantic voxel: always rasterizes
    floor_t = v
    wall_h = extent[1]  # walls reach the top of the grid; no ceiling

    lo, hi = config.rooms_range
    n_rooms = int(rng.integers(lo, hi + 1))
    rects = _split_rooms(rng, (dims_vox[0], dims_vox[2]), n_rooms, config.min_room_side_vox)
    rooms = tuple(
        RoomSpec(rect=(x0 * v, z0 * v, x1 * v, z1 * v), wall_height_m=wall_h,
                 room_type=str(rng.choice(ROOM_TYPES)))
        for x0, z0, x1, z1 in rects
    )

    objects: list[ObjectSpec] = []
    for room in rooms:
        x0, z0, x1, z1 = room.rect
        ix0, iz0, ix1, iz1 = x0 + wall_t, z0 + wall_t, x1 - wall_t, z1 - wall_t  # interior
        weights = ROOM_CATEGORY_WEIGHTS[room.room_type]
        cats = list(weights)
        p = np.array([weights[c] for c in cats], dtype=np.float64)
        p /= p.sum()
        n_objects = int(rng.integers(config.objects_per_room[0], config.objects_per_room[1] + 1))
        for _ in range(n_objects):
            category = str(rng.choice(cats, p=p))
            subcategory = str(rng.choice(SUBCATEGORIES[category]))
            (l_lo, l_hi), (s_lo, s_hi), (h_lo, h_hi) = _clamped_size_range(category, config)
            long_e = float(rng.uniform(l_lo, l_hi))
            short_e = float(rng.uniform(s_lo, s_hi))
            height = float(min(rng.uniform(h_lo, h_hi), extent[1] - floor_t))
            yaw = int(rng.choice((0, 90, 180, 270)))
            ex, ez = (long_e, short_e) if yaw in (0, 180) else (short_e, long_e)
            if ex > ix1 - ix0 or ez > iz1 - iz0:
                raise GenerationError(
                    f"{category} footprint {ex:.2f}x{ez:.2f} m does not fit room interior "
                    f"{ix1 - ix0:.2f}x{iz1 - iz0:.2f} m")
            for _attempt in range(config.placement_attempts):
                px = float(rng.uniform(ix0, ix1 - ex))
                pz = float(rng.uniform(iz0, iz1 - ez))
                box = Box((px, floor_t, pz), (px + ex, floor_t + height, pz + ez))
                gap = config.object_gap_m
                grown = Box((px - gap, 0.0, pz - gap), (px + ex + gap, extent[1], pz + ez + gap))
                if not any(grown.intersects(o.box) for o in objects):
                    objects.append(ObjectSpec(category, subcategory, box, yaw))
                    break
            # Placement failure from crowding is not an error: skip the object.

    return SceneSpec(extent_m=extent, rooms=rooms, objects=tuple(objects),
                     wall_thickness_m=wall_t, floor_thickness_m=floor_t)
