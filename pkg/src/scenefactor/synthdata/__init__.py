"""Procedural indoor scenes with captions and an analytic distance oracle."""
from .captions import (CAPTION_TYPES, DEFAULT_CAPTION_CONFIG, EMPTY_ROOM_CAPTION,
                       EMPTY_VIEW_CAPTION, CaptionConfig, all_captions, article,
                       caption_channels, caption_chunk, chunk_mentions, count_word,
                       plural)
from .dataset import (MANIFEST_NAME, build_dataset, default_scene_config, load_entry,
                      load_manifest, sample_scene_retrying, scene_seed)
from .rasterize import (box_surface_distance, rasterize, rasterize_geometry,
                        rasterize_object_ids, rasterize_semantic, scene_boxes)
from .scenes import (CATEGORIES, CATEGORY_CHANNEL, CATEGORY_SIZE_RANGES,
                     CHANNEL_CATEGORY, ROOM_TYPES, SUBCATEGORIES, Box,
                     GenerationError, ObjectSpec, RoomSpec, SceneConfig, SceneSpec,
                     sample_scene)

__all__ = [
    "CAPTION_TYPES", "DEFAULT_CAPTION_CONFIG", "EMPTY_ROOM_CAPTION",
    "EMPTY_VIEW_CAPTION", "CaptionConfig", "all_captions", "article",
    "caption_channels", "caption_chunk", "chunk_mentions", "count_word", "plural",
    "MANIFEST_NAME", "build_dataset", "default_scene_config", "load_entry",
    "load_manifest", "sample_scene_retrying", "scene_seed",
    "box_surface_distance", "rasterize", "rasterize_geometry",
    "rasterize_object_ids", "rasterize_semantic", "scene_boxes",
    "CATEGORIES", "CATEGORY_CHANNEL", "CATEGORY_SIZE_RANGES", "CHANNEL_CATEGORY",
    "ROOM_TYPES", "SUBCATEGORIES", "Box", "GenerationError", "ObjectSpec",
    "RoomSpec", "SceneConfig", "SceneSpec", "sample_scene",
]
