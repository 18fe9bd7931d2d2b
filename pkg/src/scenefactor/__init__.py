"""Factored text-to-3D-scene generation.

Text is mapped to a coarse semantic box layout by a first latent diffusion
stage, then to scene geometry by a second stage conditioned on the layout.
Scenes of arbitrary horizontal extent are produced by chunked outpainting,
and edited locally by manipulating semantic boxes and resynthesizing only
the affected region.
"""

__version__ = "0.1.0"
