"""Texture synthesis and interpolation toolkit.

Encodes texture examples into a latent space where they can be tiled,
shuffled, and convex-blended, then decodes them back into seamless
images. Ships a training loop, a classical compositing postprocess, a
seven-metric evaluation harness, an HTTP painting service, and a CLI.
"""

__version__ = "0.1.0"

from .latent import (LatentField, LatentPair, ShufflePlan, WeightField,
                     apply_shuffle, blend_global, blend_local,
                     corner_override, make_shuffle_plan, palette_weights,
                     tile)
from .models import ModelBundle, ModelConfig, build_model, desk_config

__all__ = [
    "LatentField", "LatentPair", "ShufflePlan", "WeightField",
    "apply_shuffle", "blend_global", "blend_local", "corner_override",
    "make_shuffle_plan", "palette_weights", "tile",
    "ModelBundle", "ModelConfig", "build_model", "desk_config",
    "__version__",
]
