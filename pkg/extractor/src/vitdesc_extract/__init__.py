"""ViT facet extraction to VITD descriptor files."""

from .config import ExtractConfig
from .models import ModelLoadError, known_models, load_model
from .pipeline import extract, extract_augmented, image_tensor, load_image
from .vit import AdapterError, ExtractedFeatures, ViTExtractor, wrap_model
from .vitd import FACETS, grid_shape, write_vitd

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "ExtractConfig",
    "ExtractedFeatures",
    "FACETS",
    "ModelLoadError",
    "ViTExtractor",
    "extract",
    "extract_augmented",
    "grid_shape",
    "image_tensor",
    "known_models",
    "load_image",
    "load_model",
    "wrap_model",
    "write_vitd",
]
