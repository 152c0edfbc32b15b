"""Synthetic sonar training images via multi-style transfer, plus detection scoring."""

from .imagemodel import BoundingBox, DatasetManifest, Image, load_image, load_manifest, save_image

__version__ = "0.1.0"

__all__ = ["BoundingBox", "DatasetManifest", "Image", "load_image", "load_manifest", "save_image"]
