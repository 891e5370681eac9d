"""Saliency-driven tiled video compression and a small perceptual storage manager."""

from vignette.errors import (
    ConfigError,
    ContainerError,
    EncoderError,
    MetadataError,
    NotFoundError,
    PreconditionError,
    VignetteError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContainerError",
    "EncoderError",
    "MetadataError",
    "NotFoundError",
    "PreconditionError",
    "VignetteError",
    "__version__",
]
