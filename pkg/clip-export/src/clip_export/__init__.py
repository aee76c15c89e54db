"""Standalone exporter producing MVHF embedding archives.

Bridges real (or deterministically simulated) vision-language features into
the binary interchange format the retrieval engine reads; the two packages
share file formats, never code.
"""

from .backends import (CLIP_BACKEND, EMBED_DIM, HASH_BACKEND, ClipEncoder,
                       HashedEncoder, resolve_backend)
from .errors import ExportError, LayoutError, TemplateError
from .export import export_image_embeddings, export_text_prototypes
from .manifest import DEFAULT_TEMPLATE, PLACEHOLDER, ExportManifest

__all__ = [
    "CLIP_BACKEND",
    "DEFAULT_TEMPLATE",
    "EMBED_DIM",
    "ExportError",
    "ExportManifest",
    "HASH_BACKEND",
    "ClipEncoder",
    "HashedEncoder",
    "LayoutError",
    "PLACEHOLDER",
    "TemplateError",
    "export_image_embeddings",
    "export_text_prototypes",
    "resolve_backend",
]
