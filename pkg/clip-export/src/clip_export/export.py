"""The two export operations: text prototypes and image embeddings."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .backends import HashedEncoder, resolve_backend
from .errors import LayoutError
from .manifest import DEFAULT_TEMPLATE, PLACEHOLDER, ExportManifest
from .mvhf import write_archive

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp",
                  ".ppm", ".pgm", ".tif", ".tiff"}


def export_text_prototypes(classes, template: str = DEFAULT_TEMPLATE,
                           out: str | Path = "prototypes.mvhf",
                           backend=None) -> ExportManifest:
    """One unit row per class from the prompt template; labels are the
    class names themselves."""
    classes = list(classes)
    if not classes:
        raise LayoutError("no classes to export")
    if len(set(classes)) != len(classes):
        dupes = sorted({c for c in classes if classes.count(c) > 1})
        raise LayoutError(f"duplicate class names: {dupes}")
    backend = backend or HashedEncoder()
    manifest = ExportManifest(model=backend.name, classes=classes,
                              items={c: c for c in classes},
                              template=template)
    prompts = [template.replace(PLACEHOLDER, c) for c in classes]
    vecs = backend.encode_text(prompts)
    tensors = {c: vecs[i:i + 1] for i, c in enumerate(classes)}
    write_archive(out, tensors, {c: c for c in classes})
    manifest.write(out, {c: t.shape for c, t in tensors.items()})
    return manifest


def _collect_images(root: Path) -> list[tuple[str, str, Path]]:
    """(item id, class, path) triples; class = first-level directory name."""
    if not root.is_dir():
        raise LayoutError(f"image directory {root} does not exist")
    strays = [p.name for p in root.iterdir()
              if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
    if strays:
        raise LayoutError(
            f"images must sit inside class directories, found at top level: "
            f"{sorted(strays)[:5]}")
    triples = []
    for cls_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for path in sorted(cls_dir.rglob("*")):
            if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
                item = path.relative_to(root).with_suffix("").as_posix()
                triples.append((item, cls_dir.name, path))
    if not triples:
        raise LayoutError(f"no images found under {root}")
    return triples


def export_image_embeddings(image_dir: str | Path,
                            out: str | Path = "images.mvhf",
                            backend=None) -> ExportManifest:
    """One unit row per image file; labels come from the directory names."""
    backend = backend or HashedEncoder()
    triples = _collect_images(Path(image_dir))
    vecs = backend.encode_images([p for _, _, p in triples])
    tensors = {item: vecs[i:i + 1] for i, (item, _, _) in enumerate(triples)}
    labels = {item: cls for item, cls, _ in triples}
    classes = sorted(set(labels.values()))
    manifest = ExportManifest(model=backend.name, classes=classes,
                              items={item: item for item, _, _ in triples})
    write_archive(out, tensors, labels)
    manifest.write(out, {n: t.shape for n, t in tensors.items()})
    return manifest
