"""Binary tensor interchange format plus JSON sidecars.

Layout (little-endian): magic ``MVHF``, version u16 = 1, then tensors back to
back until EOF. Each tensor: name length u16, name UTF-8, rank u8, one u32
per dimension, payload float32 row-major. Labels live next to the file in
``<name>.labels.json`` mapping item id -> class string; checkpoints use a
``<name>.manifest.json`` instead.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ArchiveShapeError,
    BadMagicError,
    TruncatedArchiveError,
    UnlabeledItemError,
)

MAGIC = b"MVHF"
VERSION = 1
_MAX_ELEMENTS = 1 << 28  # sanity cap against corrupted dims


@dataclass
class FeatureArchive:
    """In-memory view of one interchange file."""

    tensors: dict[str, np.ndarray]  # float64 copies of the float32 payloads
    labels: dict[str, str]

    @property
    def manifest(self) -> dict[str, tuple[tuple[int, ...], str]]:
        return {name: (t.shape, "float32") for name, t in self.tensors.items()}


def labels_path(path: str | Path) -> Path:
    return Path(str(path) + ".labels.json")


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.json")


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Serialize tensors in dict order; payloads are cast to float32."""
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if arr.ndim < 1 or arr.ndim > 8:
            raise ArchiveShapeError(f"tensor {name!r} has unsupported rank {arr.ndim}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def write_archive(path: str | Path, tensors: dict[str, np.ndarray],
                  labels: dict[str, str]) -> None:
    """Write a labeled feature archive and its sidecar."""
    missing = [n for n in tensors if n not in labels]
    if missing:
        raise UnlabeledItemError(f"no label for items: {missing[:5]}")
    write_tensors(path, tensors)
    labels_path(path).write_text(
        json.dumps({k: labels[k] for k in sorted(labels)}, indent=0, sort_keys=True),
        encoding="utf-8",
    )


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise TruncatedArchiveError(f"{self.path}: truncated while reading {what}")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    @property
    def remaining(self) -> int:
        return len(self.blob) - self.off


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    """Parse the binary container; returns float64 arrays."""
    r = _Reader(Path(path).read_bytes(), str(path))
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError(f"{path}: bad magic")
    (version,) = struct.unpack("<H", r.take(2, "version"))
    if version != VERSION:
        raise BadMagicError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    while r.remaining:
        (name_len,) = struct.unpack("<H", r.take(2, "name length"))
        name = r.take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1, "rank"))
        if rank < 1 or rank > 8:
            raise ArchiveShapeError(f"{path}: tensor {name!r} has rank {rank}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        count = int(np.prod(dims, dtype=np.int64))
        if count <= 0 or count > _MAX_ELEMENTS:
            raise ArchiveShapeError(f"{path}: tensor {name!r} has implausible shape {dims}")
        payload = r.take(4 * count, f"payload of {name!r}")
        if name in tensors:
            raise ArchiveShapeError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
    return tensors


def read_archive(path: str | Path, require_labels: bool = True) -> FeatureArchive:
    """Load a feature archive; with ``require_labels`` every tensor must have
    a label entry in the sidecar."""
    tensors = read_tensors(path)
    side = labels_path(path)
    labels: dict[str, str] = {}
    if side.exists():
        labels = json.loads(side.read_text(encoding="utf-8"))
        if not isinstance(labels, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in labels.items()
        ):
            raise UnlabeledItemError(f"{side}: sidecar must map item id to class string")
    elif require_labels:
        raise UnlabeledItemError(f"{side}: label sidecar missing")
    if require_labels:
        missing = [n for n in tensors if n not in labels]
        if missing:
            raise UnlabeledItemError(f"{path}: unlabeled items: {missing[:5]}")
    return FeatureArchive(tensors=tensors, labels={k: labels[k] for k in tensors if k in labels})


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], manifest: dict) -> None:
    """Checkpoint = tensor container + JSON manifest (no labels)."""
    write_tensors(path, tensors)
    manifest = dict(manifest)
    manifest["tensors"] = {name: list(np.asarray(t).shape) for name, t in tensors.items()}
    manifest_path(path).write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    tensors = read_tensors(path)
    mpath = manifest_path(path)
    if not mpath.exists():
        raise UnlabeledItemError(f"{mpath}: checkpoint manifest missing")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    declared = manifest.get("tensors", {})
    for name, shape in declared.items():
        if name not in tensors:
            raise ArchiveShapeError(f"{path}: manifest lists missing tensor {name!r}")
        if list(tensors[name].shape) != list(shape):
            raise ArchiveShapeError(
                f"{path}: tensor {name!r} is {tensors[name].shape}, manifest says {shape}"
            )
    return tensors, manifest
