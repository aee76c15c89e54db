"""Writer for the MVHF interchange container.

Layout (little-endian): magic ``MVHF``, version u16 = 1, then tensors back to
back until EOF. Each tensor: name length u16, name UTF-8, rank u8, one u32
per dimension, payload float32 row-major. Labels go in a JSON sidecar
``<name>.labels.json`` mapping item id -> class string.

Deliberately self-contained: the consuming retrieval engine is a separate
package, and this format is the only thing the two agree on.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MVHF"
VERSION = 1


def labels_path(path: str | Path) -> Path:
    return Path(str(path) + ".labels.json")


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.json")


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Serialize tensors in dict order; payloads are cast to float32."""
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def write_archive(path: str | Path, tensors: dict[str, np.ndarray],
                  labels: dict[str, str]) -> None:
    write_tensors(path, tensors)
    labels_path(path).write_text(
        json.dumps({k: labels[k] for k in sorted(labels)}, indent=0,
                   sort_keys=True),
        encoding="utf-8",
    )
