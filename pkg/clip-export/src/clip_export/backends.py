"""Embedding backends: a real CLIP encoder and a deterministic stand-in.

The stand-in hashes the input (prompt text or decoded pixels) into a seed and
draws a fixed Gaussian direction from it, so exports are reproducible on any
machine with no model weights. Vectors are 512-wide to match the ViT-B/16
projection the real backend produces.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ExportError

EMBED_DIM = 512
HASH_BACKEND = "hashed-sha256-v1"
CLIP_BACKEND = "openai/clip-vit-base-patch16"


def _digest_vector(tag: bytes) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(tag).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(EMBED_DIM)
    return v / np.linalg.norm(v)


def _load_rgb(path: Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except Exception as exc:
        raise ExportError(f"cannot decode image {path}: {exc}") from exc


class HashedEncoder:
    """Content-addressed pseudo-embeddings; deterministic, weight-free."""

    name = HASH_BACKEND

    def encode_text(self, prompts: list[str]) -> np.ndarray:
        rows = [_digest_vector(b"text\x00" + p.encode("utf-8")) for p in prompts]
        return np.stack(rows)

    def encode_images(self, paths: list[Path]) -> np.ndarray:
        rows = []
        for path in paths:
            img = _load_rgb(path)
            tag = b"image\x00" + f"{img.width}x{img.height}\x00".encode() + img.tobytes()
            rows.append(_digest_vector(tag))
        return np.stack(rows)


class ClipEncoder:
    """Frozen CLIP ViT-B/16 through the transformers library.

    Requires the optional ``clip`` extra and locally available weights;
    nothing is fine-tuned and no gradients are kept.
    """

    def __init__(self, model_id: str = CLIP_BACKEND):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ExportError(
                "the clip backend needs torch and transformers installed "
                "(pip install 'clip-export[clip]')"
            ) from exc
        self.name = model_id
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)

    def encode_text(self, prompts: list[str]) -> np.ndarray:
        with self._torch.no_grad():
            batch = self.processor(text=prompts, return_tensors="pt", padding=True)
            out = self.model.get_text_features(**batch)
        arr = out.double().cpu().numpy()
        return arr / np.linalg.norm(arr, axis=1, keepdims=True)

    def encode_images(self, paths: list[Path]) -> np.ndarray:
        images = [_load_rgb(p) for p in paths]
        with self._torch.no_grad():
            batch = self.processor(images=images, return_tensors="pt")
            out = self.model.get_image_features(**batch)
        arr = out.double().cpu().numpy()
        return arr / np.linalg.norm(arr, axis=1, keepdims=True)


def resolve_backend(spec: str = "hash"):
    """``hash`` (default), ``clip``, or an explicit CLIP model identifier."""
    if spec == "hash":
        return HashedEncoder()
    if spec == "clip":
        return ClipEncoder()
    return ClipEncoder(spec)
