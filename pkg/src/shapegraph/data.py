"""Dataset assembly, train/eval splits, and archive-backed loading.

A dataset bundles per-shape view features, single-view sketch features, and
class anchor rows. Splits are deterministic per seed. In category mode both
shape and sketch pools get a per-class 80/20 train/test cut. In zero-shot
mode the held-out classes never appear in any training pool; evaluation
queries are the held-out sketches and the gallery is every shape, so
held-out items sit among seen-class distractors.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import read_archive, write_archive
from .errors import ConfigError, DimensionError
from .synthetic import (
    PRIMITIVES,
    make_shape,
    synth_prototypes,
    synth_sketch,
    synth_views,
)
from .viewgraph import CameraRig, build_camera_rig

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class ShapeItem:
    item_id: str
    label: str
    views: np.ndarray  # (V, feature_dim)


@dataclass(frozen=True)
class SketchItem:
    item_id: str
    label: str
    features: np.ndarray  # (1, sketch_dim)


@dataclass
class Splits:
    train_shapes: list[int] = field(default_factory=list)
    test_shapes: list[int] = field(default_factory=list)
    train_sketches: list[int] = field(default_factory=list)
    test_sketches: list[int] = field(default_factory=list)
    seen_classes: list[str] = field(default_factory=list)
    unseen_classes: list[str] = field(default_factory=list)


@dataclass
class Dataset:
    shapes: list[ShapeItem]
    sketches: list[SketchItem]
    classes: list[str]
    prototypes: np.ndarray  # (C, proto_dim) aligned with ``classes``
    rig: CameraRig
    mode: str  # "category" | "zeroshot"
    splits: Splits
    seed: int

    @property
    def feature_dim(self) -> int:
        return self.shapes[0].views.shape[1]

    @property
    def sketch_dim(self) -> int:
        return self.sketches[0].features.shape[1]

    def shape_labels(self, idx: list[int]) -> list[str]:
        return [self.shapes[i].label for i in idx]

    def sketch_labels(self, idx: list[int]) -> list[str]:
        return [self.sketches[i].label for i in idx]

    def assert_no_leakage(self) -> None:
        """Raise if a held-out class reached a training pool."""
        if self.mode != "zeroshot":
            return
        unseen = set(self.splits.unseen_classes)
        for i in self.splits.train_shapes:
            if self.shapes[i].label in unseen:
                raise ConfigError(f"held-out shape {self.shapes[i].item_id} in training pool")
        for i in self.splits.train_sketches:
            if self.sketches[i].label in unseen:
                raise ConfigError(f"held-out sketch {self.sketches[i].item_id} in training pool")


def _rng(seed: int, *tags) -> np.random.Generator:
    key = tuple(zlib.crc32(str(t).encode()) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class CorpusConfig:
    classes: int = 8
    shapes_per_class: int = 30
    sketches_per_class: int = 20
    views: int = 12
    feature_dim: int = 64
    sketch_dim: int = 48
    proto_dim: int = 32
    noise: float = 0.03
    mode: str = "category"
    unseen: int = 2
    unseen_names: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.classes <= len(PRIMITIVES):
            raise ConfigError(f"classes must be in [2, {len(PRIMITIVES)}]")
        if self.shapes_per_class < 2 or self.sketches_per_class < 1:
            raise ConfigError("need >=2 shapes and >=1 sketch per class")
        if self.mode not in ("category", "zeroshot"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "zeroshot" and not 1 <= self.unseen <= self.classes - 1:
            raise ConfigError("held-out class count must leave at least one seen class")
        if self.unseen_names:
            if self.mode != "zeroshot":
                raise ConfigError("held-out class names require zeroshot mode")
            if len(set(self.unseen_names)) != len(self.unseen_names):
                raise ConfigError("held-out class names must be distinct")
            if not 1 <= len(self.unseen_names) <= self.classes - 1:
                raise ConfigError("held-out class names must leave at least one seen class")


def build_corpus(cfg: CorpusConfig) -> Dataset:
    """Generate the full synthetic dataset plus deterministic splits."""
    names = list(PRIMITIVES[:cfg.classes])
    rig = build_camera_rig(cfg.views)
    shapes: list[ShapeItem] = []
    sketches: list[SketchItem] = []
    for label in names:
        for i in range(cfg.shapes_per_class):
            item_id = f"{label}_{i:03d}"
            shp = make_shape(label, item_id, cfg.seed)
            shapes.append(ShapeItem(item_id, label, synth_views(shp, rig, cfg.feature_dim, cfg.seed)))
        for j in range(cfg.sketches_per_class):
            item_id = f"{label}_sk{j:03d}"
            src = make_shape(label, f"{label}_{j % cfg.shapes_per_class:03d}", cfg.seed)
            feat = synth_sketch(src, rig, cfg.sketch_dim, cfg.noise, cfg.seed, item_id)
            sketches.append(SketchItem(item_id, label, feat))
    protos = synth_prototypes(names, cfg.proto_dim, cfg.seed)
    ds = Dataset(shapes=shapes, sketches=sketches, classes=names, prototypes=protos,
                 rig=rig, mode=cfg.mode, splits=Splits(), seed=cfg.seed)
    ds.splits = make_splits(ds, cfg.mode, cfg.seed, unseen=cfg.unseen,
                            unseen_names=cfg.unseen_names)
    ds.assert_no_leakage()
    return ds


def _per_class_cut(items, rng) -> tuple[list[int], list[int]]:
    by_class: dict[str, list[int]] = {}
    for i, item in enumerate(items):
        by_class.setdefault(item.label, []).append(i)
    train, test = [], []
    for label in sorted(by_class):
        idx = by_class[label]
        order = rng.permutation(len(idx))
        cut = max(1, int(round(TRAIN_FRACTION * len(idx))))
        if cut >= len(idx):
            cut = len(idx) - 1
        train.extend(idx[k] for k in order[:cut])
        test.extend(idx[k] for k in order[cut:])
    return sorted(train), sorted(test)


def make_splits(ds: Dataset, mode: str, seed: int, unseen: int = 2,
                unseen_names: tuple[str, ...] = ()) -> Splits:
    if mode == "category":
        rng = _rng(seed, "split", "shapes")
        tr_s, te_s = _per_class_cut(ds.shapes, rng)
        rng = _rng(seed, "split", "sketches")
        tr_k, te_k = _per_class_cut(ds.sketches, rng)
        return Splits(train_shapes=tr_s, test_shapes=te_s,
                      train_sketches=tr_k, test_sketches=te_k,
                      seen_classes=list(ds.classes), unseen_classes=[])
    if mode != "zeroshot":
        raise ConfigError(f"unknown mode {mode!r}")
    if unseen_names:
        missing = sorted(set(unseen_names) - set(ds.classes))
        if missing:
            raise ConfigError(f"held-out classes not in the corpus: {missing}")
        if not 1 <= len(unseen_names) <= len(ds.classes) - 1:
            raise ConfigError("held-out class names must leave at least one seen class")
        unseen_classes = sorted(set(unseen_names))
    else:
        if not 1 <= unseen <= len(ds.classes) - 1:
            raise ConfigError("held-out class count must leave at least one seen class")
        rng = _rng(seed, "split", "classes")
        order = rng.permutation(len(ds.classes))
        unseen_classes = sorted(ds.classes[i] for i in order[:unseen])
    seen = sorted(set(ds.classes) - set(unseen_classes))
    tr_s = [i for i, s in enumerate(ds.shapes) if s.label not in unseen_classes]
    tr_k = [i for i, s in enumerate(ds.sketches) if s.label not in unseen_classes]
    te_k = [i for i, s in enumerate(ds.sketches) if s.label in unseen_classes]
    te_s = list(range(len(ds.shapes)))  # full gallery: held-out among distractors
    return Splits(train_shapes=tr_s, test_shapes=te_s,
                  train_sketches=tr_k, test_sketches=te_k,
                  seen_classes=seen, unseen_classes=unseen_classes)


def save_corpus(ds: Dataset, out_dir: str | Path) -> None:
    """Write train/test archives, anchors, and the dataset manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def shape_archive(name, idx):
        tensors = {ds.shapes[i].item_id: ds.shapes[i].views for i in idx}
        labels = {ds.shapes[i].item_id: ds.shapes[i].label for i in idx}
        write_archive(out / name, tensors, labels)

    def sketch_archive(name, idx):
        tensors = {ds.sketches[i].item_id: ds.sketches[i].features for i in idx}
        labels = {ds.sketches[i].item_id: ds.sketches[i].label for i in idx}
        write_archive(out / name, tensors, labels)

    shape_archive("shapes_train.mvhf", ds.splits.train_shapes)
    shape_archive("shapes_test.mvhf", ds.splits.test_shapes)
    sketch_archive("sketches_train.mvhf", ds.splits.train_sketches)
    sketch_archive("sketches_test.mvhf", ds.splits.test_sketches)
    write_archive(out / "prototypes.mvhf",
                  {c: ds.prototypes[i:i + 1] for i, c in enumerate(ds.classes)},
                  {c: c for c in ds.classes})
    manifest = {
        "classes": ds.classes,
        "views": len(ds.rig.positions),
        "feature_dim": ds.feature_dim,
        "sketch_dim": ds.sketch_dim,
        "proto_dim": int(ds.prototypes.shape[1]),
        "mode": ds.mode,
        "seen_classes": ds.splits.seen_classes,
        "unseen_classes": ds.splits.unseen_classes,
        "seed": ds.seed,
    }
    (out / "dataset.json").write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                      encoding="utf-8")


def _items_from_archive(path, kind):
    arc = read_archive(path)
    items = []
    for name in arc.tensors:
        t = arc.tensors[name]
        if t.ndim != 2:
            raise DimensionError(f"{path}: item {name!r} must be 2-D, got rank {t.ndim}")
        if kind == "sketch":
            if t.shape[0] != 1:
                raise DimensionError(f"{path}: sketch {name!r} must have one row")
            items.append(SketchItem(name, arc.labels[name], t))
        else:
            items.append(ShapeItem(name, arc.labels[name], t))
    return items


def load_corpus(data_dir: str | Path) -> Dataset:
    """Rebuild a dataset from the archives written by :func:`save_corpus`."""
    root = Path(data_dir)
    mpath = root / "dataset.json"
    if not mpath.exists():
        raise FileNotFoundError(f"{mpath}: dataset manifest missing")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    for key in ("classes", "views", "mode"):
        if key not in manifest:
            raise ConfigError(f"{mpath}: missing key {key!r}")

    tr_shapes = _items_from_archive(root / "shapes_train.mvhf", "shape")
    te_shapes = _items_from_archive(root / "shapes_test.mvhf", "shape")
    tr_sk = _items_from_archive(root / "sketches_train.mvhf", "sketch")
    te_sk = _items_from_archive(root / "sketches_test.mvhf", "sketch")

    shapes: list[ShapeItem] = []
    seen_ids: dict[str, int] = {}
    splits = Splits(seen_classes=manifest.get("seen_classes", manifest["classes"]),
                    unseen_classes=manifest.get("unseen_classes", []))
    for item in tr_shapes:
        seen_ids[item.item_id] = len(shapes)
        splits.train_shapes.append(len(shapes))
        shapes.append(item)
    for item in te_shapes:
        if item.item_id in seen_ids:  # zero-shot gallery repeats training shapes
            splits.test_shapes.append(seen_ids[item.item_id])
        else:
            splits.test_shapes.append(len(shapes))
            shapes.append(item)
    sketches: list[SketchItem] = list(tr_sk) + list(te_sk)
    splits.train_sketches = list(range(len(tr_sk)))
    splits.test_sketches = list(range(len(tr_sk), len(sketches)))

    arc = read_archive(root / "prototypes.mvhf")
    classes = list(manifest["classes"])
    missing = [c for c in classes if c not in arc.tensors]
    if missing:
        raise ConfigError(f"anchor rows missing for classes: {missing}")
    protos = np.vstack([arc.tensors[c] for c in classes])

    views = int(manifest["views"])
    for item in shapes:
        if item.views.shape[0] != views:
            raise DimensionError(
                f"shape {item.item_id!r} has {item.views.shape[0]} views, manifest says {views}")

    ds = Dataset(shapes=shapes, sketches=sketches, classes=classes, prototypes=protos,
                 rig=build_camera_rig(views), mode=manifest["mode"], splits=splits,
                 seed=int(manifest.get("seed", 0)))
    ds.assert_no_leakage()
    return ds
