"""Optimization loops: Adam, cosine schedule, staged and joint training.

Two strategies cover the four mode/strategy pairs. ``two_stage`` first
trains the shape branch (classifier plus semantic alignment), then freezes
it and aligns the sketch adapter with quadruplets. ``one_stage`` trains
encoder, adapter, and a shared semantic projection jointly with no
classification term. All randomness flows through seeded generators keyed
by stage and epoch, so runs are bit-reproducible.
"""

from __future__ import annotations

import hashlib
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .archive import load_checkpoint, save_checkpoint
from .autodiff import Tensor, no_grad
from .data import Dataset
from .encoder import (
    AdapterParams,
    EncoderConfig,
    EncoderParams,
    encode_shape,
    sketch_adapter,
)
from .errors import ArchiveShapeError, ConfigError
from .losses import (
    AM_MARGIN_DEFAULT,
    AM_SCALE_DEFAULT,
    QUAD_MARGIN_DEFAULT,
    TAU_DEFAULT,
    ClassifierWeights,
    PrototypeBank,
    QuadrupletBatch,
    stage1_objective,
    stage2_objective,
    zeroshot_objective,
)
from .viewgraph import build_camera_rig

MODES = ("category", "zeroshot")
STRATEGIES = ("two_stage", "one_stage")


def _rng(seed: int, *tags) -> np.random.Generator:
    key = tuple(zlib.crc32(str(t).encode()) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def derive_schedule(views: int) -> tuple[int, ...]:
    """Default level sizes: halve the view count, at most three levels."""
    if views < 1:
        raise ConfigError("need at least one view")
    sched = [views]
    while len(sched) < 3 and sched[-1] // 2 >= 2:
        sched.append(sched[-1] // 2)
    return tuple(sched)


def cosine_lr(epoch: int, total: int, lr_start: float, lr_end: float) -> float:
    """Half-cosine decay from ``lr_start`` at epoch 0 toward ``lr_end``."""
    if total < 1:
        raise ConfigError("total epochs must be positive")
    if not 0 <= epoch <= total:
        raise ConfigError(f"epoch {epoch} outside [0, {total}]")
    if lr_start <= 0 or lr_end <= 0 or lr_end > lr_start:
        raise ConfigError("need lr_start >= lr_end > 0")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * epoch / total))


class Adam:
    """Adam with bias correction over a fixed set of named tensors."""

    def __init__(self, names, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.names = sorted(names)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name in self.names:
            p = params[name]
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for t in params.values():
        t.grad = None


@dataclass(frozen=True)
class ModelSpec:
    """Architecture knobs; feature widths come from the dataset."""

    embed_dim: int = 64
    schedule: tuple[int, ...] | None = None  # default derived from view count
    knn: int = 4
    slope: float = 0.2
    pooling: str = "max"
    adapter_hidden: int = 64


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "category"
    strategy: str = "two_stage"
    epochs: int = 40  # per stage
    batch_size: int = 32
    quadruplets: int = 64  # sampled per epoch
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    seed: int = 0
    tau: float = TAU_DEFAULT
    am_scale: float = AM_SCALE_DEFAULT
    am_margin: float = AM_MARGIN_DEFAULT
    quad_margin: float = QUAD_MARGIN_DEFAULT
    use_quad: bool = True
    use_cls: bool = True
    use_sem_3d: bool = True
    use_sem_sketch: bool = True
    w_quad: float = 1.0
    w_cls: float = 1.0
    w_sem_3d: float = 1.0
    w_sem_sketch: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size < 1 or self.quadruplets < 1:
            raise ConfigError("batch_size and quadruplets must be positive")
        for label, w in (("w_quad", self.w_quad), ("w_cls", self.w_cls),
                         ("w_sem_3d", self.w_sem_3d), ("w_sem_sketch", self.w_sem_sketch)):
            if not w > 0.0:
                raise ConfigError(f"{label} must be positive")
        cosine_lr(0, 1, self.lr_start, self.lr_end)

    def loss_weights(self) -> dict[str, float]:
        """Per-term weights keyed by the loss-part names used in logs."""
        return {"quad": self.w_quad, "cls3d": self.w_cls, "clsske": self.w_cls,
                "sem3d": self.w_sem_3d, "semske": self.w_sem_sketch}


class ModelState:
    """Every trainable tensor of the retrieval model, plus its wiring."""

    def __init__(self, enc_cfg: EncoderConfig, sketch_dim: int, proto_dim: int,
                 classes: list[str], adapter_hidden: int, seed: int = 0,
                 am_scale: float = AM_SCALE_DEFAULT, am_margin: float = AM_MARGIN_DEFAULT):
        if sketch_dim < 1 or proto_dim < 1:
            raise ConfigError("sketch and anchor widths must be positive")
        self.encoder_config = enc_cfg
        self.sketch_dim = sketch_dim
        self.proto_dim = proto_dim
        self.adapter_hidden = adapter_hidden
        self.classes = list(classes)
        self.seed = seed
        self.encoder = EncoderParams(enc_cfg, seed)
        self.adapter = AdapterParams(sketch_dim, adapter_hidden, enc_cfg.embed_dim,
                                     seed, enc_cfg.slope)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(303,)))
        e = enc_cfg.embed_dim
        proj = ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(e), size=(e, proto_dim)))
        clsw = ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(e), size=(len(classes), e)))
        self.params: dict[str, Tensor] = {}
        for k, t in self.encoder.tensors.items():
            self.params[f"encoder.{k}"] = t
        for k, t in self.adapter.tensors.items():
            self.params[k] = t  # adapter.* names are already prefixed
        self.params["proj.w"] = proj
        self.params["classifier.w"] = clsw
        self.classifier = ClassifierWeights(clsw, self.classes, am_scale, am_margin)

    @property
    def projection(self) -> Tensor:
        return self.params["proj.w"]

    def shape_branch_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("encoder.")] + ["proj.w", "classifier.w"]

    def sketch_branch_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("adapter.")]

    def joint_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(("encoder.", "adapter."))] + ["proj.w"]


def param_digest(model: ModelState, names=None) -> str:
    """SHA-256 over the named tensors; used to prove branches stayed frozen."""
    h = hashlib.sha256()
    for name in sorted(names if names is not None else model.params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.params[name].data).tobytes())
    return h.hexdigest()


def save_model(path, model: ModelState) -> None:
    cfg = model.encoder_config
    manifest = {
        "kind": "retrieval-model",
        "classes": model.classes,
        "feature_dim": cfg.feature_dim,
        "embed_dim": cfg.embed_dim,
        "schedule": list(cfg.schedule),
        "knn": cfg.knn,
        "slope": cfg.slope,
        "pooling": cfg.pooling,
        "sketch_dim": model.sketch_dim,
        "adapter_hidden": model.adapter_hidden,
        "proto_dim": model.proto_dim,
        "seed": model.seed,
        "am_scale": model.classifier.scale,
        "am_margin": model.classifier.margin,
    }
    save_checkpoint(path, {k: v.data for k, v in model.params.items()}, manifest)


def load_model(path) -> ModelState:
    tensors, manifest = load_checkpoint(path)
    if manifest.get("kind") != "retrieval-model":
        raise ArchiveShapeError(f"{path}: not a retrieval model checkpoint")
    enc_cfg = EncoderConfig(
        feature_dim=int(manifest["feature_dim"]),
        embed_dim=int(manifest["embed_dim"]),
        schedule=tuple(manifest["schedule"]),
        knn=int(manifest["knn"]),
        slope=float(manifest["slope"]),
        pooling=manifest["pooling"],
    )
    model = ModelState(enc_cfg, int(manifest["sketch_dim"]), int(manifest["proto_dim"]),
                       list(manifest["classes"]), int(manifest["adapter_hidden"]),
                       int(manifest.get("seed", 0)), float(manifest["am_scale"]),
                       float(manifest["am_margin"]))
    missing = sorted(set(model.params) - set(tensors))
    if missing:
        raise ArchiveShapeError(f"{path}: checkpoint lacks tensors {missing[:5]}")
    for name, t in model.params.items():
        arr = tensors[name]
        if arr.shape != t.data.shape:
            raise ArchiveShapeError(
                f"{path}: tensor {name!r} is {arr.shape}, model expects {t.data.shape}")
        t.data = np.array(arr, dtype=np.float64)
    return model


def embed_shapes(model: ModelState, ds: Dataset, idx) -> np.ndarray:
    """Forward-only embeddings (len(idx), embed_dim)."""
    with no_grad():
        rows = [encode_shape(model.encoder, ds.shapes[i].views, ds.rig).vector.data
                for i in idx]
    return np.vstack(rows) if rows else np.zeros((0, model.encoder_config.embed_dim))


def embed_sketches(model: ModelState, ds: Dataset, idx) -> np.ndarray:
    if not len(idx):
        return np.zeros((0, model.encoder_config.embed_dim))
    feats = np.vstack([ds.sketches[i].features for i in idx])
    with no_grad():
        return sketch_adapter(ad.constant(feats), model.adapter).data


@dataclass(frozen=True)
class QuadrupletIndices:
    """Index quadruples into the dataset pools, constraints pre-validated."""

    anchor_sketches: tuple[int, ...]
    positive_shapes: tuple[int, ...]
    negative_shapes: tuple[int, ...]
    negative_sketches: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.anchor_sketches)


def sample_quadruplets(ds: Dataset, count: int, seed_or_rng,
                       sketch_pool=None, shape_pool=None) -> QuadrupletIndices:
    """Draw ``count`` (anchor sketch, same-class shape, other-class shape,
    other-class sketch) tuples from the training pools."""
    if count < 1:
        raise ConfigError("quadruplet count must be positive")
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else _rng(int(seed_or_rng), "quadruplets")
    sketch_pool = list(ds.splits.train_sketches if sketch_pool is None else sketch_pool)
    shape_pool = list(ds.splits.train_shapes if shape_pool is None else shape_pool)
    if not sketch_pool or not shape_pool:
        raise ConfigError("empty sampling pool")

    shapes_by_class: dict[str, list[int]] = {}
    for i in shape_pool:
        shapes_by_class.setdefault(ds.shapes[i].label, []).append(i)
    sketches_by_class: dict[str, list[int]] = {}
    for i in sketch_pool:
        sketches_by_class.setdefault(ds.sketches[i].label, []).append(i)
    classes = sorted(set(shapes_by_class) & set(sketches_by_class))
    if len(set(ds.sketches[i].label for i in sketch_pool)) < 2:
        raise ConfigError("quadruplet sampling needs at least two classes of sketches")

    other_shapes = {c: [i for i in shape_pool if ds.shapes[i].label != c] for c in classes}
    other_sketches = {c: [i for i in sketch_pool if ds.sketches[i].label != c] for c in classes}

    anchors, positives, neg_shapes, neg_sketches = [], [], [], []
    usable = [i for i in sketch_pool if ds.sketches[i].label in shapes_by_class]
    if not usable:
        raise ConfigError("no sketch class has matching shapes in the pool")
    for _ in range(count):
        a = usable[rng.integers(0, len(usable))]
        c = ds.sketches[a].label
        anchors.append(a)
        pool_p = shapes_by_class[c]
        positives.append(pool_p[rng.integers(0, len(pool_p))])
        pool_n = other_shapes[c]
        if not pool_n:
            raise ConfigError(f"no other-class shapes to contrast with {c!r}")
        neg_shapes.append(pool_n[rng.integers(0, len(pool_n))])
        pool_s = other_sketches[c]
        if not pool_s:
            raise ConfigError(f"no other-class sketches to contrast with {c!r}")
        neg_sketches.append(pool_s[rng.integers(0, len(pool_s))])
    return QuadrupletIndices(tuple(anchors), tuple(positives),
                             tuple(neg_shapes), tuple(neg_sketches))


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def _mean_log(stage: str, epoch: int, lr: float, sums: dict, batches: int) -> dict:
    entry = {"stage": stage, "epoch": epoch, "lr": lr}
    for k, v in sums.items():
        entry[k] = v / max(batches, 1)
    return entry


def training_bank(ds: Dataset) -> PrototypeBank:
    """Anchor rows restricted to classes the run is allowed to see."""
    seen = ds.splits.seen_classes or ds.classes
    rows = [ds.classes.index(c) for c in seen]
    return PrototypeBank(list(seen), ds.prototypes[rows])


def train_stage1(ds: Dataset, model: ModelState, cfg: TrainConfig,
                 bank: PrototypeBank) -> list[dict]:
    """Shape branch: classification + semantic alignment on training shapes."""
    names = model.shape_branch_names()
    opt = Adam(names)
    log = []
    idx = list(ds.splits.train_shapes)
    if not idx:
        raise ConfigError("no training shapes in the split")
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, max(cfg.epochs, 1), cfg.lr_start, cfg.lr_end)
        rng = _rng(cfg.seed, "stage1", epoch)
        order = [idx[i] for i in rng.permutation(len(idx))]
        sums: dict[str, float] = {}
        batches = 0
        for chunk in _chunks(order, cfg.batch_size):
            emb = ad.concat_rows([encode_shape(model.encoder, ds.shapes[i].views, ds.rig).vector
                                  for i in chunk])
            labels = [ds.shapes[i].label for i in chunk]
            total, parts = stage1_objective(emb, labels, model.classifier,
                                            model.projection, bank, cfg.tau,
                                            weights=cfg.loss_weights())
            zero_grads(model.params)
            ad.backward(total)
            opt.step(model.params, lr)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            batches += 1
        log.append(_mean_log("stage1", epoch, lr, sums, batches))
    return log


def train_stage2(ds: Dataset, model: ModelState, cfg: TrainConfig,
                 bank: PrototypeBank) -> list[dict]:
    """Sketch adapter against the frozen shape branch."""
    names = model.sketch_branch_names()
    opt = Adam(names)
    frozen_digest = param_digest(model, model.shape_branch_names())
    frozen_cls = model.classifier.frozen()
    frozen_proj = ad.constant(model.projection.data.copy())
    shape_emb = {}
    train_shapes = list(ds.splits.train_shapes)
    frozen = embed_shapes(model, ds, train_shapes)
    for row, i in enumerate(train_shapes):
        shape_emb[i] = frozen[row]

    log = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, max(cfg.epochs, 1), cfg.lr_start, cfg.lr_end)
        rng = _rng(cfg.seed, "stage2", epoch)
        quads = sample_quadruplets(ds, cfg.quadruplets, rng)
        sums: dict[str, float] = {}
        batches = 0
        for sel in _chunks(list(range(quads.size)), cfg.batch_size):
            a_idx = [quads.anchor_sketches[i] for i in sel]
            p_idx = [quads.positive_shapes[i] for i in sel]
            n_idx = [quads.negative_shapes[i] for i in sel]
            s_idx = [quads.negative_sketches[i] for i in sel]
            anchors = sketch_adapter(
                ad.constant(np.vstack([ds.sketches[i].features for i in a_idx])), model.adapter)
            neg_ske = sketch_adapter(
                ad.constant(np.vstack([ds.sketches[i].features for i in s_idx])), model.adapter)
            batch = QuadrupletBatch(
                anchors=anchors,
                positives=ad.constant(np.vstack([shape_emb[i] for i in p_idx])),
                negatives3d=ad.constant(np.vstack([shape_emb[i] for i in n_idx])),
                negativesketch=neg_ske,
                anchor_classes=[ds.sketches[i].label for i in a_idx],
                positive_classes=[ds.shapes[i].label for i in p_idx],
                negative3d_classes=[ds.shapes[i].label for i in n_idx],
                negativesketch_classes=[ds.sketches[i].label for i in s_idx],
            )
            feats = ad.concat_rows([anchors, neg_ske])
            labels = batch.anchor_classes + batch.negativesketch_classes
            total, parts = stage2_objective(
                batch, feats, labels, frozen_cls, frozen_proj, bank,
                cfg.tau, cfg.quad_margin,
                use_quad=cfg.use_quad, use_cls=cfg.use_cls, use_sem=cfg.use_sem_sketch,
                weights=cfg.loss_weights())
            zero_grads(model.params)
            ad.backward(total)
            opt.step(model.params, lr)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            batches += 1
        log.append(_mean_log("stage2", epoch, lr, sums, batches))
    if param_digest(model, model.shape_branch_names()) != frozen_digest:
        raise ConfigError("frozen shape branch changed during sketch alignment")
    return log


def train_joint(ds: Dataset, model: ModelState, cfg: TrainConfig,
                bank: PrototypeBank) -> list[dict]:
    """Single-pass strategy: everything but the classifier trains together."""
    names = model.joint_names()
    opt = Adam(names)
    log = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, max(cfg.epochs, 1), cfg.lr_start, cfg.lr_end)
        rng = _rng(cfg.seed, "joint", epoch)
        quads = sample_quadruplets(ds, cfg.quadruplets, rng)
        sums: dict[str, float] = {}
        batches = 0
        for sel in _chunks(list(range(quads.size)), cfg.batch_size):
            a_idx = [quads.anchor_sketches[i] for i in sel]
            p_idx = [quads.positive_shapes[i] for i in sel]
            n_idx = [quads.negative_shapes[i] for i in sel]
            s_idx = [quads.negative_sketches[i] for i in sel]
            cache: dict[int, Tensor] = {}
            for i in p_idx + n_idx:
                if i not in cache:
                    cache[i] = encode_shape(model.encoder, ds.shapes[i].views, ds.rig).vector
            anchors = sketch_adapter(
                ad.constant(np.vstack([ds.sketches[i].features for i in a_idx])), model.adapter)
            neg_ske = sketch_adapter(
                ad.constant(np.vstack([ds.sketches[i].features for i in s_idx])), model.adapter)
            batch = QuadrupletBatch(
                anchors=anchors,
                positives=ad.concat_rows([cache[i] for i in p_idx]),
                negatives3d=ad.concat_rows([cache[i] for i in n_idx]),
                negativesketch=neg_ske,
                anchor_classes=[ds.sketches[i].label for i in a_idx],
                positive_classes=[ds.shapes[i].label for i in p_idx],
                negative3d_classes=[ds.shapes[i].label for i in n_idx],
                negativesketch_classes=[ds.sketches[i].label for i in s_idx],
            )
            uniq = sorted(cache)
            feats_3d = ad.concat_rows([cache[i] for i in uniq])
            labels_3d = [ds.shapes[i].label for i in uniq]
            feats_ske = ad.concat_rows([anchors, neg_ske])
            labels_ske = batch.anchor_classes + batch.negativesketch_classes
            total, parts = zeroshot_objective(
                batch, feats_3d, labels_3d, model.projection,
                feats_ske, labels_ske, model.projection, bank,
                cfg.tau, cfg.quad_margin,
                use_quad=cfg.use_quad, use_sem_3d=cfg.use_sem_3d,
                use_sem_ske=cfg.use_sem_sketch, weights=cfg.loss_weights())
            zero_grads(model.params)
            ad.backward(total)
            opt.step(model.params, lr)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            batches += 1
        log.append(_mean_log("joint", epoch, lr, sums, batches))
    return log


def build_model(ds: Dataset, spec: ModelSpec, cfg: TrainConfig) -> ModelState:
    schedule = spec.schedule if spec.schedule is not None \
        else derive_schedule(len(ds.rig.positions))
    enc_cfg = EncoderConfig(feature_dim=ds.feature_dim, embed_dim=spec.embed_dim,
                            schedule=schedule, knn=spec.knn, slope=spec.slope,
                            pooling=spec.pooling)
    if enc_cfg.schedule[0] != len(ds.rig.positions):
        raise ConfigError(
            f"schedule starts at {enc_cfg.schedule[0]} but dataset has "
            f"{len(ds.rig.positions)} views")
    classes = ds.splits.seen_classes or ds.classes
    return ModelState(enc_cfg, ds.sketch_dim, int(ds.prototypes.shape[1]), list(classes),
                      spec.adapter_hidden, cfg.seed, cfg.am_scale, cfg.am_margin)


def train(ds: Dataset, spec: ModelSpec, cfg: TrainConfig) -> tuple[ModelState, list[dict]]:
    """Dispatch on strategy; returns the model and per-epoch log entries."""
    ds.assert_no_leakage()
    model = build_model(ds, spec, cfg)
    bank = training_bank(ds)
    if cfg.strategy == "two_stage":
        log = train_stage1(ds, model, cfg, bank)
        log += train_stage2(ds, model, cfg, bank)
    else:
        log = train_joint(ds, model, cfg, bank)
    return model, log
