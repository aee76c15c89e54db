"""Training objectives: semantic prototype alignment, additive-margin cosine
classification, the quadruplet hinge, and their stage compositions.

All losses return 1x1 tape tensors so gradients reach whatever produced the
input embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError

TAU_DEFAULT = 0.07
AM_SCALE_DEFAULT = 15.0
AM_MARGIN_DEFAULT = 0.3
QUAD_MARGIN_DEFAULT = 1.0


@dataclass
class PrototypeBank:
    """Fixed per-class semantic target vectors, unit-normalized on load."""

    labels: list[str]
    vectors: np.ndarray  # (C, d_p)

    def __post_init__(self):
        vecs = np.asarray(self.vectors, dtype=np.float64)
        if len(self.labels) != vecs.shape[0]:
            raise ConfigError(f"{len(self.labels)} labels for {vecs.shape[0]} prototypes")
        if len(self.labels) < 2:
            raise ConfigError("prototype bank needs at least 2 classes")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("duplicate class labels in prototype bank")
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise NumericError("zero prototype vector")
        self.vectors = vecs / norms
        self.labels = list(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigError(f"label {label!r} not in prototype bank") from None


@dataclass
class ClassifierWeights:
    """Cosine classifier: one weight row per class, scale t, additive margin m."""

    w: Tensor  # (N_class, d)
    labels: list[str]
    scale: float = AM_SCALE_DEFAULT
    margin: float = AM_MARGIN_DEFAULT

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"scale t must be positive, got {self.scale}")
        if not 0 <= self.margin < 1:
            raise ConfigError(f"margin m must be in [0, 1), got {self.margin}")
        if self.w.rows != len(self.labels):
            raise ConfigError(f"{self.w.rows} weight rows for {len(self.labels)} labels")

    def frozen(self) -> "ClassifierWeights":
        return ClassifierWeights(self.w.detach(), list(self.labels), self.scale, self.margin)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigError(f"label {label!r} unknown to classifier") from None


@dataclass
class QuadrupletBatch:
    """M rows of (sketch anchor, same-class 3D, other-class 3D, other-class sketch)."""

    anchors: Tensor
    positives: Tensor
    negatives3d: Tensor
    negativesketch: Tensor
    anchor_classes: list[str]
    positive_classes: list[str]
    negative3d_classes: list[str]
    negativesketch_classes: list[str]

    def __post_init__(self):
        m = self.anchors.rows
        for name, t in (("positives", self.positives), ("negatives3d", self.negatives3d),
                        ("negativesketch", self.negativesketch)):
            if t.rows != m:
                raise ConfigError(f"{name} has {t.rows} rows, anchors have {m}")
        for a, p, n3, ns in zip(self.anchor_classes, self.positive_classes,
                                self.negative3d_classes, self.negativesketch_classes):
            if a != p:
                raise ConfigError(f"positive class {p!r} differs from anchor class {a!r}")
            if a == n3 or a == ns:
                raise ConfigError(f"negative shares class {a!r} with its anchor")

    @property
    def size(self) -> int:
        return self.anchors.rows


def _onehot(labels: list[str], index_of, num_classes: int) -> np.ndarray:
    y = np.zeros((len(labels), num_classes))
    for i, lab in enumerate(labels):
        y[i, index_of(lab)] = 1.0
    return y


def _picked_log_probs(probs: Tensor, onehot: np.ndarray) -> Tensor:
    picked = ad.matmul(ad.mul(probs, ad.constant(onehot)), ad.constant(np.ones((onehot.shape[1], 1))))
    return ad.log(picked)


def semantic_loss_batch(projected: Tensor, labels: list[str], bank: PrototypeBank,
                        tau: float = TAU_DEFAULT) -> Tensor:
    """Mean cross-entropy of cos(l2(p), w_i)/tau against the true class."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if projected.rows != len(labels):
        raise ConfigError(f"{projected.rows} projections for {len(labels)} labels")
    unit = ad.row_l2_normalize(projected)
    cos = ad.matmul(unit, ad.constant(bank.vectors.T))
    probs = ad.softmax_rows(ad.scale(cos, 1.0 / tau))
    y = _onehot(labels, bank.index_of, bank.num_classes)
    return ad.neg(ad.mean_all(_picked_log_probs(probs, y)))


def semantic_loss(projected: Tensor, bank: PrototypeBank, label: str,
                  tau: float = TAU_DEFAULT) -> Tensor:
    """Single-item form of the semantic alignment loss."""
    if projected.rows != 1:
        raise ConfigError(f"expected a single 1xd projection, got {projected.shape}")
    return semantic_loss_batch(projected, [label], bank, tau)


def am_softmax_loss(features: Tensor, labels: list[str], cls: ClassifierWeights) -> Tensor:
    """Additive-margin cosine softmax: the true-class cosine pays a margin m
    before scaling by t; averaged over the batch."""
    if features.rows < 1:
        raise ConfigError("empty feature batch")
    if features.rows != len(labels):
        raise ConfigError(f"{features.rows} features for {len(labels)} labels")
    f_unit = ad.row_l2_normalize(features)
    w_unit = ad.row_l2_normalize(cls.w)
    cos = ad.matmul(f_unit, ad.transpose(w_unit))
    y = _onehot(labels, cls.index_of, len(cls.labels))
    logits = ad.sub(ad.scale(cos, cls.scale), ad.constant(cls.scale * cls.margin * y))
    probs = ad.softmax_rows(logits)
    return ad.neg(ad.mean_all(_picked_log_probs(probs, y)))


def _squared_row_distances(a: Tensor, b: Tensor) -> Tensor:
    diff = ad.sub(a, b)
    return ad.matmul(ad.mul(diff, diff), ad.constant(np.ones((a.cols, 1))))


def quadruplet_loss(batch: QuadrupletBatch, mu: float = QUAD_MARGIN_DEFAULT) -> Tensor:
    """Two hinges per row on squared distances between l2-normalized rows:
    the anchor must sit closer to its positive than to either negative by mu."""
    if mu < 0:
        raise ConfigError(f"margin must be nonnegative, got {mu}")
    a = ad.row_l2_normalize(batch.anchors)
    p = ad.row_l2_normalize(batch.positives)
    n3 = ad.row_l2_normalize(batch.negatives3d)
    ns = ad.row_l2_normalize(batch.negativesketch)
    d_ap = _squared_row_distances(a, p)
    h1 = ad.relu(ad.shift(ad.sub(d_ap, _squared_row_distances(a, n3)), mu))
    h2 = ad.relu(ad.shift(ad.sub(d_ap, _squared_row_distances(a, ns)), mu))
    return ad.mean_all(ad.add(h1, h2))


def _combine(parts: dict[str, Tensor],
             weights: dict[str, float] | None = None) -> tuple[Tensor, dict[str, float]]:
    if not parts:
        raise ConfigError("all loss terms disabled")
    weights = weights or {}
    scaled: dict[str, Tensor] = {}
    for k, t in parts.items():
        w = float(weights.get(k, 1.0))
        if w <= 0.0:
            raise ConfigError(f"loss weight for {k!r} must be positive")
        scaled[k] = t if w == 1.0 else ad.scale(t, w)
    terms = list(scaled.values())
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total, {k: v.item() for k, v in scaled.items()}


def stage1_objective(embeddings: Tensor, labels: list[str], cls: ClassifierWeights,
                     projection: Tensor, bank: PrototypeBank,
                     tau: float = TAU_DEFAULT,
                     weights: dict[str, float] | None = None,
                     ) -> tuple[Tensor, dict[str, float]]:
    """Shape-branch pretraining: AM-softmax classification plus semantic
    alignment of the projected embeddings."""
    parts = {
        "cls3d": am_softmax_loss(embeddings, labels, cls),
        "sem3d": semantic_loss_batch(ad.matmul(embeddings, projection), labels, bank, tau),
    }
    return _combine(parts, weights)


def stage2_objective(quad: QuadrupletBatch, sketch_feats: Tensor, sketch_labels: list[str],
                     cls_frozen: ClassifierWeights, projection: Tensor, bank: PrototypeBank,
                     tau: float = TAU_DEFAULT, mu: float = QUAD_MARGIN_DEFAULT, *,
                     use_quad: bool = True, use_cls: bool = True,
                     use_sem: bool = True,
                     weights: dict[str, float] | None = None,
                     ) -> tuple[Tensor, dict[str, float]]:
    """Sketch-branch alignment against a frozen shape branch."""
    parts: dict[str, Tensor] = {}
    if use_quad:
        parts["quad"] = quadruplet_loss(quad, mu)
    if use_cls:
        parts["clsske"] = am_softmax_loss(sketch_feats, sketch_labels, cls_frozen)
    if use_sem:
        parts["semske"] = semantic_loss_batch(
            ad.matmul(sketch_feats, projection), sketch_labels, bank, tau)
    return _combine(parts, weights)


def zeroshot_objective(quad: QuadrupletBatch,
                       feats_3d: Tensor, labels_3d: list[str], projection_3d: Tensor,
                       feats_ske: Tensor, labels_ske: list[str], projection_ske: Tensor,
                       bank: PrototypeBank, tau: float = TAU_DEFAULT,
                       mu: float = QUAD_MARGIN_DEFAULT, *,
                       use_quad: bool = True, use_sem_3d: bool = True,
                       use_sem_ske: bool = True,
                       weights: dict[str, float] | None = None,
                       ) -> tuple[Tensor, dict[str, float]]:
    """Joint objective with no classification term: quadruplet plus semantic
    alignment on both modalities."""
    parts: dict[str, Tensor] = {}
    if use_quad:
        parts["quad"] = quadruplet_loss(quad, mu)
    if use_sem_3d:
        parts["sem3d"] = semantic_loss_batch(
            ad.matmul(feats_3d, projection_3d), labels_3d, bank, tau)
    if use_sem_ske:
        parts["semske"] = semantic_loss_batch(
            ad.matmul(feats_ske, projection_ske), labels_ske, bank, tau)
    return _combine(parts, weights)
