"""Hierarchical view-graph shape encoder and the sketch adapter.

One level = neighborhood graph convolution, then dense attention across all
nodes, then (except at the last level) a soft selector that coarsens V nodes
into K prototype nodes. Each level contributes a max-pooled vector; the
concatenation goes through a small MLP head to give the shape embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .viewgraph import CameraRig, ViewGraph, coarsen_positions, knn_edges, trivial_graph


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int = 512
    embed_dim: int = 512
    schedule: tuple[int, ...] = (12, 6, 3)
    knn: int = 4
    slope: float = 0.2
    pooling: str = "max"  # "max" | "mean" (ablation switch)

    def __post_init__(self):
        if self.feature_dim % 2 != 0:
            raise ConfigError("feature_dim must be even (d/2 projections)")
        sched = tuple(int(n) for n in self.schedule)
        if not sched or any(n < 1 for n in sched):
            raise ConfigError(f"bad level schedule {sched}")
        if any(a <= b for a, b in zip(sched, sched[1:])):
            raise ConfigError(f"level schedule must be strictly decreasing, got {sched}")
        if self.pooling not in ("max", "mean"):
            raise ConfigError(f"pooling must be 'max' or 'mean', got {self.pooling!r}")
        object.__setattr__(self, "schedule", sched)

    @property
    def levels(self) -> int:
        return len(self.schedule)


@dataclass
class ViewSet:
    """Per-shape input: V view features plus the camera rig they came from."""

    features: np.ndarray  # (V, d)
    rig: CameraRig

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2:
            raise DimensionError(f"view features must be VxD, got {f.shape}")
        if f.shape[0] != self.rig.count:
            raise DimensionError(
                f"{f.shape[0]} feature rows for {self.rig.count} cameras"
            )
        self.features = f


@dataclass
class ShapeEmbedding:
    vector: Tensor                    # 1 x embed_dim
    level_pools: list[Tensor]         # one 1xd vector per level


@dataclass
class EncodeTrace:
    """Diagnostics collected during one encode pass."""

    node_counts: list[int] = field(default_factory=list)
    attention_rows: list[np.ndarray] = field(default_factory=list)  # every row-stochastic matrix
    # distance to the nearest nondifferentiable point (kink or pooling tie)
    # observed at each piecewise op, for excluding bad finite-difference draws
    kink_margins: list[float] = field(default_factory=list)


def _init(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    return ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)))


class EncoderParams:
    """All trainable tensors of the shape encoder, keyed by dotted names."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(101,)))
        d = config.feature_dim
        half = d // 2
        t: dict[str, Tensor] = {}
        for li in range(config.levels):
            p = f"level{li}"
            t[f"{p}.gcn.weight"] = _init(rng, d, d)
            t[f"{p}.norm.gamma"] = ad.parameter(np.ones((1, d)))
            t[f"{p}.norm.beta"] = ad.parameter(np.zeros((1, d)))
            t[f"{p}.attn.wq"] = _init(rng, d, half)
            t[f"{p}.attn.wk"] = _init(rng, d, half)
            t[f"{p}.attn.wv"] = _init(rng, d, d)
            if li < config.levels - 1:
                k_next = config.schedule[li + 1]
                t[f"{p}.select.w1"] = _init(rng, d, half)
                t[f"{p}.select.b1"] = ad.parameter(np.zeros((1, half)))
                t[f"{p}.select.w2"] = _init(rng, half, k_next)
                t[f"{p}.select.b2"] = ad.parameter(np.zeros((1, k_next)))
        t["head.w1"] = _init(rng, config.levels * d, d)
        t["head.b1"] = ad.parameter(np.zeros((1, d)))
        t["head.w2"] = _init(rng, d, config.embed_dim)
        t["head.b2"] = ad.parameter(np.zeros((1, config.embed_dim)))
        self.tensors = t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)


def local_attention_weights(features: Tensor, graph: ViewGraph) -> Tensor:
    """Row-stochastic NxN attention with support on each node's neighbors
    plus its self-loop; similarities are dot products scaled by 1/sqrt(d)."""
    features = ad.tensor(features) if not isinstance(features, Tensor) else features
    if features.rows != graph.node_count:
        raise DimensionError(
            f"{features.rows} feature rows for {graph.node_count} graph nodes"
        )
    sim = ad.scale(ad.matmul(features, ad.transpose(features)), 1.0 / np.sqrt(features.cols))
    return ad.masked_softmax_rows(sim, graph.support_mask())


def local_gcn(
    features: Tensor,
    graph: ViewGraph,
    weight: Tensor,
    gamma: Tensor,
    beta: Tensor,
    slope: float = 0.2,
    psi: bool = True,
    trace: EncodeTrace | None = None,
) -> Tensor:
    """Neighborhood aggregation A @ F @ W followed by normalization and
    LeakyReLU. ``psi=False`` skips the nonlinearity (test hook)."""
    attn = local_attention_weights(features, graph)
    if trace is not None:
        trace.attention_rows.append(attn.data.copy())
    out = ad.matmul(ad.matmul(attn, features), weight)
    if psi:
        pre = ad.feature_norm(out, gamma, beta)
        if trace is not None:
            trace.kink_margins.append(float(np.min(np.abs(pre.data))))
        out = ad.leaky_relu(pre, slope)
    return out


def global_attention(
    features: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    trace: EncodeTrace | None = None,
) -> Tensor:
    """Dense scaled dot-product attention over all nodes with a residual."""
    q = ad.matmul(features, wq)
    k = ad.matmul(features, wk)
    v = ad.matmul(features, wv)
    logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(q.cols))
    attn = ad.softmax_rows(logits)
    if trace is not None:
        trace.attention_rows.append(attn.data.copy())
    return ad.add(features, ad.matmul(attn, v))


def view_selector(
    features: Tensor,
    rig: CameraRig,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    slope: float = 0.2,
    trace: EncodeTrace | None = None,
) -> tuple[Tensor, CameraRig, Tensor]:
    """Soft-assign V nodes to K prototypes.

    A per-view MLP emits K logits; softmax runs along the view dimension, so
    each of the K assignment rows is a convex combination of views. Features
    aggregate on the tape; camera positions aggregate outside it (the graph
    topology is not differentiable anyway).
    """
    k_out = w2.cols
    if k_out >= features.rows:
        raise ConfigError(f"selector needs K < V, got K={k_out}, V={features.rows}")
    pre = ad.add(ad.matmul(features, w1), b1)
    if trace is not None:
        trace.kink_margins.append(float(np.min(np.abs(pre.data))))
    hidden = ad.leaky_relu(pre, slope)
    logits = ad.add(ad.matmul(hidden, w2), b2)          # V x K
    assign = ad.softmax_rows(ad.transpose(logits))      # K x V, rows sum to 1
    if trace is not None:
        trace.attention_rows.append(assign.data.copy())
    prototypes = ad.matmul(assign, features)
    new_rig = coarsen_positions(assign.data, rig)
    return prototypes, new_rig, assign


def _level_graph(rig: CameraRig, k0: int, level: int) -> ViewGraph:
    if rig.count == 1:
        return trivial_graph(rig, level)
    return knn_edges(rig, min(k0, rig.count - 1), level)


def encode_shape(
    params: EncoderParams,
    features,
    rig: CameraRig,
    trace: EncodeTrace | None = None,
) -> ShapeEmbedding:
    """Run the full hierarchy and return the shape embedding.

    ``features`` may be a Tensor (to differentiate w.r.t. the input) or a
    plain array. The node counts visited equal the configured schedule.
    """
    cfg = params.config
    f = features if isinstance(features, Tensor) else ad.tensor(features)
    if f.rows != cfg.schedule[0]:
        raise ConfigError(
            f"{f.rows} views but schedule starts at {cfg.schedule[0]}"
        )
    if f.cols != cfg.feature_dim:
        raise ConfigError(f"feature width {f.cols} != configured {cfg.feature_dim}")
    if rig.count != f.rows:
        raise DimensionError(f"{rig.count} cameras for {f.rows} views")
    pool = ad.max_over_rows if cfg.pooling == "max" else ad.mean_over_rows
    pooled: list[Tensor] = []
    cur_rig = rig
    for li in range(cfg.levels):
        if trace is not None:
            trace.node_counts.append(f.rows)
        graph = _level_graph(cur_rig, cfg.knn, li)
        p = f"level{li}"
        f = local_gcn(
            f, graph, params[f"{p}.gcn.weight"], params[f"{p}.norm.gamma"],
            params[f"{p}.norm.beta"], cfg.slope, trace=trace,
        )
        f = global_attention(
            f, params[f"{p}.attn.wq"], params[f"{p}.attn.wk"], params[f"{p}.attn.wv"],
            trace=trace,
        )
        if trace is not None and cfg.pooling == "max" and f.rows >= 2:
            top2 = np.sort(f.data, axis=0)[-2:]
            trace.kink_margins.append(float(np.min(top2[1] - top2[0])))
        pooled.append(pool(f))
        if li < cfg.levels - 1:
            f, cur_rig, _ = view_selector(
                f, cur_rig, params[f"{p}.select.w1"], params[f"{p}.select.b1"],
                params[f"{p}.select.w2"], params[f"{p}.select.b2"], cfg.slope,
                trace=trace,
            )
    pre = ad.add(ad.matmul(ad.concat_cols(pooled), params["head.w1"]), params["head.b1"])
    if trace is not None:
        trace.kink_margins.append(float(np.min(np.abs(pre.data))))
    h = ad.leaky_relu(pre, cfg.slope)
    vector = ad.add(ad.matmul(h, params["head.w2"]), params["head.b2"])
    return ShapeEmbedding(vector=vector, level_pools=pooled)


class AdapterParams:
    """Two-layer MLP mapping frozen sketch embeddings into the shape space."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, seed: int = 0, slope: float = 0.2):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.slope = slope
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(202,)))
        self.tensors = {
            "adapter.w1": _init(rng, in_dim, hidden_dim),
            "adapter.b1": ad.parameter(np.zeros((1, hidden_dim))),
            "adapter.w2": _init(rng, hidden_dim, out_dim),
            "adapter.b2": ad.parameter(np.zeros((1, out_dim))),
        }

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)


def sketch_adapter(embedding, params: AdapterParams) -> Tensor:
    """Adapt one or more imported sketch embeddings (rows) to the shared space."""
    x = embedding if isinstance(embedding, Tensor) else ad.tensor(embedding)
    if x.cols != params.in_dim:
        raise ConfigError(f"sketch width {x.cols} != adapter input {params.in_dim}")
    h = ad.leaky_relu(ad.add(ad.matmul(x, params["adapter.w1"]), params["adapter.b1"]), params.slope)
    return ad.add(ad.matmul(h, params["adapter.w2"]), params["adapter.b2"])
