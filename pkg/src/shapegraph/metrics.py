"""Retrieval ranking and the seven-number evaluation table.

Queries and gallery items are embedding rows; ranking is by descending
cosine similarity with ties broken by ascending gallery index. All metrics
are reported as percentages in the order NN FT ST nDCG E MRR mAP. The E
score is an error measure (lower is better) computed at a cut of
min(32, gallery size). Per-query aggregation deliberately uses plain
sequential float arithmetic so results are reproducible bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, NumericError

METRIC_ORDER = ("NN", "FT", "ST", "nDCG", "E", "MRR", "mAP")
E_CUT = 32


@dataclass(frozen=True)
class RetrievalRun:
    """One evaluation instance: query rows against gallery rows."""

    queries: np.ndarray  # (Q, d)
    query_labels: list[str]
    gallery: np.ndarray  # (G, d)
    gallery_labels: list[str]

    def __post_init__(self):
        q = np.asarray(self.queries, dtype=np.float64)
        g = np.asarray(self.gallery, dtype=np.float64)
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "gallery", g)
        if q.ndim != 2 or g.ndim != 2:
            raise DimensionError("queries and gallery must be 2-D")
        if q.shape[1] != g.shape[1]:
            raise DimensionError(f"width mismatch: {q.shape[1]} vs {g.shape[1]}")
        if len(self.query_labels) != q.shape[0]:
            raise DimensionError("one label per query row required")
        if len(self.gallery_labels) != g.shape[0]:
            raise DimensionError("one label per gallery row required")
        if q.shape[0] == 0 or g.shape[0] == 0:
            raise DimensionError("queries and gallery must be non-empty")
        gset = set(self.gallery_labels)
        orphans = [c for c in set(self.query_labels) if c not in gset]
        if orphans:
            raise DimensionError(f"query classes absent from gallery: {sorted(orphans)[:5]}")


def _unit(rows: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise NumericError(f"zero-norm {what} row cannot be ranked by cosine")
    return rows / norms


def cosine_similarities(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """(Q, G) cosine similarity matrix of row embeddings."""
    return _unit(np.asarray(queries, dtype=np.float64), "query") \
        @ _unit(np.asarray(gallery, dtype=np.float64), "gallery").T


def rank_gallery(run: RetrievalRun) -> np.ndarray:
    """(Q, G) int matrix of gallery indices, best match first; ties resolve
    to the lower gallery index."""
    sims = cosine_similarities(run.queries, run.gallery)
    return np.argsort(-sims, axis=1, kind="stable")


def _query_metrics(rel: list[bool]) -> dict[str, float]:
    """Metrics for one query given relevance flags down the ranked list."""
    g = len(rel)
    r = sum(rel)
    nn = 1.0 if rel[0] else 0.0

    hits_r = sum(rel[:r])
    ft = hits_r / r
    hits_2r = sum(rel[:min(2 * r, g)])
    st = hits_2r / r

    dcg = 0.0
    for i, flag in enumerate(rel):
        if flag:
            dcg += 1.0 / math.log2(i + 2)
    idcg = 0.0
    for i in range(r):
        idcg += 1.0 / math.log2(i + 2)
    ndcg = dcg / idcg

    cut = min(E_CUT, g)
    hits_cut = sum(rel[:cut])
    p = hits_cut / cut
    rr_ = hits_cut / r
    e = 1.0 if hits_cut == 0 else 1.0 - 2.0 / (1.0 / p + 1.0 / rr_)

    mrr = 0.0
    for i, flag in enumerate(rel):
        if flag:
            mrr = 1.0 / (i + 1)
            break

    ap = 0.0
    seen = 0
    for i, flag in enumerate(rel):
        if flag:
            seen += 1
            ap += seen / (i + 1)
    ap = ap / r

    return {"NN": nn, "FT": ft, "ST": st, "nDCG": ndcg, "E": e, "MRR": mrr, "mAP": ap}


def compute_metrics(run: RetrievalRun) -> dict[str, float]:
    """Mean over queries of the per-query scores, scaled to percent."""
    ranking = rank_gallery(run)
    totals = {name: 0.0 for name in METRIC_ORDER}
    for qi in range(ranking.shape[0]):
        label = run.query_labels[qi]
        rel = [run.gallery_labels[gi] == label for gi in ranking[qi]]
        per = _query_metrics(rel)
        for name in METRIC_ORDER:
            totals[name] += per[name]
    q = ranking.shape[0]
    return {name: totals[name] / q * 100.0 for name in METRIC_ORDER}


def distance_histograms(run: RetrievalRun, bins: int = 40) -> dict:
    """Cosine-distance histograms over gallery pairs, split into same-class
    and cross-class populations. Distance = 1 - cosine, binned on [0, 2]."""
    if bins < 1:
        raise DimensionError("need at least one bin")
    g = _unit(run.gallery, "gallery")
    sims = np.clip(g @ g.T, -1.0, 1.0)
    dist = 1.0 - sims
    labels = np.asarray(run.gallery_labels)
    same = labels[:, None] == labels[None, :]
    iu = np.triu_indices(len(labels), k=1)
    intra = dist[iu][same[iu]]
    inter = dist[iu][~same[iu]]
    edges = np.linspace(0.0, 2.0, bins + 1)
    return {
        "edges": edges,
        "intra": np.histogram(intra, bins=edges)[0],
        "inter": np.histogram(inter, bins=edges)[0],
        "intra_mean": float(intra.mean()) if intra.size else 0.0,
        "inter_mean": float(inter.mean()) if inter.size else 0.0,
    }


def margin_statistic(run: RetrievalRun) -> float:
    """Mean cross-class distance minus mean same-class distance over the
    gallery; larger means classes sit further apart than their members."""
    h = distance_histograms(run)
    return h["inter_mean"] - h["intra_mean"]


def render_metric_table(metrics: dict[str, float], title: str = "retrieval") -> str:
    header = "  ".join(f"{name:>6}" for name in METRIC_ORDER)
    row = "  ".join(f"{metrics[name]:6.2f}" for name in METRIC_ORDER)
    return f"{title}\n{header}\n{row}"


def metrics_to_json(metrics: dict[str, float]) -> str:
    return json.dumps({name: metrics[name] for name in METRIC_ORDER}, indent=2)


def write_histogram_csv(path: str | Path, hist: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start", "bin_end", "same_class", "cross_class"])
        edges = hist["edges"]
        for i in range(len(edges) - 1):
            writer.writerow([f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}",
                             int(hist["intra"][i]), int(hist["inter"][i])])
