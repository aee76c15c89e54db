"""Camera-rig geometry and kNN view-graph construction.

Cameras live on the unit sphere. The default rig is a single ring at 30
degrees elevation with evenly spaced azimuths, which is the usual convention
for 12-view rendering setups. Neighborhoods use chordal (straight-line)
Euclidean distance in R^3.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError

RING_ELEVATION_DEG = 30.0


@dataclass(frozen=True)
class CameraRig:
    """N unit vectors giving camera directions."""

    positions: np.ndarray  # (N, 3), rows unit-norm

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ConfigError(f"rig positions must be Nx3, got {pos.shape}")
        norms = np.linalg.norm(pos, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ConfigError("rig positions must be unit vectors")
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class ViewGraph:
    """Directed kNN graph over one hierarchy level's cameras.

    ``neighbors[i]`` lists the k nearest other nodes, sorted by ascending
    distance with ties broken by ascending index.
    """

    level: int
    neighbors: tuple[tuple[int, ...], ...]
    rig: CameraRig

    @property
    def node_count(self) -> int:
        return self.rig.count

    def support_mask(self) -> np.ndarray:
        """Boolean NxN mask of neighbors(i) plus the self-loop."""
        n = self.node_count
        mask = np.zeros((n, n), dtype=bool)
        for i, nbrs in enumerate(self.neighbors):
            mask[i, i] = True
            mask[i, list(nbrs)] = True
        return mask


def build_camera_rig(v_count: int) -> CameraRig:
    """Place ``v_count`` cameras on a 30-degree-elevation ring, azimuths
    2*pi*i/v_count starting at azimuth 0."""
    if v_count < 1:
        raise ConfigError(f"v_count must be >= 1, got {v_count}")
    elev = np.deg2rad(RING_ELEVATION_DEG)
    az = 2.0 * np.pi * np.arange(v_count) / v_count
    pos = np.stack(
        [np.cos(elev) * np.cos(az), np.cos(elev) * np.sin(az), np.full(v_count, np.sin(elev))],
        axis=1,
    )
    pos /= np.linalg.norm(pos, axis=1, keepdims=True)
    return CameraRig(pos)


def load_rig(path: str | Path) -> CameraRig:
    """Read one ``x y z`` triple per line; positions are normalized on load."""
    rows = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(f"{path}:{ln}: expected 3 numbers, got {len(parts)}")
        rows.append([float(x) for x in parts])
    if not rows:
        raise ConfigError(f"{path}: no camera positions")
    pos = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(pos, axis=1, keepdims=True)
    if np.any(norms < 1e-9):
        raise ConfigError(f"{path}: zero-length camera position")
    return CameraRig(pos / norms)


def knn_edges(rig: CameraRig, k: int, level: int = 0) -> ViewGraph:
    """Directed k-nearest-neighbor lists under chordal distance.

    Requires 1 <= k <= N-1. Neighbor order is (distance, index) ascending,
    which makes the construction deterministic and permutation-consistent
    up to exact distance ties.
    """
    n = rig.count
    if not 1 <= k <= n - 1:
        raise ConfigError(f"k={k} out of range for {n} cameras")
    pos = rig.positions
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    neighbors = []
    for i in range(n):
        order = sorted((j for j in range(n) if j != i), key=lambda j: (dist[i, j], j))
        neighbors.append(tuple(order[:k]))
    return ViewGraph(level=level, neighbors=tuple(neighbors), rig=rig)


def trivial_graph(rig: CameraRig, level: int = 0) -> ViewGraph:
    """Graph with self-loops only; used when a level has a single node."""
    return ViewGraph(level=level, neighbors=tuple(() for _ in range(rig.count)), rig=rig)


def coarsen_positions(assign: np.ndarray, rig: CameraRig) -> CameraRig:
    """Aggregate camera positions through a row-stochastic assignment and
    renormalize the results back onto the unit sphere.

    Renormalization is needed because convex combinations of unit vectors
    fall inside the sphere, and chordal kNN is scale-sensitive.
    """
    assign = np.asarray(assign, dtype=np.float64)
    if assign.ndim != 2 or assign.shape[1] != rig.count:
        raise ConfigError(f"assignment must be Kx{rig.count}, got {assign.shape}")
    row_sums = assign.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-9):
        raise ConfigError("assignment rows must sum to 1")
    pooled = assign @ rig.positions
    norms = np.linalg.norm(pooled, axis=1, keepdims=True)
    if np.any(norms < 1e-9):
        raise NumericError("coarsened camera position collapsed to the origin")
    return CameraRig(pooled / norms)
