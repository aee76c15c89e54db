"""Procedural shape corpus: primitive surfaces, view descriptors, sketches.

Each shape is a cloud of surface points normalized into the unit ball. A view
descriptor concatenates a 36-bin radial silhouette histogram (projected-point
mass per radius bin) with a 16-bin depth histogram. Descriptors pass through
a fixed linear whitening transform and a seeded random linear map to the
requested feature width; sketches run the same path from a single corrupted
view through a second map.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .viewgraph import CameraRig

PRIMITIVES = ("sphere", "box", "cylinder", "cone", "torus", "pyramid",
              "ellipsoid", "prism")
POINTS_PER_SHAPE = 1024
SILHOUETTE_BINS = 36
DEPTH_BINS = 16
DESCRIPTOR_DIM = SILHOUETTE_BINS + DEPTH_BINS

# Whitening constants. Each histogram block turns into a cumulative profile
# with its mean-and-ramp component scaled down, plus a smoothed copy of the
# centered histogram itself. The cumulative part gives every view of a round
# shape a stable low-noise signature; scaling down the ramp (shared by all
# cumulative profiles) and mixing the histogram back in keeps distinct
# classes from correlating through that shared component.
_TREND_KEEP = 0.5
_PDF_MIX = 1.0
_SIL_SMOOTH = 5
_DEPTH_SMOOTH = 3


def _rng(seed: int, *tags) -> np.random.Generator:
    key = tuple(zlib.crc32(str(t).encode()) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class SyntheticShape:
    item_id: str
    label: str
    points: np.ndarray  # (P, 3), inside the unit ball


def _unit_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _sample_triangles(rng, verts: np.ndarray, faces: np.ndarray, n: int) -> np.ndarray:
    tri = verts[faces]  # (F, 3, 3)
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    area = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    pick = rng.choice(len(faces), size=n, p=area / area.sum())
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return tri[pick, 0] + u[:, None] * e1[pick] + v[:, None] * e2[pick]


def _surface_sphere(rng, n):
    return _unit_rows(rng.normal(size=(n, 3)))


def _surface_box(rng, n):
    # half-extents 1; pick a face uniformly (equal areas), uniform within it
    axis = rng.integers(0, 3, size=n)
    sign = rng.choice([-1.0, 1.0], size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    for i in range(n):
        rest = [a for a in range(3) if a != axis[i]]
        pts[i, axis[i]] = sign[i]
        pts[i, rest[0]] = uv[i, 0]
        pts[i, rest[1]] = uv[i, 1]
    return pts


def _surface_cylinder(rng, n, radius=0.8, half_h=0.8):
    lateral = 2.0 * np.pi * radius * 2.0 * half_h
    caps = 2.0 * np.pi * radius ** 2
    on_side = rng.random(n) < lateral / (lateral + caps)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    z = rng.uniform(-half_h, half_h, size=n)
    r_cap = radius * np.sqrt(rng.random(n))
    cap_sign = rng.choice([-1.0, 1.0], size=n)
    pts[:, 0] = np.where(on_side, radius * np.cos(theta), r_cap * np.cos(theta))
    pts[:, 1] = np.where(on_side, radius * np.sin(theta), r_cap * np.sin(theta))
    pts[:, 2] = np.where(on_side, z, cap_sign * half_h)
    # slightly elliptical cross-section: gives the silhouette a stable
    # two-lobed azimuthal profile that a purely circular body lacks
    pts[:, 0] *= 1.06
    pts[:, 1] *= 0.94
    return pts


def _surface_cone(rng, n, radius=0.7, height=1.9):
    apex_z = height / 2.0
    base_z = -height / 2.0
    slant = np.hypot(radius, height)
    lateral = np.pi * radius * slant
    base = np.pi * radius ** 2
    on_side = rng.random(n) < lateral / (lateral + base)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    # uniform over the lateral surface: radial coordinate ~ sqrt
    t = np.sqrt(rng.random(n))
    r_side = radius * t
    z_side = apex_z - height * t
    r_base = radius * np.sqrt(rng.random(n))
    pts = np.empty((n, 3))
    pts[:, 0] = np.where(on_side, r_side, r_base) * np.cos(theta)
    pts[:, 1] = np.where(on_side, r_side, r_base) * np.sin(theta)
    pts[:, 2] = np.where(on_side, z_side, base_z)
    return pts


def _surface_torus(rng, n, big=0.7, small=0.3):
    out = np.empty((0, 3))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        u = rng.uniform(0.0, 2.0 * np.pi, size=m)
        v = rng.uniform(0.0, 2.0 * np.pi, size=m)
        keep = rng.random(m) < (big + small * np.cos(v)) / (big + small)
        u, v = u[keep], v[keep]
        ring = big + small * np.cos(v)
        batch = np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], axis=1)
        out = np.concatenate([out, batch])
    return out[:n]


def _surface_pyramid(rng, n, half_base=0.95, height=1.0):
    apex = np.array([0.0, 0.0, height / 2.0])
    z0 = -height / 2.0
    base = np.array([
        [-half_base, -half_base, z0],
        [half_base, -half_base, z0],
        [half_base, half_base, z0],
        [-half_base, half_base, z0],
    ])
    verts = np.vstack([base, apex])
    faces = np.array([
        [0, 1, 2], [0, 2, 3],          # base
        [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4],
    ])
    return _sample_triangles(rng, verts, faces, n)


def _surface_ellipsoid(rng, n, radii=(1.0, 0.55, 0.32)):
    return _surface_sphere(rng, n) * np.asarray(radii)


def _surface_prism(rng, n, side=1.3, half_h=0.85):
    r = side / np.sqrt(3.0)
    ang = np.array([np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3])
    tri = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    top = np.hstack([tri, np.full((3, 1), half_h)])
    bot = np.hstack([tri, np.full((3, 1), -half_h)])
    verts = np.vstack([top, bot])
    faces = np.array([
        [0, 1, 2], [3, 4, 5],
        [0, 1, 4], [0, 4, 3],
        [1, 2, 5], [1, 5, 4],
        [2, 0, 3], [2, 3, 5],
    ])
    return _sample_triangles(rng, verts, faces, n)


_SURFACES = {
    "sphere": _surface_sphere,
    "box": _surface_box,
    "cylinder": _surface_cylinder,
    "cone": _surface_cone,
    "torus": _surface_torus,
    "pyramid": _surface_pyramid,
    "ellipsoid": _surface_ellipsoid,
    "prism": _surface_prism,
}


def _rotation(rng, kind: str) -> np.ndarray:
    """Small spin and tilt around a canonical pose; spheres skip both.

    Instances stay near a shared orientation, mirroring the aligned-mesh
    convention of the retrieval benchmarks this generator imitates. A full
    random spin would leave nothing viewpoint-stable for classes that are
    rotationally symmetric about the vertical axis.
    """
    if kind == "sphere":
        return np.eye(3)
    a = rng.uniform(-np.pi / 18.0, np.pi / 18.0)
    rz = np.array([[np.cos(a), -np.sin(a), 0.0],
                   [np.sin(a), np.cos(a), 0.0],
                   [0.0, 0.0, 1.0]])
    b = (np.pi / 18.0) * rng.uniform(0.5, 1.5)
    rx = np.array([[1.0, 0.0, 0.0],
                   [0.0, np.cos(b), -np.sin(b)],
                   [0.0, np.sin(b), np.cos(b)]])
    return rz @ rx


def make_shape(kind: str, item_id: str, seed: int, points: int = POINTS_PER_SHAPE) -> SyntheticShape:
    """Deterministic instance of a primitive: sample surface, deform, fit
    into the unit ball."""
    if kind not in _SURFACES:
        raise ConfigError(f"unknown primitive {kind!r}; choose from {PRIMITIVES}")
    if points < 8:
        raise ConfigError("need at least 8 surface points")
    rng = _rng(seed, "shape", kind, item_id)
    pts = _SURFACES[kind](rng, points)
    if kind == "sphere":
        # fixed triaxial squash plus a jitter narrow enough to keep the
        # axis ordering: spheres get a phase-stable silhouette signature
        # while staying within the near-isotropy the view features assume
        pts = pts * (np.array([1.035, 0.965, 1.0]) * rng.uniform(0.99, 1.01, size=3))
    else:
        # mild anisotropic scale jitter; wide enough to vary instances,
        # narrow enough that no class drifts into a neighbor's silhouette
        pts = pts * rng.uniform(0.93, 1.07, size=3)
    pts = pts @ _rotation(rng, kind).T
    pts = pts + rng.normal(scale=0.008, size=pts.shape)
    pts = pts - pts.mean(axis=0)
    radius = np.linalg.norm(pts, axis=1).max()
    return SyntheticShape(item_id=item_id, label=kind, points=pts / radius)


def _view_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0]) if abs(direction[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, direction)
    u = u / np.linalg.norm(u)
    return u, np.cross(direction, u)


def view_descriptor(points: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Radial silhouette histogram + depth histogram seen along ``direction``.

    Both blocks are point-mass fractions: 36 bins over projected radius in
    [0, 1] and 16 bins over depth in [-1, 1].
    """
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    u, w = _view_basis(direction)
    radius = np.hypot(points @ u, points @ w)
    sil, _ = np.histogram(radius, bins=SILHOUETTE_BINS, range=(0.0, 1.0))
    depth = points @ direction
    hist, _ = np.histogram(depth, bins=DEPTH_BINS, range=(-1.0, 1.0))
    n = len(points)
    return np.concatenate([sil / n, hist / n])


def _whiten_block(block: np.ndarray, keep: float, mix: float, win: int) -> np.ndarray:
    """Cumulative profile with damped mean/ramp, plus smoothed histogram."""
    n = block.shape[-1]
    ramp = np.arange(n) - (n - 1) / 2.0
    ramp = ramp / np.sqrt((ramp * ramp).sum())
    flat = np.full(n, 1.0 / np.sqrt(n))
    cum = np.cumsum(block, axis=-1)
    trend = (cum @ flat)[..., None] * flat + (cum @ ramp)[..., None] * ramp
    centered = block - block.mean(axis=-1, keepdims=True)
    kernel = np.ones(win) / win
    smooth = np.apply_along_axis(
        lambda r: np.convolve(r, kernel, mode="same"), -1, np.atleast_2d(centered))
    smooth = smooth if block.ndim == 2 else smooth[0]
    return (cum - trend) + keep * trend + mix * smooth


def _whiten(desc: np.ndarray) -> np.ndarray:
    """Linear block transform applied before projection (see module note)."""
    desc = np.asarray(desc, dtype=np.float64)
    sil = _whiten_block(desc[..., :SILHOUETTE_BINS], _TREND_KEEP, _PDF_MIX, _SIL_SMOOTH)
    dep = _whiten_block(desc[..., SILHOUETTE_BINS:], _TREND_KEEP, _PDF_MIX, _DEPTH_SMOOTH)
    return np.concatenate([sil, dep], axis=-1)


def embedding_matrix(seed: int, tag: str, out_dim: int) -> np.ndarray:
    if out_dim < 1:
        raise ConfigError("embedding width must be positive")
    rng = _rng(seed, "embed", tag)
    return rng.normal(size=(DESCRIPTOR_DIM, out_dim)) / np.sqrt(DESCRIPTOR_DIM)


def synth_views(shape: SyntheticShape, rig: CameraRig, feature_dim: int,
                seed: int) -> np.ndarray:
    """Per-view feature matrix (V, feature_dim) for one shape."""
    desc = np.stack([view_descriptor(shape.points, p) for p in rig.positions])
    return _whiten(desc) @ embedding_matrix(seed, "view", feature_dim)


def synth_sketch(shape: SyntheticShape, rig: CameraRig, sketch_dim: int,
                 noise: float, seed: int, sketch_id: str) -> np.ndarray:
    """Single-view sketch feature (1, sketch_dim) with bin dropout and jitter."""
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f"noise must be in [0, 1], got {noise}")
    rng = _rng(seed, "sketch", sketch_id)
    view = int(rng.integers(0, len(rig.positions)))
    desc = view_descriptor(shape.points, rig.positions[view])
    drop = rng.random(DESCRIPTOR_DIM) < noise
    desc = np.where(drop, 0.0, desc)
    desc = desc + rng.normal(scale=noise * 0.1, size=DESCRIPTOR_DIM)
    return (_whiten(desc) @ embedding_matrix(seed, "sketch", sketch_dim)).reshape(1, -1)


def synth_prototypes(classes: list[str], proto_dim: int, seed: int) -> np.ndarray:
    """Orthonormal class anchor rows (C, proto_dim); requires C <= proto_dim."""
    c = len(classes)
    if c < 2:
        raise ConfigError("need at least two classes")
    if c > proto_dim:
        raise ConfigError(f"{c} classes need anchor width >= {c}, got {proto_dim}")
    rng = _rng(seed, "prototypes")
    raw = rng.normal(size=(c, proto_dim))
    q, r = np.linalg.qr(raw.T)
    basis = (q[:, :c] * np.sign(np.diag(r))).T
    return basis
