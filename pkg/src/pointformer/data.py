"""Point cloud containers, normalization, sampling, neighborhoods, augmentation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DataError, QueryError, SamplingError


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from arbitrary parts (ids, ints)."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class PointCloud:
    """N x 3 coordinates with an optional class label and a stable id."""

    points: np.ndarray
    label: Optional[int] = None
    id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"cloud '{self.id}': expected (N, 3) points, got {pts.shape}")
        if pts.shape[0] < 1:
            raise DataError(f"cloud '{self.id}': needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise DataError(f"cloud '{self.id}': non-finite coordinates")
        self.points = pts

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass
class LabeledDataset:
    samples: list[PointCloud]
    class_names: list[str]
    split: str = "train"

    def __post_init__(self):
        seen = set()
        for pc in self.samples:
            if pc.label is not None and not (0 <= pc.label < len(self.class_names)):
                raise DataError(
                    f"cloud '{pc.id}': label {pc.label} outside "
                    f"{len(self.class_names)} classes"
                )
            if pc.id in seen:
                raise DataError(f"duplicate sample id '{pc.id}' in split '{self.split}'")
            seen.add(pc.id)

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([pc.label for pc in self.samples], dtype=np.int64)


@dataclass
class SamplingSpec:
    """How to reduce clouds to a fixed size: 'farthest', 'uniform' or 'none'."""

    method: str = "farthest"
    target_count: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("farthest", "uniform", "none"):
            raise SamplingError(f"unknown sampling method '{self.method}'")
        if self.target_count < 1:
            raise SamplingError("target_count must be >= 1")


def normalize_unit_sphere(pc: PointCloud) -> PointCloud:
    """Center at the centroid and scale the farthest point to radius 1.

    Idempotent; a degenerate cloud (all points coincident) maps to the origin.
    """
    pts = pc.points.astype(np.float64)
    pts = pts - pts.mean(axis=0)
    radius = np.sqrt((pts * pts).sum(axis=1).max())
    if radius > 0:
        pts = pts / radius
    return replace(pc, points=pts.astype(np.float32))


def farthest_point_sample(pc: PointCloud, count: int, seed: int = 0) -> PointCloud:
    """Greedy max-min subset selection, starting from a seeded random point.

    Output rows are in selection order. Ties in the farthest-point choice
    break toward the lowest original index.
    """
    n = pc.n_points
    if count > n:
        raise SamplingError(f"cannot sample {count} points from a cloud of {n}")
    rng = np.random.default_rng(seed)
    pts = pc.points.astype(np.float64)
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = rng.integers(n)
    dist = ((pts - pts[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return replace(pc, points=pc.points[chosen])


def uniform_sample(pc: PointCloud, count: int, seed: int = 0) -> PointCloud:
    """Uniform random subset without replacement, in original order."""
    n = pc.n_points
    if count > n:
        raise SamplingError(f"cannot sample {count} points from a cloud of {n}")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=count, replace=False))
    return replace(pc, points=pc.points[keep])


def apply_sampling(pc: PointCloud, spec: SamplingSpec) -> PointCloud:
    if spec.method == "none" or pc.n_points == spec.target_count:
        return pc
    seed = stable_seed(spec.seed, pc.id)
    if spec.method == "farthest":
        return farthest_point_sample(pc, spec.target_count, seed)
    return uniform_sample(pc, spec.target_count, seed)


def knn_indices(points, k: int) -> np.ndarray:
    """Exact brute-force k-nearest-neighbor indices, self excluded.

    Returns an (N, k) matrix of neighbor indices in ascending distance
    order; exact distance ties break toward the lower original index.
    O(N^2) on purpose: exact, simple, and fast enough below a few thousand
    points. Swap in a spatial tree here if N grows.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points)
    n = pts.shape[0]
    if not (1 <= k <= n - 1):
        raise QueryError(f"k must be in [1, N-1] = [1, {n - 1}], got {k}")
    x = pts.astype(np.float64)
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def augment_array(
    points: np.ndarray,
    rng: np.random.Generator,
    scale_range: tuple[float, float] = (0.8, 1.25),
    translate_range: tuple[float, float] = (-0.1, 0.1),
) -> np.ndarray:
    """One uniform scale factor plus one translation vector for the whole cloud."""
    scale = rng.uniform(*scale_range)
    shift = rng.uniform(translate_range[0], translate_range[1], size=3)
    return points * np.float32(scale) + shift.astype(np.float32)


def augment(
    pc: PointCloud,
    rng,
    scale_range: tuple[float, float] = (0.8, 1.25),
    translate_range: tuple[float, float] = (-0.1, 0.1),
) -> PointCloud:
    """Training augmentation: one uniform scale factor and one translation
    vector per cloud, applied to the (already normalized) coordinates.

    ``rng`` may be a seed or a numpy Generator. Passing degenerate ranges
    ((1, 1), (0, 0)) yields the identity.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return replace(pc, points=augment_array(pc.points, rng, scale_range, translate_range))
