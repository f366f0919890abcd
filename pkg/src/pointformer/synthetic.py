"""Synthetic roof-shape generator for desk-scale experiments.

Three classes of parameterized roof surfaces over a rectangular footprint:

  - saddleback: full-length ridge, two rectangular sloped facets;
  - two-sided hip: shortened ridge, two trapezoid + two triangle facets;
  - pyramid: ridge collapsed to an apex, four triangular facets.

All three are expressed as z = h * min((b - |y|)/b, (a - |x|)/(a - r))
with ridge half-length r = a (saddleback), 0 < r < a (hip), r = 0 (pyramid),
so every facet is exactly planar. Aspect ratios and slopes are randomized
per sample to keep the classes from separating on raw coordinates alone;
Gaussian jitter is added on top, then each cloud is unit-sphere normalized.
"""

from __future__ import annotations

import numpy as np

from .data import LabeledDataset, PointCloud, normalize_unit_sphere
from .errors import DataError

CLASS_NAMES = ["saddleback", "two_sided_hip", "pyramid"]

# randomization windows for the footprint and slopes
ASPECT_RANGE = (0.5, 2.0)
SLOPE_RANGE = (0.3, 0.8)
HIP_RIDGE_RANGE = (0.3, 0.7)  # ridge half-length as a fraction of the footprint


def roof_height(xy: np.ndarray, half_x: float, half_y: float, ridge: float, h: float):
    """Height of the roof surface above footprint positions ``xy``.

    ``ridge`` is the ridge half-length along x; ``ridge == half_x`` gives a
    saddleback, ``0`` a pyramid.
    """
    ny = (half_y - np.abs(xy[:, 1])) / half_y
    if ridge >= half_x:
        return h * ny
    nx = (half_x - np.abs(xy[:, 0])) / (half_x - ridge)
    return h * np.minimum(nx, ny)


def roof_facet(xy: np.ndarray, half_x: float, half_y: float, ridge: float) -> np.ndarray:
    """Planar facet id for each footprint position.

    Saddleback: 0/1 by the sign of y. Hip and pyramid: 0/1 for the two
    trapezoids (y side), 2/3 for the two triangles (x side).
    """
    side_y = (xy[:, 1] >= 0).astype(np.int64)
    if ridge >= half_x:
        return side_y
    ny = (half_y - np.abs(xy[:, 1])) / half_y
    nx = (half_x - np.abs(xy[:, 0])) / (half_x - ridge)
    facet = np.where(ny <= nx, side_y, 2 + (xy[:, 0] >= 0).astype(np.int64))
    return facet


def sample_roof(
    kind: int, rng: np.random.Generator, n_points: int, noise_sigma: float
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Raw (un-normalized) roof sample: points, facet ids, and geometry dims."""
    aspect = rng.uniform(*ASPECT_RANGE)
    slope = rng.uniform(*SLOPE_RANGE)
    half_x = float(np.sqrt(aspect))
    half_y = float(1.0 / np.sqrt(aspect))
    h = slope * half_y
    if kind == 0:
        ridge = half_x
    elif kind == 1:
        ridge = float(rng.uniform(*HIP_RIDGE_RANGE)) * half_x
    elif kind == 2:
        ridge = 0.0
    else:
        raise DataError(f"unknown roof kind {kind}")
    xy = np.column_stack(
        [
            rng.uniform(-half_x, half_x, size=n_points),
            rng.uniform(-half_y, half_y, size=n_points),
        ]
    )
    z = roof_height(xy, half_x, half_y, ridge, h)
    facets = roof_facet(xy, half_x, half_y, ridge)
    pts = np.column_stack([xy, z])
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)
    dims = {"half_x": half_x, "half_y": half_y, "ridge": ridge, "h": h}
    return pts.astype(np.float32), facets, dims


def generate_synthetic_roofs(
    per_class: int,
    noise_sigma: float = 0.02,
    seed: int = 0,
    n_points: int = 1024,
    split: str = "train",
) -> LabeledDataset:
    """Balanced labeled dataset of normalized synthetic roof clouds."""
    if per_class < 1:
        raise DataError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for kind, name in enumerate(CLASS_NAMES):
        for i in range(per_class):
            pts, _, _ = sample_roof(kind, rng, n_points, noise_sigma)
            pc = PointCloud(pts, label=kind, id=f"{split}-{name}-{i:04d}")
            samples.append(normalize_unit_sphere(pc))
    return LabeledDataset(samples, list(CLASS_NAMES), split=split)
