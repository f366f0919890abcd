"""Seeded test-time corruptions for robustness evaluation.

Each corruption consumes an already-normalized cloud and does NOT
re-normalize the result (re-normalizing would partially undo translations
and scale changes and leak information back to the model). Every kind is a
pure function of (spec, seed, input).

The magnitudes below (noise sigma, translation range, sparse count,
occlusion keep fraction) are documented approximations: the corruption
families are standard, their exact published magnitudes are not, so all of
them are spec fields.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import LabeledDataset, PointCloud, stable_seed
from .errors import CorruptionError
from .io import write_cloud_binary

KINDS = (
    "noise",
    "noise_fraction",
    "translation",
    "missing_part",
    "region_missing",
    "sparse",
    "uniform_removal",
    "rotation",
    "occlusion",
    "partial_query",
)

# per-kind default fraction of points affected / removed
_DEFAULT_FRACTION = {
    "noise_fraction": 0.75,
    "missing_part": 0.5,
    "region_missing": 0.5,
    "uniform_removal": 0.875,
    "partial_query": 0.75,
}


@dataclass(frozen=True)
class CorruptionSpec:
    """One seeded, parameterized test transformation."""

    kind: str
    seed: int = 0
    sigma: float = 0.02  # noise kinds
    fraction: Optional[float] = None  # affected/removed fraction, kind default if None
    target_count: int = 128  # sparse
    translate_limit: float = 0.2  # translation
    keep_fraction: float = 0.5  # occlusion

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CorruptionError(f"unknown corruption kind '{self.kind}'")
        frac = self.effective_fraction
        if frac is not None and not (0.0 <= frac <= 1.0):
            raise CorruptionError(f"fraction must be in [0, 1], got {frac}")
        if self.target_count < 1:
            raise CorruptionError("target_count must be >= 1")
        if not (0.0 < self.keep_fraction <= 1.0):
            raise CorruptionError("keep_fraction must be in (0, 1]")
        if self.sigma < 0:
            raise CorruptionError("sigma must be >= 0")

    @property
    def effective_fraction(self) -> Optional[float]:
        if self.fraction is not None:
            return self.fraction
        return _DEFAULT_FRACTION.get(self.kind)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix uniform over SO(3) via a random unit quaternion."""
    u1, u2, u3 = rng.uniform(size=3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    x = a * np.sin(2 * np.pi * u2)
    y = a * np.cos(2 * np.pi * u2)
    z = b * np.sin(2 * np.pi * u3)
    w = b * np.cos(2 * np.pi * u3)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def _keep(pc: PointCloud, keep_idx: np.ndarray, kind: str) -> PointCloud:
    if keep_idx.size == 0:
        raise CorruptionError(f"{kind} on '{pc.id}' would leave zero points")
    return replace(pc, points=pc.points[np.sort(keep_idx)])


def apply_corruption(spec: CorruptionSpec, pc: PointCloud) -> PointCloud:
    """Apply one corruption; the output keeps the input's label and id."""
    rng = np.random.default_rng(spec.seed)
    pts = pc.points.astype(np.float64)
    n = pts.shape[0]
    kind = spec.kind
    frac = spec.effective_fraction

    if kind == "noise":
        out = pts + rng.normal(0.0, spec.sigma, size=pts.shape) if spec.sigma > 0 else pts
        return replace(pc, points=out.astype(np.float32))
    if kind == "noise_fraction":
        affected = rng.choice(n, size=int(round(frac * n)), replace=False)
        out = pts.copy()
        if spec.sigma > 0 and affected.size:
            out[affected] += rng.normal(0.0, spec.sigma, size=(affected.size, 3))
        return replace(pc, points=out.astype(np.float32))
    if kind == "translation":
        shift = rng.uniform(-spec.translate_limit, spec.translate_limit, size=3)
        return replace(pc, points=(pts + shift).astype(np.float32))
    if kind in ("missing_part", "region_missing", "partial_query"):
        remove = int(round(frac * n))
        center = pts[rng.integers(n)]
        d2 = ((pts - center) ** 2).sum(axis=1)
        # growing a ball around the center == dropping the nearest points
        order = np.argsort(d2, kind="stable")
        return _keep(pc, order[remove:], kind)
    if kind == "sparse":
        if spec.target_count > n:
            raise CorruptionError(
                f"sparse wants {spec.target_count} points, cloud '{pc.id}' has {n}"
            )
        keep_idx = rng.choice(n, size=spec.target_count, replace=False)
        return _keep(pc, keep_idx, kind)
    if kind == "uniform_removal":
        keep_count = n - int(round(frac * n))
        if keep_count < 1:
            raise CorruptionError(f"uniform_removal would leave zero points on '{pc.id}'")
        keep_idx = rng.choice(n, size=keep_count, replace=False)
        return _keep(pc, keep_idx, kind)
    if kind == "rotation":
        rot = _random_rotation(rng)
        return replace(pc, points=(pts @ rot.T).astype(np.float32))
    if kind == "occlusion":
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        depth = pts @ direction
        keep_count = max(1, int(round(spec.keep_fraction * n)))
        order = np.argsort(depth, kind="stable")
        return _keep(pc, order[:keep_count], kind)
    raise CorruptionError(f"unhandled corruption kind '{kind}'")


def corrupt_dataset(
    dataset: LabeledDataset, kind: str, seed: int, **spec_kwargs
) -> LabeledDataset:
    """Corrupt every sample, deriving per-sample seeds from (seed, sample id)."""
    samples = []
    for pc in dataset.samples:
        spec = CorruptionSpec(kind=kind, seed=stable_seed(seed, pc.id), **spec_kwargs)
        try:
            samples.append(apply_corruption(spec, pc))
        except CorruptionError as exc:
            raise CorruptionError(f"sample '{pc.id}': {exc}") from exc
    return LabeledDataset(samples, list(dataset.class_names), split=dataset.split)


def build_robustness_suite(
    dataset: LabeledDataset, seed: int = 0
) -> list[tuple[str, LabeledDataset]]:
    """Every unseen-corruption test set, plus the untouched original.

    Covers the six standard corruption families (noise, translation,
    missing part, sparse, rotation, occlusion) and the protocol variants
    (75% noise, 50% region removal, 87.5% uniform removal). Per-sample
    seeds come from (suite seed, sample id), so suites are reproducible
    and sample-aligned across kinds.
    """
    entries = [("original", dataset)]
    for kind in (
        "noise",
        "translation",
        "missing_part",
        "sparse",
        "rotation",
        "occlusion",
        "noise_fraction",
        "region_missing",
        "uniform_removal",
    ):
        entries.append((kind, corrupt_dataset(dataset, kind, seed)))
    return entries


def export_suite(suite: list[tuple[str, LabeledDataset]], out_dir) -> Path:
    """Write each suite entry as binary clouds plus a name->directory index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_lines = []
    for name, ds in suite:
        sub = out_dir / name
        sub.mkdir(exist_ok=True)
        manifest_lines = ["classes:" + ";".join(ds.class_names), "normalized:true"]
        for pc in ds.samples:
            fname = f"{pc.id}.pcl"
            write_cloud_binary(pc.points, sub / fname)
            manifest_lines.append(f"{fname},{pc.label},{pc.id}")
        (sub / "manifest.txt").write_text("\n".join(manifest_lines) + "\n")
        index_lines.append(f"{name},{name}")
    index = out_dir / "index.txt"
    index.write_text("\n".join(index_lines) + "\n")
    return index
