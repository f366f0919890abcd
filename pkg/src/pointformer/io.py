"""On-disk formats: cloud files (text and binary) and dataset manifests.

Formats:
  - text cloud: one ``x y z`` triple per line, decimal.
  - binary cloud: magic ``PCL1``, unsigned 32-bit little-endian point count,
    then N x 3 little-endian float32, row-major.
  - manifest: header line ``classes:<name;name;...>``, optional header
    ``normalized:true|false`` (default false), then one record per line:
    ``<relative_path>,<label_int>,<id>``. Blank lines and ``#`` comments are
    ignored.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import LabeledDataset, PointCloud, normalize_unit_sphere
from .errors import DataError

BINARY_MAGIC = b"PCL1"


def write_cloud_text(points: np.ndarray, path) -> None:
    pts = np.asarray(points, dtype=np.float32)
    with open(path, "w") as f:
        for x, y, z in pts:
            # repr of the exact float64 value round-trips back to the same float32
            f.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def read_cloud_text(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{ln}: expected 3 coordinates, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise DataError(f"{path}:{ln}: bad coordinate: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty cloud file")
    return np.asarray(rows, dtype=np.float32)


def write_cloud_binary(points: np.ndarray, path) -> None:
    pts = np.ascontiguousarray(points, dtype="<f4")
    with open(path, "wb") as f:
        f.write(BINARY_MAGIC)
        f.write(struct.pack("<I", pts.shape[0]))
        f.write(pts.tobytes())


def read_cloud_binary(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != BINARY_MAGIC:
        raise DataError(f"{path}: bad magic, not a binary cloud file")
    if len(blob) < 8:
        raise DataError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", blob[4:8])
    expected = 8 + n * 12
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {n} points, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", offset=8).reshape(n, 3).copy()


def read_cloud(path) -> np.ndarray:
    """Read a cloud file, sniffing binary vs text by the magic bytes."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"cloud file not found: {path}")
    with open(path, "rb") as f:
        head = f.read(4)
    if head == BINARY_MAGIC:
        return read_cloud_binary(path)
    return read_cloud_text(path)


def load_dataset(manifest_path, split: str = "test") -> LabeledDataset:
    """Load every cloud referenced by a manifest.

    Clouds are validated and unit-sphere normalized unless the manifest
    carries ``normalized:true``.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    class_names: list[str] | None = None
    pre_normalized = False
    samples: list[PointCloud] = []
    with open(manifest_path) as f:
        for ln, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("classes:"):
                class_names = [c for c in line[len("classes:"):].split(";") if c]
                continue
            if line.startswith("normalized:"):
                pre_normalized = line[len("normalized:"):].strip().lower() == "true"
                continue
            if class_names is None:
                raise DataError(f"{manifest_path}:{ln}: records before 'classes:' header")
            parts = line.split(",")
            if len(parts) != 3:
                raise DataError(
                    f"{manifest_path}:{ln}: expected 'path,label,id', got {line!r}"
                )
            rel_path, label_str, sample_id = (p.strip() for p in parts)
            try:
                label = int(label_str)
            except ValueError as exc:
                raise DataError(f"{manifest_path}:{ln}: bad label {label_str!r}") from exc
            if not (0 <= label < len(class_names)):
                raise DataError(
                    f"{manifest_path}:{ln}: label {label} outside "
                    f"{len(class_names)} classes"
                )
            cloud_path = base / rel_path
            if not cloud_path.exists():
                raise DataError(f"{manifest_path}:{ln}: cloud file not found: {cloud_path}")
            try:
                pts = read_cloud(cloud_path)
            except DataError:
                raise
            except Exception as exc:
                raise DataError(f"{manifest_path}:{ln}: failed reading {cloud_path}: {exc}")
            pc = PointCloud(pts, label=label, id=sample_id)
            if not pre_normalized:
                pc = normalize_unit_sphere(pc)
            samples.append(pc)
    if class_names is None:
        raise DataError(f"{manifest_path}: missing 'classes:' header")
    return LabeledDataset(samples, class_names, split=split)


def write_dataset(
    dataset: LabeledDataset, out_dir, binary: bool = True, normalized: bool = True
) -> Path:
    """Write clouds plus a manifest under ``out_dir``; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "pcl" if binary else "xyz"
    lines = ["classes:" + ";".join(dataset.class_names)]
    if normalized:
        lines.append("normalized:true")
    for pc in dataset.samples:
        fname = f"{pc.id}.{ext}"
        if binary:
            write_cloud_binary(pc.points, out_dir / fname)
        else:
            write_cloud_text(pc.points, out_dir / fname)
        lines.append(f"{fname},{pc.label},{pc.id}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
