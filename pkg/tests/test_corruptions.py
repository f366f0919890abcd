"""Corruption kinds, suite construction, reproducibility."""

import numpy as np
import pytest

from pointformer.corruptions import (
    CorruptionSpec,
    apply_corruption,
    build_robustness_suite,
    corrupt_dataset,
    export_suite,
)
from pointformer.data import LabeledDataset, PointCloud, normalize_unit_sphere
from pointformer.errors import CorruptionError
from pointformer.synthetic import generate_synthetic_roofs


def random_cloud(seed=0, n=256):
    rng = np.random.default_rng(seed)
    pc = PointCloud(rng.standard_normal((n, 3)).astype(np.float32), label=0, id=f"r{seed}")
    return normalize_unit_sphere(pc)


class TestKinds:
    def test_zero_sigma_noise_is_identity(self):
        pc = random_cloud(0)
        out = apply_corruption(CorruptionSpec("noise", seed=1, sigma=0.0), pc)
        assert np.array_equal(out.points, pc.points)

    def test_noise_perturbs_all_points(self):
        pc = random_cloud(1)
        out = apply_corruption(CorruptionSpec("noise", seed=2, sigma=0.02), pc)
        assert out.points.shape == pc.points.shape
        assert np.all(np.any(out.points != pc.points, axis=1))

    def test_noise_empirical_sigma(self):
        # std of the added perturbation within 5% of sigma over 1e5 points
        pc = random_cloud(2, n=100_000)
        sigma = 0.02
        out = apply_corruption(CorruptionSpec("noise", seed=3, sigma=sigma), pc)
        diff = out.points.astype(np.float64) - pc.points.astype(np.float64)
        assert abs(diff.std() - sigma) < 0.05 * sigma

    def test_noise_fraction_touches_exact_count(self):
        pc = random_cloud(3, n=1000)
        out = apply_corruption(CorruptionSpec("noise_fraction", seed=4, sigma=0.05), pc)
        changed = np.any(out.points != pc.points, axis=1).sum()
        assert changed == 750  # default fraction 0.75

    def test_translation_single_offset_within_bounds(self):
        pc = random_cloud(4)
        out = apply_corruption(CorruptionSpec("translation", seed=5), pc)
        delta = out.points.astype(np.float64) - pc.points.astype(np.float64)
        offsets = np.unique(np.round(delta, 5), axis=0)
        assert len(offsets) == 1
        assert np.all(np.abs(delta) < 0.2)

    def test_region_missing_counts_and_connectivity(self):
        pc = random_cloud(5, n=400)
        spec = CorruptionSpec("region_missing", seed=6)
        out = apply_corruption(spec, pc)
        assert out.points.shape[0] == 200  # exactly half removed
        # every removed point lies within the final ball radius of the seed
        kept = {tuple(p) for p in out.points.tolist()}
        removed = np.array([p for p in pc.points.tolist() if tuple(p) not in kept])
        rng = np.random.default_rng(spec.seed)
        center = pc.points.astype(np.float64)[rng.integers(400)]
        d_removed = np.linalg.norm(removed - center, axis=1)
        d_kept = np.linalg.norm(out.points.astype(np.float64) - center, axis=1)
        assert d_removed.max() <= d_kept.min() + 1e-9

    def test_uniform_removal_published_fraction(self):
        # 87.5% removed from 1024 leaves exactly 128
        pc = random_cloud(6, n=1024)
        out = apply_corruption(CorruptionSpec("uniform_removal", seed=7), pc)
        assert out.points.shape[0] == 128

    def test_removal_never_duplicates_points(self):
        pc = random_cloud(7, n=512)
        out = apply_corruption(CorruptionSpec("uniform_removal", seed=8), pc)
        assert len(np.unique(out.points, axis=0)) == out.points.shape[0]

    def test_sparse_keeps_target_count(self):
        pc = random_cloud(8, n=1024)
        out = apply_corruption(CorruptionSpec("sparse", seed=9), pc)
        assert out.points.shape[0] == 128
        with pytest.raises(CorruptionError):
            apply_corruption(CorruptionSpec("sparse", seed=9, target_count=2000), pc)

    def test_rotation_is_isometry(self):
        pc = random_cloud(9, n=64)
        out = apply_corruption(CorruptionSpec("rotation", seed=10), pc)
        d_before = np.linalg.norm(
            pc.points[:, None].astype(np.float64) - pc.points[None].astype(np.float64),
            axis=-1,
        )
        d_after = np.linalg.norm(
            out.points[:, None].astype(np.float64) - out.points[None].astype(np.float64),
            axis=-1,
        )
        assert np.allclose(d_before, d_after, atol=1e-5)

    def test_rotation_actually_rotates(self):
        pc = random_cloud(10, n=32)
        out = apply_corruption(CorruptionSpec("rotation", seed=11), pc)
        assert not np.allclose(out.points, pc.points, atol=1e-3)

    def test_occlusion_keeps_near_half_space(self):
        pc = random_cloud(11, n=200)
        out = apply_corruption(CorruptionSpec("occlusion", seed=12), pc)
        assert out.points.shape[0] == 100
        # the kept set must be exactly the nearer half along some direction
        rng = np.random.default_rng(12)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        depth = pc.points.astype(np.float64) @ direction
        kept = {tuple(p) for p in out.points.tolist()}
        expected = {
            tuple(pc.points[i].tolist())
            for i in np.argsort(depth, kind="stable")[:100]
        }
        assert {tuple(p) for p in out.points.tolist()} == expected
        del kept

    def test_partial_query_removes_three_quarters(self):
        pc = random_cloud(12, n=400)
        out = apply_corruption(CorruptionSpec("partial_query", seed=13), pc)
        assert out.points.shape[0] == 100

    def test_zero_point_result_rejected(self):
        pc = random_cloud(13, n=4)
        with pytest.raises(CorruptionError):
            apply_corruption(CorruptionSpec("region_missing", seed=14, fraction=1.0), pc)

    def test_unknown_kind_rejected(self):
        with pytest.raises(CorruptionError):
            CorruptionSpec("melt", seed=0)

    def test_label_and_id_preserved(self):
        pc = random_cloud(14)
        out = apply_corruption(CorruptionSpec("rotation", seed=15), pc)
        assert out.label == pc.label and out.id == pc.id


class TestDeterminism:
    def test_spec_seed_input_fully_determine_output(self):
        pc = random_cloud(15)
        for kind in ("noise", "translation", "region_missing", "rotation", "occlusion"):
            a = apply_corruption(CorruptionSpec(kind, seed=99), pc)
            b = apply_corruption(CorruptionSpec(kind, seed=99), pc)
            assert np.array_equal(a.points, b.points), kind

    def test_different_seeds_differ(self):
        pc = random_cloud(16)
        a = apply_corruption(CorruptionSpec("noise", seed=1), pc)
        b = apply_corruption(CorruptionSpec("noise", seed=2), pc)
        assert not np.array_equal(a.points, b.points)


class TestSuite:
    def _dataset(self):
        return generate_synthetic_roofs(per_class=2, noise_sigma=0.01, seed=0, n_points=256)

    def test_structure(self):
        suite = build_robustness_suite(self._dataset(), seed=0)
        names = [name for name, _ in suite]
        assert names == [
            "original",
            "noise",
            "translation",
            "missing_part",
            "sparse",
            "rotation",
            "occlusion",
            "noise_fraction",
            "region_missing",
            "uniform_removal",
        ]
        original = suite[0][1]
        assert len(original) == 6

    def test_sparse_entry_count_statistics(self):
        ds = generate_synthetic_roofs(per_class=1, noise_sigma=0.0, seed=1, n_points=256)
        suite = dict(build_robustness_suite(ds, seed=0))
        for name, expected in [
            ("sparse", 128),
            ("uniform_removal", 256 - 224),
            ("region_missing", 128),
            ("noise", 256),
            ("rotation", 256),
            ("translation", 256),
        ]:
            for pc in suite[name].samples:
                assert pc.n_points == expected, name

    def test_equal_seeds_identical_builds(self):
        ds = self._dataset()
        a = build_robustness_suite(ds, seed=5)
        b = build_robustness_suite(ds, seed=5)
        for (name_a, ds_a), (name_b, ds_b) in zip(a, b):
            assert name_a == name_b
            for pa, pb in zip(ds_a.samples, ds_b.samples):
                assert np.array_equal(pa.points, pb.points)

    def test_export_byte_reproducible(self, tmp_path):
        ds = self._dataset()
        for d in ("one", "two"):
            export_suite(build_robustness_suite(ds, seed=7), tmp_path / d)
        files_one = sorted((tmp_path / "one").rglob("*"))
        files_two = sorted((tmp_path / "two").rglob("*"))
        assert [f.name for f in files_one] == [f.name for f in files_two]
        for fa, fb in zip(files_one, files_two):
            if fa.is_file():
                assert fa.read_bytes() == fb.read_bytes(), fa.name

    def test_per_sample_error_context(self):
        ds = self._dataset()
        with pytest.raises(CorruptionError, match=ds.samples[0].id):
            corrupt_dataset(ds, "sparse", seed=0, target_count=10_000)
