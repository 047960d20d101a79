import numpy as np
import pytest

from ctview.errors import EmptyRegionError
from ctview.measure import (LesionStats, MeasurementRecord, lesion_stats,
                            linear_distance, region_volume)
from ctview.synth import _ellipsoid
from ctview.volume import LabelVolume


class TestLinearDistance:
    def test_3_4_5(self):
        assert linear_distance((0, 0, 0), (3, 4, 0), (1, 1, 1)) == pytest.approx(5.0)

    def test_spacing_scales(self):
        assert linear_distance((0, 0, 0), (3, 4, 0), (2, 2, 2)) == pytest.approx(10.0)

    def test_matches_formula_oracle(self, rng):
        spacing = (0.8, 1.1, 2.3)
        for _ in range(50):
            p1 = rng.uniform(0, 50, 3)
            p2 = rng.uniform(0, 50, 3)
            expect = np.sqrt(sum(((a - b) * s) ** 2
                                 for a, b, s in zip(p1, p2, spacing)))
            assert linear_distance(p1, p2, spacing) == pytest.approx(expect, abs=1e-9)

    def test_symmetry_and_triangle(self, rng):
        spacing = (1.0, 1.0, 1.5)
        for _ in range(20):
            a, b, c = rng.uniform(0, 20, (3, 3))
            assert linear_distance(a, b, spacing) == pytest.approx(
                linear_distance(b, a, spacing))
            assert linear_distance(a, c, spacing) <= (
                linear_distance(a, b, spacing) + linear_distance(b, c, spacing) + 1e-9)


class TestRegionVolume:
    def test_thousand_voxels(self):
        labels = np.zeros((10, 10, 10), dtype=np.uint8)
        labels[:] = 1
        assert region_volume(LabelVolume(labels, (1, 1, 1)), 1) == pytest.approx(1.0)

    def test_empty_label_zero(self):
        labels = np.ones((5, 5, 5), dtype=np.uint8)
        assert region_volume(LabelVolume(labels, (1, 1, 1)), 2) == 0.0

    def test_sphere_against_analytic(self):
        shape = (50, 50, 50)
        sphere = _ellipsoid(shape, (24.5, 24.5, 24.5), (20.0, 20.0, 20.0))
        labels = sphere.astype(np.uint8)
        vol = region_volume(LabelVolume(labels, (1, 1, 1)), 1)
        analytic = 4.0 / 3.0 * np.pi * 20.0 ** 3 / 1000.0  # 33.51 mL
        assert abs(vol - analytic) / analytic <= 0.015

    def test_additive_over_disjoint_components(self, rng):
        labels = np.zeros((12, 12, 12), dtype=np.uint8)
        labels[1:3, 1:3, 1:3] = 2
        labels[8:11, 8:11, 8:11] = 2
        lv = LabelVolume(labels, (1, 1, 1))
        assert region_volume(lv, 2) == pytest.approx((8 + 27) / 1000.0)


class TestLesionStats:
    def test_five_percent(self):
        labels = np.zeros((10, 10, 10), dtype=np.uint8)
        labels.flat[:950] = 1
        labels.flat[950:1000] = 2
        stats = lesion_stats(LabelVolume(labels, (1, 1, 1)))
        assert stats.lung_ml == pytest.approx(0.95)
        assert stats.lesion_ml == pytest.approx(0.05)
        assert stats.lesion_pct == pytest.approx(5.0)

    def test_zero_lesion(self):
        labels = np.ones((5, 5, 5), dtype=np.uint8)
        stats = lesion_stats(LabelVolume(labels, (1, 1, 1)))
        assert stats.lesion_pct == 0.0

    def test_phantom_ground_truth_ratio(self, phantom_pair):
        pos, _ = phantom_pair
        lung = pos.lung_mask.labels > 0
        lesion = pos.lesion_mask.labels > 0
        combined = np.where(lesion, 2, np.where(lung, 1, 0)).astype(np.uint8)
        stats = lesion_stats(LabelVolume(combined, pos.scalar.spacing))
        expect = 100.0 * lesion.sum() / lung.sum()  # lesion is a subset of lung
        assert abs(stats.lesion_pct - expect) <= 0.1

    def test_lung_only_denominator_flag(self):
        labels = np.zeros((10, 10, 10), dtype=np.uint8)
        labels.flat[:900] = 1
        labels.flat[900:1000] = 2
        stats = lesion_stats(LabelVolume(labels, (1, 1, 1)), lung_only_denominator=True)
        assert stats.lesion_pct == pytest.approx(100.0 * 100 / 900)

    def test_no_lung_raises(self):
        labels = np.zeros((3, 3, 3), dtype=np.uint8)
        with pytest.raises(EmptyRegionError):
            lesion_stats(LabelVolume(labels, (1, 1, 1)))

    def test_pct_bounded(self, rng):
        for _ in range(10):
            labels = rng.integers(0, 3, size=(6, 6, 6)).astype(np.uint8)
            if not (labels == 1).any():
                continue
            stats = lesion_stats(LabelVolume(labels, (1, 1, 1)))
            assert 0.0 <= stats.lesion_pct <= 100.0

    def test_record_round_trip(self):
        rec = MeasurementRecord(kind="linear", value=5.0,
                                endpoints=((0, 0, 0), (3, 4, 0)), label="caliper")
        d = rec.to_dict()
        assert d["kind"] == "linear" and d["value"] == 5.0
