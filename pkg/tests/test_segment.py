import numpy as np
import pytest

from ctview.errors import EmptyRegionError
from ctview.segment import (SegmenterConfig, combine_masks, localize_lesions,
                            segment_lungs)
from ctview.synth import generate_synthetic_dataset, _ellipsoid
from ctview.volume import LabelVolume, ScalarVolume


def dice(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    return 2.0 * inter / (a.sum() + b.sum())


class TestSegmentLungs:
    def test_phantom_two_lungs(self, phantom_pair):
        pos, _ = phantom_pair
        out = segment_lungs(pos.scalar)
        assert set(np.unique(out.labels)) <= {0, 1}
        assert dice(out.labels > 0, pos.lung_mask.labels > 0) >= 0.98

    def test_uniform_body_raises(self):
        vol = ScalarVolume(np.full((12, 12, 12), 40.0, dtype=np.float32), (1, 1, 1))
        with pytest.raises(EmptyRegionError):
            segment_lungs(vol)

    def test_single_lung_kept(self):
        shape = (32, 32, 20)
        data = np.full(shape, 40.0, dtype=np.float64)
        lung = _ellipsoid(shape, (16, 16, 10), (6, 8, 6))
        data[lung] = -850.0
        out = segment_lungs(ScalarVolume(data.astype(np.float32), (1, 1, 1)))
        assert dice(out.labels > 0, lung) >= 0.98

    def test_exterior_air_discarded(self, phantom_pair):
        pos, _ = phantom_pair
        out = segment_lungs(pos.scalar)
        exterior = pos.scalar.data < -950  # background air
        # essentially no exterior voxel labelled lung
        overlap = np.logical_and(out.labels > 0, exterior).sum()
        assert overlap < 0.01 * exterior.sum()

    def test_threshold_monotonicity(self, phantom_pair):
        pos, _ = phantom_pair
        low = pos.scalar.data < -500
        high = pos.scalar.data < -300
        assert np.all(high[low])  # raising the threshold never shrinks the set


class TestLocalizeLesions:
    def test_phantom_blob_recovered(self, phantom_pair):
        pos, _ = phantom_pair
        out = localize_lesions(pos.scalar, pos.lung_mask)
        assert dice(out.labels == 2, pos.lesion_mask.labels > 0) >= 0.95

    def test_healthy_phantom_no_lesions(self, phantom_pair):
        _, neg = phantom_pair
        out = localize_lesions(neg.scalar, neg.lung_mask)
        assert np.count_nonzero(out.labels == 2) == 0

    def test_small_blob_dropped(self):
        shape = (24, 24, 24)
        data = np.full(shape, -850.0, dtype=np.float64)
        lungmask = LabelVolume(np.ones(shape, dtype=np.uint8), (1, 1, 1))
        blob = _ellipsoid(shape, (12, 12, 12), (1.6, 1.6, 1.6))  # ~20 voxels
        assert 10 < blob.sum() < 50
        data[blob] = -450.0
        out = localize_lesions(ScalarVolume(data.astype(np.float32), (1, 1, 1)),
                               lungmask, SegmenterConfig(min_component_voxels=50))
        assert np.count_nonzero(out.labels == 2) == 0

    def test_lesions_only_inside_lung(self, phantom_pair):
        pos, _ = phantom_pair
        out = localize_lesions(pos.scalar, pos.lung_mask)
        lesion = out.labels == 2
        assert np.all(pos.lung_mask.labels[lesion] > 0)

    def test_labels_in_range_and_deterministic(self, phantom_pair):
        pos, _ = phantom_pair
        a = localize_lesions(pos.scalar, pos.lung_mask)
        b = localize_lesions(pos.scalar, pos.lung_mask)
        assert set(np.unique(a.labels)) <= {0, 1, 2}
        assert a.labels.tobytes() == b.labels.tobytes()


class TestCombineMasks:
    def test_lesion_wins(self):
        lung = LabelVolume(np.ones((2, 2, 2), dtype=np.uint8), (1, 1, 1))
        lesion_arr = np.zeros((2, 2, 2), dtype=np.uint8)
        lesion_arr[0, 0, 0] = 2
        lesion = LabelVolume(lesion_arr, (1, 1, 1))
        out = combine_masks(lung, lesion)
        assert out.labels[0, 0, 0] == 2
        assert out.labels[1, 1, 1] == 1


class TestConfig:
    def test_band_order_enforced(self):
        with pytest.raises(ValueError):
            SegmenterConfig(lesion_band_hu=(-250.0, -700.0))

    def test_threshold_range_enforced(self):
        with pytest.raises(ValueError):
            SegmenterConfig(air_threshold_hu=-2000.0)
