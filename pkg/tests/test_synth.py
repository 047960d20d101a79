import numpy as np

from ctview.synth import generate_synthetic_dataset, write_dataset


class TestGenerator:
    def test_deterministic_for_fixed_seed(self):
        a = generate_synthetic_dataset(6, seed=11)
        b = generate_synthetic_dataset(6, seed=11)
        for ca, cb in zip(a, b):
            assert ca.label == cb.label
            assert ca.scalar.data.tobytes() == cb.scalar.data.tobytes()
            assert ca.lung_mask.labels.tobytes() == cb.lung_mask.labels.tobytes()
            assert ca.lesion_mask.labels.tobytes() == cb.lesion_mask.labels.tobytes()

    def test_negatives_have_no_lesion_band_voxels_in_lung(self):
        for case in generate_synthetic_dataset(6, seed=3):
            if case.label == 1:
                continue
            inside = case.lung_mask.labels > 0
            in_band = (case.scalar.data >= -700) & (case.scalar.data <= -250) & inside
            # texture noise floor: ~6 sigma from the band edge
            assert in_band.mean() < 1e-4
            assert case.lesion_mask.labels.sum() == 0

    def test_ratio_exact(self):
        cases = generate_synthetic_dataset(10, seed=5, pos_fraction=0.3)
        assert sum(c.label for c in cases) == 3

    def test_positive_lesions_inside_lungs(self):
        for case in generate_synthetic_dataset(6, seed=9):
            if case.label == 0:
                continue
            lesion = case.lesion_mask.labels > 0
            assert lesion.sum() >= 60
            assert np.all(case.lung_mask.labels[lesion] > 0)

    def test_write_dataset_layout(self, tmp_path):
        cases = generate_synthetic_dataset(2, seed=1)
        index = write_dataset(cases, tmp_path / "d")
        assert index.exists()
        assert (tmp_path / "d" / "case0000" / "scalar.nii").exists()
        assert (tmp_path / "d" / "case0000" / "manifest.json").exists()
