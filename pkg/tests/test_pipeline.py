import json

import numpy as np
import pytest

from ctview.cases import DerivedCache
from ctview.errors import PipelineError
from ctview.measure import lesion_stats
from ctview.mil import ModelConfig
from ctview.nifti import write_nifti_file
from ctview.pipeline import ModelHandle, analyze_case
from ctview.synth import generate_synthetic_dataset
from ctview.volume import ScalarVolume
from test_cases import write_case

SMALL_MODEL = ModelConfig(conv_widths=(4, 8), attention_dim=8)


@pytest.fixture()
def handle():
    return ModelHandle.fresh(seed=3, config=SMALL_MODEL, input_size=24)


@pytest.fixture(scope="module")
def phantom_case():
    return generate_synthetic_dataset(2, seed=31, shape=(28, 28, 18))[0]


class TestAnalyzeCase:
    def test_full_chain_with_masks(self, tmp_path, handle, phantom_case):
        mpath = write_case(tmp_path, phantom_case)
        analysis = analyze_case(mpath, handle)
        assert analysis.failures == {}
        assert analysis.fallback == {"lung": False, "lesion": False}
        cls = analysis.classification
        assert cls["p_neg"] + cls["p_pos"] == pytest.approx(1.0, abs=1e-9)
        assert len(cls["attention"]) >= 1
        assert abs(sum(cls["attention"]) - 1.0) <= 1e-6
        assert analysis.heatmap.dims == analysis.scalar.dims
        assert analysis.measurements["lung_ml"] > 0
        assert handle.predict_count == 1

    def test_second_load_served_from_cache(self, tmp_path, handle, phantom_case):
        mpath = write_case(tmp_path, phantom_case)
        cache = DerivedCache(tmp_path / "cache")
        first = analyze_case(mpath, handle, cache=cache)
        assert handle.predict_count == 1
        second = analyze_case(mpath, handle, cache=cache)
        assert handle.predict_count == 1  # no model execution on reload
        assert "classification" in second.cache_hits
        assert second.classification == first.classification
        np.testing.assert_allclose(second.heatmap.data, first.heatmap.data,
                                   atol=1e-6)

    def test_changed_input_invalidates_cache(self, tmp_path, handle, phantom_case):
        mpath = write_case(tmp_path, phantom_case)
        cache = DerivedCache(tmp_path / "cache")
        analyze_case(mpath, handle, cache=cache)
        data = np.array(phantom_case.scalar.data, copy=True)
        data[0, 0, 0] += 50.0
        write_nifti_file(ScalarVolume(data, phantom_case.scalar.spacing),
                         mpath.parent / "scalar.nii")
        analyze_case(mpath, handle, cache=cache)
        assert handle.predict_count == 2

    def test_scalar_only_uses_fallback(self, tmp_path, handle, phantom_case):
        mpath = write_case(tmp_path, phantom_case, with_lung=False,
                           with_lesion=False)
        analysis = analyze_case(mpath, handle)
        assert analysis.fallback == {"lung": True, "lesion": True}
        assert analysis.classification is not None
        assert any("fallback" in n for n in analysis.notices)

    def test_segmentation_failure_degrades_gracefully(self, tmp_path, handle):
        # a uniform soft-tissue block has no air: lung segmentation must fail
        # but the case still loads for 2D viewing
        cdir = tmp_path / "solid"
        cdir.mkdir()
        vol = ScalarVolume(np.full((12, 12, 12), 40.0, dtype=np.float32), (1, 1, 1))
        write_nifti_file(vol, cdir / "scalar.nii")
        (cdir / "m.json").write_text(json.dumps({"id": "solid", "scalar": "scalar.nii"}))
        analysis = analyze_case(cdir / "m.json", handle)
        assert "segment" in analysis.failures
        assert analysis.classification is None
        assert analysis.labels is None
        assert analysis.scalar.dims == (12, 12, 12)  # 2D views remain possible

    def test_missing_manifest_is_ingest_stage(self, tmp_path, handle):
        with pytest.raises(PipelineError) as exc:
            analyze_case(tmp_path / "missing.json", handle)
        assert exc.value.stage == "ingest"

    def test_measurements_match_direct_call(self, tmp_path, handle, phantom_case):
        mpath = write_case(tmp_path, phantom_case)
        analysis = analyze_case(mpath, handle)
        stats = lesion_stats(analysis.labels)
        assert analysis.measurements["lung_ml"] == pytest.approx(stats.lung_ml)
        assert analysis.measurements["lesion_ml"] == pytest.approx(stats.lesion_ml)
        assert analysis.measurements["pct"] == pytest.approx(stats.lesion_pct)

    def test_summary_shape(self, tmp_path, handle, phantom_case):
        mpath = write_case(tmp_path, phantom_case)
        summary = analyze_case(mpath, handle).summary()
        assert summary["id"] == phantom_case.case_id
        assert set(summary) >= {"dims", "spacing", "classification", "volumes",
                                "fallback", "failures"}


class TestModelHandle:
    def test_version_depends_on_params_and_size(self):
        h1 = ModelHandle.fresh(seed=1, config=SMALL_MODEL, input_size=24)
        h2 = ModelHandle.fresh(seed=2, config=SMALL_MODEL, input_size=24)
        h3 = ModelHandle.fresh(seed=1, config=SMALL_MODEL, input_size=32)
        assert h1.version != h2.version
        assert h1.version != h3.version

    def test_checkpoint_round_trip(self, tmp_path):
        from ctview.mil.checkpoint import save_model_file
        h = ModelHandle.fresh(seed=5, config=SMALL_MODEL, input_size=24)
        save_model_file(h.model, tmp_path / "m.ckpt")
        h2 = ModelHandle.from_checkpoint(tmp_path / "m.ckpt", input_size=24)
        assert h.version == h2.version
