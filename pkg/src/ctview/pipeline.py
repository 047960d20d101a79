"""The automatic per-case chain: ingest, masks (supplied or fallback),
classification with heatmap, and measurements, with derived-result caching.

Segmentation or classification failures are recorded rather than raised so
2D viewing always stays available; only ingest problems abort the case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cases import (DerivedCache, LoadedCase, fnv1a64_hex, load_case,
                    load_case_doc)
from .errors import CtviewError, EmptyRegionError, PipelineError
from .measure import lesion_stats
from .mil import MilModel, ModelConfig, predict_with_heatmap
from .mil.checkpoint import load_model_file, save_model
from .nifti import parse_nifti, write_nifti
from .segment import (FALLBACK_NOTICE, SegmenterConfig, combine_masks,
                      localize_lesions, segment_lungs)
from .volume import (LabelVolume, ScalarVolume, heatmap_to_volume,
                     prepare_classifier_input)


class ModelHandle:
    """A classifier plus the identity string used for caching and ETags.

    ``predict_count`` observes real model executions (cache hits do not
    increment it).
    """

    def __init__(self, model: MilModel, input_size: int = 224):
        self.model = model
        self.input_size = int(input_size)
        self.version = f"{fnv1a64_hex(save_model(model))}-s{self.input_size}"
        self.predict_count = 0

    @classmethod
    def from_checkpoint(cls, path: str | Path, input_size: int = 224) -> "ModelHandle":
        return cls(load_model_file(path), input_size=input_size)

    @classmethod
    def fresh(cls, seed: int = 0, config: ModelConfig = ModelConfig(),
              input_size: int = 224) -> "ModelHandle":
        return cls(MilModel.initialise(config, seed=seed), input_size=input_size)


@dataclass
class CaseAnalysis:
    record: "CaseRecord"
    scalar: ScalarVolume
    labels: LabelVolume | None
    classification: dict | None
    heatmap: ScalarVolume | None
    measurements: dict | None
    failures: dict[str, str] = field(default_factory=dict)
    fallback: dict[str, bool] = field(default_factory=dict)
    cache_hits: tuple[str, ...] = ()
    notices: tuple[str, ...] = ()

    def summary(self) -> dict:
        out = {
            "id": self.record.case_id,
            "dims": list(self.scalar.dims),
            "spacing": list(self.scalar.spacing),
            "metadata": self.record.metadata,
            "classification": self.classification,
            "volumes": self.measurements,
            "fallback": self.fallback,
            "failures": self.failures,
            "cache_hits": list(self.cache_hits),
            "notices": list(self.notices),
        }
        return out


def _pipeline_version(model: ModelHandle, seg_cfg: SegmenterConfig) -> str:
    seg_digest = fnv1a64_hex(repr(seg_cfg).encode())
    return f"{model.version}|seg-{seg_digest}"


def _build_labels(loaded: LoadedCase, seg_cfg: SegmenterConfig,
                  failures: dict, fallback: dict) -> LabelVolume | None:
    lung = loaded.lung_mask
    fallback["lung"] = loaded.record.needs_lung_fallback
    fallback["lesion"] = loaded.record.needs_lesion_fallback
    try:
        if lung is None:
            lung = segment_lungs(loaded.scalar, seg_cfg)
        if loaded.lesion_mask is not None:
            return combine_masks(lung, loaded.lesion_mask)
        return localize_lesions(loaded.scalar, lung, seg_cfg)
    except CtviewError as e:
        failures["segment"] = str(e)
        return None


def analyze_case(manifest: str | Path | dict, model: ModelHandle,
                 cache: DerivedCache | None = None,
                 seg_cfg: SegmenterConfig = SegmenterConfig(),
                 base_dir: str | Path | None = None) -> CaseAnalysis:
    """Run the full automatic chain for one case.

    ``manifest`` is a manifest path or an already-parsed manifest document
    (relative paths then resolve against ``base_dir``, default cwd).
    """
    try:
        if isinstance(manifest, dict):
            loaded = load_case_doc(manifest, Path(base_dir or "."))
        else:
            loaded = load_case(manifest)
    except CtviewError as e:
        raise PipelineError("ingest", str(e)) from e

    failures: dict[str, str] = {}
    fallback: dict[str, bool] = {}
    notices: list[str] = []
    cache_hits: list[str] = []
    labels = _build_labels(loaded, seg_cfg, failures, fallback)
    if any(fallback.values()) and labels is not None:
        notices.append(FALLBACK_NOTICE)

    version = _pipeline_version(model, seg_cfg)
    inputs_hash = loaded.record.inputs_hash

    classification = None
    heatmap = None
    if labels is None:
        failures.setdefault("classify", "segmentation unavailable")
    else:
        cached_cls = cache.load(loaded.record.case_id, "classification",
                                inputs_hash, version) if cache else None
        cached_map = cache.load(loaded.record.case_id, "heatmap",
                                inputs_hash, version) if cache else None
        if cached_cls is not None and cached_map is not None:
            classification = json.loads(cached_cls.decode())
            heatmap = parse_nifti(cached_map)
            cache_hits.append("classification")
        else:
            try:
                prep = prepare_classifier_input(loaded.scalar, labels,
                                                out_size=model.input_size)
                result = predict_with_heatmap(prep.bag, model.model)
                model.predict_count += 1
                heatmap = heatmap_to_volume(result.heatmaps, prep)
                classification = {
                    "p_neg": float(result.probs[0]),
                    "p_pos": float(result.probs[1]),
                    "attention": [float(a) for a in result.attention],
                }
                if cache is not None:
                    cache.store(loaded.record.case_id, "classification",
                                inputs_hash, version,
                                json.dumps(classification).encode())
                    cache.store(loaded.record.case_id, "heatmap",
                                inputs_hash, version, write_nifti(heatmap))
            except CtviewError as e:
                failures["classify"] = str(e)

    measurements = None
    if labels is not None:
        cached = cache.load(loaded.record.case_id, "measurements",
                            inputs_hash, version) if cache else None
        if cached is not None:
            measurements = json.loads(cached.decode())
            cache_hits.append("measurements")
        else:
            try:
                stats = lesion_stats(labels)
                measurements = {"lung_ml": stats.lung_ml,
                                "lesion_ml": stats.lesion_ml,
                                "pct": stats.lesion_pct}
                if cache is not None:
                    cache.store(loaded.record.case_id, "measurements",
                                inputs_hash, version,
                                json.dumps(measurements).encode())
            except EmptyRegionError as e:
                failures["measure"] = str(e)
    else:
        failures.setdefault("measure", "segmentation unavailable")

    return CaseAnalysis(record=loaded.record, scalar=loaded.scalar,
                        labels=labels, classification=classification,
                        heatmap=heatmap, measurements=measurements,
                        failures=failures, fallback=fallback,
                        cache_hits=tuple(cache_hits), notices=tuple(notices))
