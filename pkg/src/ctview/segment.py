"""Classical threshold/morphology segmenters.

These fill in for external deep-learning masks when a case arrives without
them, so the pipeline still runs end-to-end. They are fallbacks, not
clinically validated; every result produced through them is tagged as such.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyRegionError, GeometryError
from .volume import (LABEL_LESION, LABEL_LUNG, LabelVolume, ScalarVolume,
                     same_geometry)

FALLBACK_NOTICE = "fallback segmentation - not clinically validated"

# face-adjacent (6-connected) neighbourhood
_CONN6 = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class SegmenterConfig:
    air_threshold_hu: float = -320.0
    lesion_band_hu: tuple[float, float] = (-700.0, -250.0)
    min_component_voxels: int = 50
    closing_radius: int = 2

    def __post_init__(self):
        lo, hi = self.lesion_band_hu
        if not lo < hi:
            raise ValueError(f"lesion band requires lo < hi, got {self.lesion_band_hu}")
        for v in (self.air_threshold_hu, lo, hi):
            if not -1024.0 <= v <= 3071.0:
                raise ValueError(f"threshold {v} outside plausible HU range")
        if self.min_component_voxels < 1 or self.closing_radius < 0:
            raise ValueError("component size must be >= 1 and radius >= 0")


def _ball(radius: int) -> np.ndarray:
    if radius == 0:
        return np.ones((1, 1, 1), dtype=bool)
    r = np.arange(-radius, radius + 1)
    x, y, z = np.meshgrid(r, r, r, indexing="ij")
    return x * x + y * y + z * z <= radius * radius


def segment_lungs(vol: ScalarVolume, cfg: SegmenterConfig = SegmenterConfig()) -> LabelVolume:
    """Threshold-based lung mask: air-density voxels, minus exterior air,
    keeping the two largest components, then morphological closing."""
    candidates = vol.data < cfg.air_threshold_hu
    comp, n = ndimage.label(candidates, structure=_CONN6)
    if n == 0:
        raise EmptyRegionError("no air-density voxels below threshold")

    # components reaching the in-plane boundary are exterior air
    border_ids = np.unique(np.concatenate([
        comp[0, :, :].ravel(), comp[-1, :, :].ravel(),
        comp[:, 0, :].ravel(), comp[:, -1, :].ravel(),
    ]))
    sizes = np.bincount(comp.ravel(), minlength=n + 1)
    sizes[0] = 0
    sizes[border_ids] = 0
    keep = np.argsort(sizes, kind="stable")[::-1][:2]
    keep = [int(k) for k in keep if sizes[k] > 0]
    if not keep:
        raise EmptyRegionError("no interior lung-candidate component found")

    mask = np.isin(comp, keep)
    if cfg.closing_radius > 0:
        mask = ndimage.binary_closing(mask, structure=_ball(cfg.closing_radius))
    return LabelVolume(mask.astype(np.uint8) * LABEL_LUNG, vol.spacing, vol.origin)


def localize_lesions(vol: ScalarVolume, lungmask: LabelVolume,
                     cfg: SegmenterConfig = SegmenterConfig()) -> LabelVolume:
    """Hazy-opacity candidates: voxels within the lesion HU band inside the
    lung mask, small components dropped. Returns the combined label volume
    (0=context, 1=lung, 2=lesion; lesion wins over lung)."""
    if not same_geometry(vol, lungmask):
        raise GeometryError("volume and lung mask are not co-registered")
    inside = lungmask.labels >= LABEL_LUNG
    lo, hi = cfg.lesion_band_hu
    band = (vol.data >= lo) & (vol.data <= hi) & inside

    comp, n = ndimage.label(band, structure=_CONN6)
    lesion = np.zeros_like(band)
    if n > 0:
        sizes = np.bincount(comp.ravel(), minlength=n + 1)
        big = np.flatnonzero(sizes >= cfg.min_component_voxels)
        big = big[big != 0]
        if big.size:
            lesion = np.isin(comp, big)

    out = np.zeros(vol.dims, dtype=np.uint8)
    out[inside] = LABEL_LUNG
    out[lesion] = LABEL_LESION
    return LabelVolume(out, vol.spacing, vol.origin)


def combine_masks(lung: LabelVolume, lesion: LabelVolume | None) -> LabelVolume:
    """Merge separate lung/lesion masks into one label volume (lesion wins)."""
    out = np.where(lung.labels > 0, LABEL_LUNG, 0).astype(np.uint8)
    if lesion is not None:
        if not same_geometry(lung, lesion):
            raise GeometryError("lung and lesion masks are not co-registered")
        out[lesion.labels > 0] = LABEL_LESION
    return LabelVolume(out, lung.spacing, lung.origin)
