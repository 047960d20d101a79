"""Linear and volumetric quantification."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyRegionError
from .volume import LABEL_LESION, LABEL_LUNG, LabelVolume


@dataclass(frozen=True)
class MeasurementRecord:
    kind: str  # "linear" | "volume"
    value: float  # mm for linear, mL for volume
    endpoints: tuple[tuple[float, float, float], ...] = ()
    label: str = ""
    timestamp: float = field(default_factory=time.time)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["endpoints"] = [list(p) for p in self.endpoints]
        return d


def linear_distance(p1: Sequence[float], p2: Sequence[float],
                    spacing: Sequence[float]) -> float:
    """Euclidean distance in mm between two voxel coordinates."""
    a = np.asarray(p1, dtype=np.float64) * np.asarray(spacing, dtype=np.float64)
    b = np.asarray(p2, dtype=np.float64) * np.asarray(spacing, dtype=np.float64)
    return float(np.linalg.norm(a - b))


def region_volume(labels: LabelVolume, label: int) -> float:
    """Volume in mL of all voxels carrying the given label."""
    if label not in (LABEL_LUNG, LABEL_LESION):
        raise ValueError(f"label must be 1 (lung) or 2 (lesion), got {label}")
    count = int(np.count_nonzero(labels.labels == label))
    sx, sy, sz = labels.spacing
    return count * sx * sy * sz / 1000.0


@dataclass(frozen=True)
class LesionStats:
    lung_ml: float
    lesion_ml: float
    lesion_pct: float

    def to_dict(self) -> dict:
        return {"lung_ml": self.lung_ml, "lesion_ml": self.lesion_ml,
                "lesion_pct": self.lesion_pct}


def lesion_stats(labels: LabelVolume, *, lung_only_denominator: bool = False) -> LesionStats:
    """Lung volume, lesion volume, and lesion percentage.

    Lesion voxels count as lung tissue, so the default denominator is
    lung + lesion; set ``lung_only_denominator`` for the stricter ratio.
    """
    lung_ml = region_volume(labels, LABEL_LUNG)
    lesion_ml = region_volume(labels, LABEL_LESION)
    denom = lung_ml if lung_only_denominator else lung_ml + lesion_ml
    if denom <= 0.0:
        raise EmptyRegionError("no lung tissue to measure against")
    return LesionStats(lung_ml=lung_ml, lesion_ml=lesion_ml,
                       lesion_pct=100.0 * lesion_ml / denom)
