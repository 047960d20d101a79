"""Synthetic chest phantoms with ground-truth masks and labels.

Each case is a body ellipsoid (+40 HU) on an air background (-1000 HU)
containing two air-density lung ellipsoids (-850 HU with Gaussian texture).
Positive cases add 1-4 hazy peripheral blobs (-450 HU) inside the lungs.
The generator is the ground-truth oracle for the segmentation, measurement,
and classification harnesses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nifti import write_nifti_file
from .volume import LABEL_LESION, LABEL_LUNG, LabelVolume, ScalarVolume

BODY_HU = 40.0
AIR_HU = -1000.0
LUNG_HU = -850.0
LUNG_TEXTURE_SIGMA = 25.0
LESION_HU = -450.0
LESION_TEXTURE_SIGMA = 30.0
MIN_BLOB_VOXELS = 60


@dataclass(frozen=True)
class SyntheticCase:
    case_id: str
    scalar: ScalarVolume
    lung_mask: LabelVolume
    lesion_mask: LabelVolume
    label: int  # 0 negative, 1 positive
    blob_centers: tuple[tuple[int, int, int], ...]
    blob_radii: tuple[tuple[float, float, float], ...]


def _ellipsoid(shape, center, radii) -> np.ndarray:
    nx, ny, nz = shape
    x = np.arange(nx)[:, None, None]
    y = np.arange(ny)[None, :, None]
    z = np.arange(nz)[None, None, :]
    return (((x - center[0]) / radii[0]) ** 2
            + ((y - center[1]) / radii[1]) ** 2
            + ((z - center[2]) / radii[2]) ** 2) <= 1.0


def _make_case(case_id: str, positive: bool, rng: np.random.Generator,
               shape: tuple[int, int, int],
               spacing: tuple[float, float, float]) -> SyntheticCase:
    nx, ny, nz = shape
    data = np.full(shape, AIR_HU, dtype=np.float64)

    body_c = (nx / 2 + rng.uniform(-1, 1), ny / 2 + rng.uniform(-1, 1), nz / 2)
    body_r = (0.46 * nx * rng.uniform(0.96, 1.0),
              0.42 * ny * rng.uniform(0.96, 1.0),
              0.49 * nz)
    body = _ellipsoid(shape, body_c, body_r)
    data[body] = BODY_HU
    # lungs stay inside a shrunken body so a soft-tissue wall always
    # separates them from the exterior air
    inner = _ellipsoid(shape, body_c,
                       (body_r[0] - 2.5, body_r[1] - 2.5, max(body_r[2] - 2.0, 1.0)))

    lung_mask = np.zeros(shape, dtype=bool)
    lung_params = []
    for side in (-1, 1):
        c = (nx / 2 + side * 0.21 * nx + rng.uniform(-1, 1),
             ny / 2 + rng.uniform(-1, 1),
             nz / 2 + rng.uniform(-1, 1))
        r = (0.145 * nx * rng.uniform(0.9, 1.05),
             0.27 * ny * rng.uniform(0.9, 1.05),
             0.33 * nz * rng.uniform(0.9, 1.05))
        lung_params.append((c, r))
        lung_mask |= _ellipsoid(shape, c, r) & inner
    n_lung = int(lung_mask.sum())
    data[lung_mask] = LUNG_HU + rng.normal(0.0, LUNG_TEXTURE_SIGMA, n_lung)

    lesion_mask = np.zeros(shape, dtype=bool)
    centers: list[tuple[int, int, int]] = []
    radii: list[tuple[float, float, float]] = []
    if positive:
        n_blobs = int(rng.integers(1, 5))
        placed = 0
        attempts = 0
        while placed < n_blobs and attempts < 200:
            attempts += 1
            (lc, lr) = lung_params[int(rng.integers(0, 2))]
            # peripheral: push the blob centre toward the lung boundary
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            frac = rng.uniform(0.45, 0.7)
            c = (lc[0] + direction[0] * frac * lr[0],
                 lc[1] + direction[1] * frac * lr[1],
                 lc[2] + direction[2] * frac * lr[2])
            r = tuple(rng.uniform(3.0, 5.5) for _ in range(3))
            blob = _ellipsoid(shape, c, r) & lung_mask
            if int(blob.sum()) < MIN_BLOB_VOXELS:
                continue
            lesion_mask |= blob
            centers.append(tuple(int(round(v)) for v in c))
            radii.append(tuple(float(v) for v in r))
            placed += 1
        n_les = int(lesion_mask.sum())
        data[lesion_mask] = LESION_HU + rng.normal(0.0, LESION_TEXTURE_SIGMA, n_les)

    scalar = ScalarVolume(data.astype(np.float32), spacing)
    lung = LabelVolume(lung_mask.astype(np.uint8) * LABEL_LUNG, spacing)
    lesion = LabelVolume(lesion_mask.astype(np.uint8) * LABEL_LESION, spacing)
    return SyntheticCase(case_id=case_id, scalar=scalar, lung_mask=lung,
                         lesion_mask=lesion, label=int(positive),
                         blob_centers=tuple(centers), blob_radii=tuple(radii))


def generate_synthetic_dataset(n_cases: int, seed: int, *,
                               pos_fraction: float = 0.5,
                               shape: tuple[int, int, int] = (64, 64, 36),
                               spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
                               ) -> list[SyntheticCase]:
    """Generate a labelled phantom dataset, deterministic for a given seed.

    Positive/negative counts honour ``pos_fraction`` exactly (positives =
    round(n * fraction)); case order is a seeded shuffle.
    """
    if n_cases < 2:
        raise ValueError("need at least 2 cases")
    rng = np.random.default_rng(seed)
    n_pos = int(round(n_cases * pos_fraction))
    flags = np.array([True] * n_pos + [False] * (n_cases - n_pos))
    flags = flags[rng.permutation(n_cases)]
    return [_make_case(f"case{i:04d}", bool(flags[i]), rng, shape, spacing)
            for i in range(n_cases)]


def write_dataset(cases: list[SyntheticCase], out_dir: str | Path) -> Path:
    """Write volumes, masks, per-case manifests, and an index file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for case in cases:
        cdir = out / case.case_id
        cdir.mkdir(exist_ok=True)
        write_nifti_file(case.scalar, cdir / "scalar.nii")
        write_nifti_file(case.lung_mask, cdir / "lung.nii")
        write_nifti_file(case.lesion_mask, cdir / "lesion.nii")
        manifest = {
            "id": case.case_id,
            "scalar": "scalar.nii",
            "lung_mask": "lung.nii",
            "lesion_mask": "lesion.nii",
            "metadata": {"source": "synthetic phantom", "label": str(case.label)},
        }
        with open(cdir / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=1)
        index.append({"id": case.case_id,
                      "manifest": f"{case.case_id}/manifest.json",
                      "label": case.label})
    with open(out / "index.json", "w") as f:
        json.dump({"cases": index}, f, indent=1)
    return out / "index.json"
