"""Volume/slice data model, geometry transforms, resampling, and the
classifier preprocessing chain.

Conventions used throughout the package:

* volumes are stored as ``(nx, ny, nz)`` arrays; x = patient left-right,
  y = anterior-posterior, z = inferior-superior
* axial slices are (x, y) planes, coronal (x, z), sagittal (y, z)
* 2D slice arrays are indexed ``[row, col]`` with the first remaining
  volume axis as columns (axial -> ``[y, x]``, coronal -> ``[z, x]``,
  sagittal -> ``[z, y]``)
* scalar data is float32 HU, label data uint8 with 0=context, 1=lung,
  2=lesion
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyRegionError, GeometryError

AXES = ("axial", "coronal", "sagittal")
# volume axis held fixed when slicing along each view axis
_FIXED_AXIS = {"axial": 2, "coronal": 1, "sagittal": 0}

LABEL_CONTEXT = 0
LABEL_LUNG = 1
LABEL_LESION = 2

# HU clip window applied before normalising classifier input to [0, 1]
CLASSIFIER_CLIP_HU = (-1250.0, 250.0)
CLASSIFIER_SLICE_SIZE = 224


def _check_grid(dims, spacing, origin):
    if len(dims) != 3 or any(int(d) < 1 for d in dims):
        raise ValueError(f"dims must be three positive counts, got {dims}")
    if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise ValueError(f"spacing must be three positive mm values, got {spacing}")
    if len(origin) != 3 or any(not np.isfinite(o) for o in origin):
        raise ValueError(f"origin must be three finite mm values, got {origin}")


@dataclass(frozen=True)
class ScalarVolume:
    """3D grid of CT intensities (HU) with voxel spacing and world origin."""

    data: np.ndarray  # (nx, ny, nz) float32
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"scalar data must be 3D, got shape {data.shape}")
        _check_grid(data.shape, self.spacing, self.origin)
        if not np.isfinite(data).all():
            raise ValueError("scalar data contains non-finite values")
        data = data.astype(np.float32, copy=False)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class LabelVolume:
    """Segmentation labels co-registered with a ScalarVolume."""

    labels: np.ndarray  # (nx, ny, nz) uint8 in {0, 1, 2}
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"label data must be 3D, got shape {labels.shape}")
        _check_grid(labels.shape, self.spacing, self.origin)
        if labels.size and labels.max() > LABEL_LESION:
            raise ValueError("labels must be in {0, 1, 2}")
        labels = labels.astype(np.uint8, copy=False)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape


def same_geometry(a: ScalarVolume | LabelVolume, b: ScalarVolume | LabelVolume,
                  tol: float = 1e-6) -> bool:
    return (a.dims == b.dims
            and all(abs(x - y) <= tol for x, y in zip(a.spacing, b.spacing))
            and all(abs(x - y) <= tol for x, y in zip(a.origin, b.origin)))


@dataclass(frozen=True)
class WindowLevel:
    """Linear HU-to-gray display window."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"window requires lo < hi, got ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class SliceImage:
    """An 8-bit image extracted from a volume, grayscale or RGBA."""

    pixels: np.ndarray  # (H, W) or (H, W, 4) uint8
    axis: str
    index: int
    spacing: tuple[float, float]  # (col mm, row mm)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] != 4):
            raise ValueError(f"pixels must be (H, W) or (H, W, 4), got {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BoundingBox:
    """Per-axis inclusive voxel index ranges."""

    x: tuple[int, int]
    y: tuple[int, int]
    z: tuple[int, int]

    def __post_init__(self):
        for lo, hi in (self.x, self.y, self.z):
            if lo < 0 or lo > hi:
                raise ValueError(f"invalid bounding box range ({lo}, {hi})")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.x[1] - self.x[0] + 1,
                self.y[1] - self.y[0] + 1,
                self.z[1] - self.z[0] + 1)

    def slices(self) -> tuple[slice, slice, slice]:
        return (slice(self.x[0], self.x[1] + 1),
                slice(self.y[0], self.y[1] + 1),
                slice(self.z[0], self.z[1] + 1))


# ---------------------------------------------------------------------------
# resampling

def _resample_positions(nz: int, sz_old: float, sz_new: float):
    span = (nz - 1) * sz_old
    new_nz = int(np.floor(span / sz_new + 1e-9)) + 1
    idx = np.arange(new_nz) * (sz_new / sz_old)
    i0 = np.clip(np.floor(idx).astype(int), 0, nz - 1)
    frac = idx - i0
    i1 = np.minimum(i0 + 1, nz - 1)
    return i0, i1, frac


def resample_z(vol: ScalarVolume | LabelVolume, target_sz: float):
    """Resample along z to the given spacing; linear for scalars, nearest
    for labels. In-plane geometry is untouched."""
    if not np.isfinite(target_sz) or target_sz <= 0:
        raise ValueError(f"target z spacing must be positive, got {target_sz}")
    sz_old = vol.spacing[2]
    if sz_old == target_sz:
        return vol

    if isinstance(vol, LabelVolume):
        nz = vol.dims[2]
        i0, i1, frac = _resample_positions(nz, sz_old, target_sz)
        nearest = np.where(frac < 0.5, i0, i1)
        out = vol.labels[:, :, nearest]
        return LabelVolume(out, (vol.spacing[0], vol.spacing[1], float(target_sz)),
                           vol.origin)

    nz = vol.dims[2]
    i0, i1, frac = _resample_positions(nz, sz_old, target_sz)
    lo = vol.data[:, :, i0].astype(np.float64)
    hi = vol.data[:, :, i1].astype(np.float64)
    out = lo * (1.0 - frac) + hi * frac
    exact = frac == 0.0  # keep grid-aligned slices bit-exact
    if exact.any():
        out[:, :, exact] = vol.data[:, :, i0[exact]]
    return ScalarVolume(out.astype(np.float32),
                        (vol.spacing[0], vol.spacing[1], float(target_sz)),
                        vol.origin)


# ---------------------------------------------------------------------------
# slicing and display mapping

def extract_slice(vol: ScalarVolume | LabelVolume, axis: str, index: int) -> np.ndarray:
    """Copy one orthogonal plane out of a volume (no interpolation)."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    data = vol.data if isinstance(vol, ScalarVolume) else vol.labels
    fixed = _FIXED_AXIS[axis]
    if not 0 <= index < data.shape[fixed]:
        raise IndexError(f"{axis} index {index} out of range [0, {data.shape[fixed]})")
    if axis == "axial":
        plane = data[:, :, index]
    elif axis == "coronal":
        plane = data[:, index, :]
    else:
        plane = data[index, :, :]
    return np.ascontiguousarray(plane.T)


def slice_spacing(vol: ScalarVolume | LabelVolume, axis: str) -> tuple[float, float]:
    """In-plane (col mm, row mm) spacing for slices along the given axis."""
    sx, sy, sz = vol.spacing
    if axis == "axial":
        return (sx, sy)
    if axis == "coronal":
        return (sx, sz)
    if axis == "sagittal":
        return (sy, sz)
    raise ValueError(f"axis must be one of {AXES}, got {axis!r}")


def apply_window_level(plane: np.ndarray, wl: WindowLevel, *, axis: str = "axial",
                       index: int = 0, spacing: tuple[float, float] = (1.0, 1.0)) -> SliceImage:
    """Map scalars through the display window to 8-bit gray.

    Values at or below ``lo`` map to 0, at or above ``hi`` to 255, linear
    in between with round-half-away-from-zero.
    """
    v = np.asarray(plane, dtype=np.float64)
    scaled = 255.0 * (v - wl.lo) / (wl.hi - wl.lo)
    gray = np.floor(np.clip(scaled, 0.0, 255.0) + 0.5)
    gray = np.clip(gray, 0, 255).astype(np.uint8)
    return SliceImage(gray, axis=axis, index=index, spacing=spacing)


# ---------------------------------------------------------------------------
# bounding boxes and classifier preprocessing

def mask_bounding_box(mask: LabelVolume, label: int) -> BoundingBox:
    """Tightest box containing all voxels of the given label."""
    if label not in (LABEL_LUNG, LABEL_LESION):
        raise ValueError(f"label must be 1 (lung) or 2 (lesion), got {label}")
    return _region_bbox(mask.labels == label)


def _region_bbox(region: np.ndarray) -> BoundingBox:
    idx = np.nonzero(region)
    if idx[0].size == 0:
        raise EmptyRegionError("region is empty")
    return BoundingBox(x=(int(idx[0].min()), int(idx[0].max())),
                       y=(int(idx[1].min()), int(idx[1].max())),
                       z=(int(idx[2].min()), int(idx[2].max())))


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize with edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    return (img[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
            + img[np.ix_(y1, x0)] * fy * (1 - fx)
            + img[np.ix_(y0, x1)] * (1 - fy) * fx
            + img[np.ix_(y1, x1)] * fy * fx)


@dataclass(frozen=True)
class ClassifierInput:
    """Preprocessed bag tensor plus the geometry needed to map per-slice
    heatmaps back into volume space."""

    bag: np.ndarray          # (K, S, S) float64 in [0, 1]
    bbox: BoundingBox        # lung region box in the 1mm-resampled volume
    pad: tuple[tuple[int, int], tuple[int, int]]  # ((x before, after), (y ...))
    side: int                # square side length before the final resize
    volume_dims: tuple[int, int, int]      # geometry of the 1mm-resampled volume
    volume_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    volume_origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def num_slices(self) -> int:
        return self.bag.shape[0]


def prepare_classifier_input(vol: ScalarVolume, lungmask: LabelVolume,
                             out_size: int = CLASSIFIER_SLICE_SIZE) -> ClassifierInput:
    """Build the classifier's bag tensor from a volume and its lung mask.

    Steps: resample both to 1mm z spacing, blank everything outside the
    lung region, crop to the region's bounding box, pad to square, clip to
    the HU window, normalise to [0, 1], and resize every slice.
    """
    if not same_geometry(vol, lungmask):
        raise GeometryError("volume and lung mask are not co-registered")
    vol = resample_z(vol, 1.0)
    lungmask = resample_z(lungmask, 1.0)

    region = lungmask.labels >= LABEL_LUNG
    if not region.any():
        raise EmptyRegionError("lung mask is empty")
    bbox = _region_bbox(region)

    clip_lo, clip_hi = CLASSIFIER_CLIP_HU
    data = vol.data.astype(np.float64)
    data[~region] = clip_lo

    sl = bbox.slices()
    cropped = data[sl]
    bx, by, bz = cropped.shape
    side = max(bx, by)
    px = side - bx
    py = side - by
    pad = ((px // 2, px - px // 2), (py // 2, py - py // 2))
    padded = np.pad(cropped, (pad[0], pad[1], (0, 0)),
                    mode="constant", constant_values=clip_lo)

    normed = (np.clip(padded, clip_lo, clip_hi) - clip_lo) / (clip_hi - clip_lo)

    bag = np.empty((bz, out_size, out_size), dtype=np.float64)
    for k in range(bz):
        # slice arrays are [row=y, col=x]
        bag[k] = bilinear_resize(normed[:, :, k].T, out_size, out_size)
    return ClassifierInput(bag=bag, bbox=bbox, pad=pad, side=side,
                           volume_dims=vol.dims, volume_spacing=vol.spacing,
                           volume_origin=vol.origin)


def heatmap_to_volume(maps: np.ndarray, geom: ClassifierInput) -> ScalarVolume:
    """Place per-slice heatmaps back into the geometry of the 1mm volume.

    Inverts the pad/resize of :func:`prepare_classifier_input`; voxels
    outside the lung bounding box are zero.
    """
    if maps.shape[0] != geom.num_slices:
        raise GeometryError("heatmap slice count does not match the bag")
    nx, ny, nz = geom.volume_dims
    out = np.zeros((nx, ny, nz), dtype=np.float64)
    bx, by, bz = geom.bbox.shape
    (px0, _), (py0, _) = geom.pad
    sl = geom.bbox.slices()
    for k in range(bz):
        square = bilinear_resize(maps[k], geom.side, geom.side)
        plane = square[py0:py0 + by, px0:px0 + bx]  # [y, x] -> crop pad
        out[sl[0], sl[1], geom.bbox.z[0] + k] = plane.T
    return ScalarVolume(np.clip(out, 0.0, 1.0).astype(np.float32),
                        spacing=geom.volume_spacing, origin=geom.volume_origin)


# ---------------------------------------------------------------------------
# voxel/world transforms

def voxel_to_world(vol: ScalarVolume | LabelVolume, point: Sequence[float]) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64)
    return np.asarray(vol.origin) + p * np.asarray(vol.spacing)


def world_to_voxel(vol: ScalarVolume | LabelVolume, point: Sequence[float]) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64)
    return (p - np.asarray(vol.origin)) / np.asarray(vol.spacing)
