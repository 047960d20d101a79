"""Software multi-label volume raycaster, masked MIP, contour extraction,
and 2D overlay composition.

The raycaster is an emission-absorption compositor: per-label piecewise
linear transfer functions, front-to-back alpha blending with step-size
opacity correction, early termination, and a fractional clip box. Scalars
are sampled trilinearly, labels nearest-neighbour. Everything is pure
numpy and deterministic.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image
from skimage import measure as _skmeasure

from .errors import GeometryError
from .volume import (LABEL_LESION, LABEL_LUNG, LabelVolume, ScalarVolume,
                     SliceImage, extract_slice)

EARLY_TERMINATION_ALPHA = 0.995
OUTLINE_BASE_ALPHA = 0.02
OUTLINE_GRADIENT_GAIN = 0.35


# --------------------------------------------------------------------- types

@dataclass(frozen=True)
class TransferFunction:
    """Piecewise-linear scalar -> RGBA map with interactive offset and
    global opacity scale."""

    points: tuple[tuple[float, float, float, float, float], ...]
    offset: float = 0.0
    opacity_scale: float = 1.0

    def __post_init__(self):
        pts = tuple(tuple(float(v) for v in p) for p in self.points)
        if not pts:
            raise ValueError("transfer function needs at least one point")
        xs = [p[0] for p in pts]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("control-point scalars must be strictly increasing")
        for p in pts:
            if any(not 0.0 <= v <= 1.0 for v in p[1:]):
                raise ValueError("colors and alpha must lie in [0, 1]")
        if not 0.0 <= self.opacity_scale <= 1.0:
            raise ValueError("opacity scale must lie in [0, 1]")
        object.__setattr__(self, "points", pts)


def tf_eval(tf: TransferFunction, scalars) -> np.ndarray:
    """Evaluate the transfer function at (scalar - offset); clamped to the
    end control points, alpha multiplied by the opacity scale."""
    s = np.asarray(scalars, dtype=np.float64) - tf.offset
    xs = np.array([p[0] for p in tf.points])
    out = np.empty(s.shape + (4,), dtype=np.float64)
    for ch in range(4):
        ys = np.array([p[1 + ch] for p in tf.points])
        out[..., ch] = np.interp(s, xs, ys)
    out[..., 3] *= tf.opacity_scale
    return out


@dataclass(frozen=True)
class Camera:
    center: tuple[float, float, float]
    azimuth_deg: float = 30.0
    elevation_deg: float = 20.0
    distance_mm: float = 300.0
    projection: str = "perspective"  # or "orthographic"
    fov_deg: float = 45.0
    ortho_height_mm: float = 200.0

    def __post_init__(self):
        if self.distance_mm <= 0:
            raise ValueError("camera distance must be positive")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov must be in (0, 180)")
        if self.projection not in ("perspective", "orthographic"):
            raise ValueError(f"unknown projection {self.projection!r}")


@dataclass(frozen=True)
class ClipBox:
    """Per-axis (min, max) fractions of the volume extent."""

    x: tuple[float, float] = (0.0, 1.0)
    y: tuple[float, float] = (0.0, 1.0)
    z: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for lo, hi in (self.x, self.y, self.z):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"clip fractions must satisfy 0 <= min <= max <= 1, got ({lo}, {hi})")


@dataclass(frozen=True)
class LabelStyle:
    visible: bool = True
    tf: TransferFunction = None  # type: ignore[assignment]


@dataclass(frozen=True)
class RenderSettings:
    labels: Mapping[int, LabelStyle]
    width: int = 256
    height: int = 256
    background: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)
    step_factor: float = 0.5
    lung_outline: bool = False

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if self.step_factor <= 0:
            raise ValueError("step factor must be positive")
        object.__setattr__(self, "labels", dict(self.labels))


# ------------------------------------------------------------------- presets

PRESET_TRANSFER_FUNCTIONS: dict[str, TransferFunction] = {
    "lung-air": TransferFunction(points=(
        (-1000.0, 0.45, 0.6, 0.9, 0.0),
        (-850.0, 0.5, 0.7, 1.0, 0.05),
        (-500.0, 0.75, 0.85, 0.95, 0.12),
        (-100.0, 1.0, 1.0, 1.0, 0.35),
    )),
    "vessel": TransferFunction(points=(
        (-400.0, 0.9, 0.35, 0.2, 0.0),
        (-50.0, 0.95, 0.45, 0.3, 0.3),
        (250.0, 1.0, 0.6, 0.45, 0.85),
    )),
    "lesion-red": TransferFunction(points=(
        (-750.0, 1.0, 0.15, 0.1, 0.0),
        (-450.0, 1.0, 0.2, 0.1, 0.5),
        (-200.0, 1.0, 0.35, 0.2, 0.8),
    )),
    "context-fat": TransferFunction(points=(
        (-250.0, 0.9, 0.75, 0.4, 0.0),
        (-60.0, 0.95, 0.8, 0.5, 0.25),
        (50.0, 0.85, 0.55, 0.45, 0.12),
        (300.0, 1.0, 0.95, 0.85, 0.6),
    )),
    "outline": TransferFunction(points=(
        (-1100.0, 1.0, 1.0, 1.0, 0.02),
        (400.0, 1.0, 1.0, 1.0, 0.02),
    )),
}

DEFAULT_LABEL_PRESETS = {0: "context-fat", 1: "lung-air", 2: "lesion-red"}


def default_settings(width: int = 256, height: int = 256) -> RenderSettings:
    labels = {lab: LabelStyle(visible=True,
                              tf=PRESET_TRANSFER_FUNCTIONS[name])
              for lab, name in DEFAULT_LABEL_PRESETS.items()}
    return RenderSettings(labels=labels, width=width, height=height)


def save_preset(tf: TransferFunction, name: str, directory: str | Path) -> Path:
    path = Path(directory) / f"{name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"name": name, "points": [list(p) for p in tf.points]}
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_presets(directory: str | Path | None) -> dict[str, TransferFunction]:
    """Built-in presets plus every saved preset found in the directory."""
    presets = dict(PRESET_TRANSFER_FUNCTIONS)
    if directory is not None and Path(directory).is_dir():
        for path in sorted(Path(directory).glob("*.json")):
            doc = json.loads(path.read_text())
            presets[doc["name"]] = TransferFunction(
                points=tuple(tuple(p) for p in doc["points"]))
    return presets


# ------------------------------------------------------------------ raycast

def _camera_basis(camera: Camera):
    az = math.radians(camera.azimuth_deg)
    el = math.radians(camera.elevation_deg)
    outward = np.array([math.cos(el) * math.cos(az),
                        math.cos(el) * math.sin(az),
                        math.sin(el)])
    view = -outward
    eye = np.asarray(camera.center, dtype=np.float64) + camera.distance_mm * outward
    up_hint = np.array([0.0, 0.0, 1.0]) if abs(view[2]) < 0.999 else np.array([0.0, 1.0, 0.0])
    right = np.cross(view, up_hint)
    right /= np.linalg.norm(right)
    up = np.cross(right, view)
    return eye, view, right, up


def _camera_rays(camera: Camera, width: int, height: int):
    eye, view, right, up = _camera_basis(camera)
    cols = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    rows = 1.0 - (np.arange(height) + 0.5) / height * 2.0
    u = np.tile(cols, height)
    v = np.repeat(rows, width)
    aspect = width / height
    if camera.projection == "orthographic":
        half_h = camera.ortho_height_mm / 2.0
        origins = (eye[None, :]
                   + u[:, None] * (half_h * aspect) * right[None, :]
                   + v[:, None] * half_h * up[None, :])
        dirs = np.broadcast_to(view, origins.shape).copy()
    else:
        t = math.tan(math.radians(camera.fov_deg) / 2.0)
        dirs = (view[None, :]
                + u[:, None] * (t * aspect) * right[None, :]
                + v[:, None] * t * up[None, :])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(eye, dirs.shape).copy()
    return origins, dirs


def _ray_box(origins, dirs, lo, hi):
    d = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t1 = (lo[None, :] - origins) / d
    t2 = (hi[None, :] - origins) / d
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    t0 = np.maximum(tmin, 0.0)
    return t0, tmax


def _sample_trilinear(data: np.ndarray, p: np.ndarray) -> np.ndarray:
    dims = np.array(data.shape)
    c = np.clip(p, 0.0, dims - 1.0)
    i0 = np.floor(c).astype(int)
    f = c - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1, y1, z1 = i1[:, 0], i1[:, 1], i1[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    return (data[x0, y0, z0] * (1 - fx) * (1 - fy) * (1 - fz)
            + data[x1, y0, z0] * fx * (1 - fy) * (1 - fz)
            + data[x0, y1, z0] * (1 - fx) * fy * (1 - fz)
            + data[x0, y0, z1] * (1 - fx) * (1 - fy) * fz
            + data[x1, y1, z0] * fx * fy * (1 - fz)
            + data[x1, y0, z1] * fx * (1 - fy) * fz
            + data[x0, y1, z1] * (1 - fx) * fy * fz
            + data[x1, y1, z1] * fx * fy * fz)


def _sample_nearest(labels: np.ndarray, p: np.ndarray) -> np.ndarray:
    dims = np.array(labels.shape)
    i = np.clip(np.floor(p + 0.5).astype(int), 0, dims - 1)
    return labels[i[:, 0], i[:, 1], i[:, 2]]


def _gradient_magnitude(data: np.ndarray) -> np.ndarray:
    gx, gy, gz = np.gradient(data.astype(np.float64))
    g = np.sqrt(gx * gx + gy * gy + gz * gz)
    peak = g.max()
    return (g / peak).astype(np.float32) if peak > 0 else g.astype(np.float32)


def raycast(vol: ScalarVolume, labels: LabelVolume | None, camera: Camera,
            clip: ClipBox, settings: RenderSettings) -> np.ndarray:
    """Render the scene to an (H, W, 4) uint8 RGBA image."""
    if labels is not None and labels.dims != vol.dims:
        raise GeometryError("scalar and label volumes are not co-registered")
    spacing = np.asarray(vol.spacing)
    origin = np.asarray(vol.origin)
    dims = np.asarray(vol.dims)
    vol_lo = origin - 0.5 * spacing
    vol_hi = origin + (dims - 0.5) * spacing
    extent = vol_hi - vol_lo
    frac = np.array([clip.x, clip.y, clip.z])
    box_lo = vol_lo + frac[:, 0] * extent
    box_hi = vol_lo + frac[:, 1] * extent

    h, w = settings.height, settings.width
    origins, dirs = _camera_rays(camera, w, h)
    n = h * w
    accum_rgb = np.zeros((n, 3))
    accum_a = np.zeros(n)

    degenerate = bool(np.any(box_hi - box_lo <= 0))
    if not degenerate:
        t0, t1 = _ray_box(origins, dirs, box_lo, box_hi)
        active = t1 > t0
        step = settings.step_factor * float(spacing.min())
        ref = float(spacing.min())
        gradmag = (_gradient_magnitude(vol.data)
                   if settings.lung_outline and labels is not None else None)
        label_data = labels.labels if labels is not None else None

        max_steps = int(np.ceil((t1[active] - t0[active]).max() / step)) if active.any() else 0
        for i in range(max_steps):
            t = t0 + (i + 0.5) * step
            live = active & (t < t1)
            if not live.any():
                break
            idx = np.flatnonzero(live)
            p_world = origins[idx] + t[idx, None] * dirs[idx]
            p_vox = (p_world - origin[None, :]) / spacing[None, :]
            scal = _sample_trilinear(vol.data, p_vox)
            lab = (_sample_nearest(label_data, p_vox) if label_data is not None
                   else np.zeros(len(idx), dtype=np.uint8))
            rgba = np.zeros((len(idx), 4))
            for label_id, style in settings.labels.items():
                if not style.visible or style.tf is None:
                    continue
                m = lab == label_id
                if not m.any():
                    continue
                if settings.lung_outline and label_id == LABEL_LUNG and gradmag is not None:
                    g = _sample_trilinear(gradmag, p_vox[m])
                    col = np.empty((int(m.sum()), 4))
                    col[:, :3] = 1.0
                    col[:, 3] = np.clip(OUTLINE_BASE_ALPHA
                                        + OUTLINE_GRADIENT_GAIN * g, 0.0, 1.0)
                    col[:, 3] *= style.tf.opacity_scale
                    rgba[m] = col
                else:
                    rgba[m] = tf_eval(style.tf, scal[m])
            alpha = 1.0 - np.power(1.0 - rgba[:, 3], step / ref)
            contrib = (1.0 - accum_a[idx]) * alpha
            accum_rgb[idx] += contrib[:, None] * rgba[:, :3]
            accum_a[idx] += contrib
            finished = accum_a[idx] >= EARLY_TERMINATION_ALPHA
            if finished.any():
                active[idx[finished]] = False

    bg = np.asarray(settings.background, dtype=np.float64)
    out_a = accum_a + (1.0 - accum_a) * bg[3]
    out_rgb = accum_rgb + ((1.0 - accum_a) * bg[3])[:, None] * bg[None, :3]
    safe = out_a > 0
    straight = np.zeros_like(out_rgb)
    straight[safe] = out_rgb[safe] / out_a[safe, None]
    img = np.concatenate([straight, out_a[:, None]], axis=1)
    img8 = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return img8.reshape(h, w, 4)


# ---------------------------------------------------------------------- MIP

def mip_project(vol: ScalarVolume, lungmask: LabelVolume, axis: str,
                center_index: int, half_width: int) -> np.ndarray:
    """Per-pixel maximum over a slab of slices, restricted to lung voxels.

    Pixels whose slab column contains no lung voxel take the volume
    minimum, so window/level maps them to the darkest gray.
    """
    if lungmask.dims != vol.dims:
        raise GeometryError("volume and mask are not co-registered")
    if half_width < 0:
        raise ValueError("half width must be >= 0")
    axis_dim = {"axial": 2, "coronal": 1, "sagittal": 0}[axis]
    n = vol.dims[axis_dim]
    lo = center_index - half_width
    hi = center_index + half_width
    if hi < 0 or lo > n - 1:
        raise GeometryError(f"slab [{lo}, {hi}] lies outside the volume")
    lo = max(lo, 0)
    hi = min(hi, n - 1)

    sel = [slice(None)] * 3
    sel[axis_dim] = slice(lo, hi + 1)
    data = vol.data[tuple(sel)].astype(np.float64)
    masked = np.where(lungmask.labels[tuple(sel)] >= LABEL_LUNG, data, -np.inf)
    proj = masked.max(axis=axis_dim)
    proj = np.where(np.isneginf(proj), float(vol.data.min()), proj)
    return np.ascontiguousarray(proj.T)


# ------------------------------------------------------------------ contours

def _point_in_polygon(pt: np.ndarray, loop: np.ndarray) -> bool:
    """Even-odd rule; loop is (N, 2) closed (first == last)."""
    x, y = pt
    inside = False
    for (x1, y1), (x2, y2) in zip(loop[:-1], loop[1:]):
        if (y1 > y) != (y2 > y):
            t = (y - y1) / (y2 - y1)
            if x < x1 + t * (x2 - x1):
                inside = not inside
    return inside


def _signed_area(loop: np.ndarray) -> float:
    x, y = loop[:-1, 0], loop[:-1, 1]
    xn, yn = loop[1:, 0], loop[1:, 1]
    return 0.5 * float(np.sum(x * yn - xn * y))


def mask_contours(label_slice: np.ndarray, label: int) -> list[np.ndarray]:
    """Closed iso-0.5 boundary polylines of one label in a 2D slice.

    Points are (x, y) pixel coordinates; every loop repeats its first
    point at the end. Exterior loops wind counter-clockwise, holes
    clockwise.
    """
    binary = (np.asarray(label_slice) == label).astype(np.float64)
    if not binary.any():
        return []
    padded = np.pad(binary, 1)
    raw = _skmeasure.find_contours(padded, 0.5)
    loops = []
    for contour in raw:
        pts = contour[:, ::-1] - 1.0  # (row, col) -> (x, y), undo padding
        if not np.array_equal(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[:1]])
        loops.append(pts)
    # orientation: nesting depth even -> exterior -> CCW (positive area)
    out = []
    for i, loop in enumerate(loops):
        depth = sum(1 for j, other in enumerate(loops) if j != i
                    and _point_in_polygon(loop[0], other))
        area = _signed_area(loop)
        want_ccw = depth % 2 == 0
        if (area > 0) != want_ccw:
            loop = loop[::-1]
        out.append(loop)
    return out


# ------------------------------------------------------------------ overlays

CONTOUR_COLORS = {"lung": (0, 255, 0), "lesion": (255, 0, 0)}


def _heat_color(v: np.ndarray) -> np.ndarray:
    """Blue -> red ramp over [0, 1]."""
    v = np.clip(v, 0.0, 1.0)
    return np.stack([v, np.zeros_like(v), 1.0 - v], axis=-1)


HEATMAP_COLORMAPS = {"blue-red": _heat_color}


def _draw_line(px: np.ndarray, p0, p1, color) -> None:
    x0, y0 = int(round(p0[0])), int(round(p0[1]))
    x1, y1 = int(round(p1[0])), int(round(p1[1]))
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    h, w = px.shape[:2]
    while True:
        if 0 <= y0 < h and 0 <= x0 < w:
            px[y0, x0, :3] = color
            px[y0, x0, 3] = 255
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def compose_overlay(base: SliceImage, contours: Mapping[str, Sequence[np.ndarray]],
                    heatmap: np.ndarray | None = None, heatmap_alpha: float = 0.5,
                    colormap: str = "blue-red", threshold: float = 0.0) -> SliceImage:
    """Blend an activation heatmap over a grayscale slice and draw mask
    outlines on top (lung green, lesion red, 1 px wide)."""
    gray = base.pixels
    if gray.ndim != 2:
        raise ValueError("base slice must be grayscale")
    h, w = gray.shape
    out = np.empty((h, w, 4), dtype=np.uint8)
    out[..., 0] = out[..., 1] = out[..., 2] = gray
    out[..., 3] = 255

    if heatmap is not None and heatmap_alpha > 0.0:
        hm = np.asarray(heatmap, dtype=np.float64)
        if hm.shape != (h, w):
            raise GeometryError(f"heatmap {hm.shape} does not match slice {(h, w)}")
        drawn = hm > threshold
        if drawn.any():
            color = HEATMAP_COLORMAPS[colormap](hm[drawn]) * 255.0
            blended = ((1.0 - heatmap_alpha) * out[drawn][:, :3].astype(np.float64)
                       + heatmap_alpha * color)
            out[drawn, :3] = np.floor(blended + 0.5).astype(np.uint8)

    for kind, loops in contours.items():
        color = CONTOUR_COLORS[kind]
        for loop in loops:
            for p0, p1 in zip(loop[:-1], loop[1:]):
                _draw_line(out, p0, p1, color)
    return SliceImage(out, axis=base.axis, index=base.index, spacing=base.spacing)


# ---------------------------------------------------------------------- PNG

def encode_png(pixels: np.ndarray) -> bytes:
    """8-bit non-interlaced PNG bytes for (H, W) gray or (H, W, 4) RGBA."""
    arr = np.ascontiguousarray(pixels)
    mode = "L" if arr.ndim == 2 else "RGBA"
    img = Image.fromarray(arr, mode=mode)
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()
