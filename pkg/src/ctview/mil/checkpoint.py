"""Binary model checkpoints.

Layout: magic ``MILM``, little-endian u32 format version, feature dim,
attention dim, block count, per-block conv widths, then the parameter
tensors as raw little-endian float64 in canonical order (shapes are fully
determined by the architecture fields).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ModelError
from .model import MilModel, ModelConfig, param_names

MAGIC = b"MILM"
FORMAT_VERSION = 1


def save_model(model: MilModel) -> bytes:
    cfg = model.config
    widths = cfg.conv_widths
    head = struct.pack("<4sIIII", MAGIC, FORMAT_VERSION, cfg.feature_dim,
                       cfg.attention_dim, len(widths))
    head += struct.pack(f"<{len(widths)}I", *widths)
    body = b"".join(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes()
                    for name in param_names(cfg))
    return head + body


def load_model(blob: bytes) -> MilModel:
    if blob[:4] != MAGIC:
        raise ModelError(f"bad checkpoint magic {blob[:4]!r}")
    _, version, feature_dim, attention_dim, n_blocks = struct.unpack_from("<4sIIII", blob, 0)
    if version != FORMAT_VERSION:
        raise ModelError(f"checkpoint format version {version} not supported "
                         f"(expected {FORMAT_VERSION})")
    offset = 20
    widths = struct.unpack_from(f"<{n_blocks}I", blob, offset)
    offset += 4 * n_blocks
    cfg = ModelConfig(conv_widths=tuple(widths), attention_dim=attention_dim)
    if cfg.feature_dim != feature_dim:
        raise ModelError("checkpoint feature dim inconsistent with widths")

    shapes = _param_shapes(cfg)
    params: dict[str, np.ndarray] = {}
    for name in param_names(cfg):
        shape = shapes[name]
        count = int(np.prod(shape))
        need = offset + count * 8
        if len(blob) < need:
            raise ModelError("checkpoint truncated")
        params[name] = np.frombuffer(blob, dtype="<f8", count=count,
                                     offset=offset).reshape(shape).copy()
        offset += count * 8
    return MilModel(cfg, params)


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    c_in = 1
    for i, width in enumerate(cfg.conv_widths):
        shapes[f"conv{i}_w"] = (width, c_in, 3, 3)
        shapes[f"conv{i}_b"] = (width,)
        c_in = width
    D, L = cfg.feature_dim, cfg.attention_dim
    shapes["attn_V"] = (L, D)
    shapes["attn_w"] = (L,)
    shapes["head_w"] = (2, D)
    shapes["head_b"] = (2,)
    return shapes


def save_model_file(model: MilModel, path: str | Path) -> None:
    Path(path).write_bytes(save_model(model))


def load_model_file(path: str | Path) -> MilModel:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise ModelError(f"cannot read checkpoint: {e}") from e
    return load_model(blob)
