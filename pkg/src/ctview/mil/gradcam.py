"""Class-activation heatmaps for the bag classifier.

Per slice, channel weights are the spatial mean of the positive-class
logit's gradient at the last conv block's post-ReLU activations, with the
gradient flowing through the attention pooling (both through the pooled
vector and through the weights themselves). The weighted activation sum is
rectified, upsampled to slice size, and the whole stack is normalised by
its global maximum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from ..volume import bilinear_resize
from .model import MilModel

ATTENTION_SUM_TOL = 1e-9


@dataclass(frozen=True)
class PredictionResult:
    probs: np.ndarray           # (2,) [negative, positive]
    attention: np.ndarray       # (K,)
    heatmaps: np.ndarray | None  # (K, H, W) in [0, 1]

    def __post_init__(self):
        if abs(float(self.probs.sum()) - 1.0) > ATTENTION_SUM_TOL:
            raise ValueError("class probabilities must sum to 1")
        if abs(float(self.attention.sum()) - 1.0) > ATTENTION_SUM_TOL:
            raise ValueError("attention weights must sum to 1")
        if np.any(self.attention < 0):
            raise ValueError("attention weights must be non-negative")


def _slice_activation_grad(model: MilModel, dh: np.ndarray, bag_slice: np.ndarray):
    """Forward one slice keeping the last block's activations, then push the
    feature gradient back to those activations (post-ReLU, pre-pool)."""
    x = bag_slice[None, None, :, :].astype(np.float64, copy=False)
    pooled, _, last_A, last_idx = model._blocks_forward(x, False)
    _, gap_shape = nn.gap_forward(pooled)
    dpooled = nn.gap_backward(dh[None, :], gap_shape)
    dA = nn.maxpool2x2_backward(dpooled, last_idx, last_A.shape)
    return last_A[0], dA[0]


def predict_with_heatmap(bag: np.ndarray, model: MilModel,
                         want_heatmaps: bool = True) -> PredictionResult:
    """Probabilities, attention weights, and per-slice activation maps."""
    bag = np.asarray(bag, dtype=np.float64)
    fwd = model.forward_bag(bag)
    if not want_heatmaps:
        return PredictionResult(probs=fwd.probs, attention=fwd.attention,
                                heatmaps=None)

    # gradient of the positive-class logit with respect to the features,
    # through both the pooled vector and the attention weights
    dz = model.params["head_w"][1]
    dH, _, _ = nn.attention_backward(dz, None, fwd.features,
                                     model.params["attn_V"],
                                     model.params["attn_w"], fwd.attn_cache)

    K, H, W = bag.shape
    maps = np.empty((K, H, W), dtype=np.float64)
    for k in range(K):
        A, dA = _slice_activation_grad(model, dH[k], bag[k])
        alpha = dA.mean(axis=(1, 2))                 # (C,)
        cam = np.maximum(np.einsum("c,chw->hw", alpha, A), 0.0)
        maps[k] = bilinear_resize(cam, H, W)

    peak = maps.max()
    if peak > 0:
        maps = maps / peak
    maps = np.clip(maps, 0.0, 1.0)
    return PredictionResult(probs=fwd.probs, attention=fwd.attention,
                            heatmaps=maps)
