"""The bag classifier: a small conv feature extractor per slice, gated
attention pooling across slices, and a 2-way softmax head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn

# conv im2col buffers are the memory hot spot; bound them per forward chunk
_COLS_BUDGET_BYTES = 64 * 1024 * 1024


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``conv_widths`` are the channel counts of the 3x3 conv blocks (each
    block is conv-relu-maxpool); the feature dimension equals the last
    width because the stack ends in global average pooling. The published
    full-scale recipe corresponds to a ResNet18 backbone with feature
    dimension 512; here the backbone is a small CNN sized for CPU runs.
    """

    conv_widths: tuple[int, ...] = (16, 32, 64)
    attention_dim: int = 128

    def __post_init__(self):
        if len(self.conv_widths) < 1 or any(w < 1 for w in self.conv_widths):
            raise ValueError(f"bad conv widths {self.conv_widths}")
        if self.attention_dim < 1:
            raise ValueError("attention dim must be >= 1")
        object.__setattr__(self, "conv_widths", tuple(int(w) for w in self.conv_widths))

    @property
    def feature_dim(self) -> int:
        return self.conv_widths[-1]


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """He-style initialisation, deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    c_in = 1
    for i, width in enumerate(config.conv_widths):
        fan_in = c_in * 9
        params[f"conv{i}_w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                          size=(width, c_in, 3, 3))
        params[f"conv{i}_b"] = np.zeros(width)
        c_in = width
    D, L = config.feature_dim, config.attention_dim
    params["attn_V"] = rng.normal(0.0, np.sqrt(2.0 / D), size=(L, D))
    params["attn_w"] = rng.normal(0.0, np.sqrt(2.0 / L), size=(L,))
    params["head_w"] = rng.normal(0.0, 0.01, size=(2, D))
    params["head_b"] = np.zeros(2)
    return params


def param_names(config: ModelConfig) -> list[str]:
    names = []
    for i in range(len(config.conv_widths)):
        names += [f"conv{i}_w", f"conv{i}_b"]
    return names + ["attn_V", "attn_w", "head_w", "head_b"]


@dataclass
class BlockCache:
    cols2: np.ndarray
    x_shape: tuple
    relu_mask: np.ndarray
    pool_idx: np.ndarray
    relu_shape: tuple


@dataclass
class BagForward:
    probs: np.ndarray          # (2,)
    logits: np.ndarray         # (2,)
    attention: np.ndarray      # (K,)
    z: np.ndarray              # (D,)
    features: np.ndarray       # (K, D)
    attn_cache: tuple
    block_caches: list[BlockCache] | None
    gap_shape: tuple | None


class MilModel:
    """Immutable-by-convention parameter container with forward/backward."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def initialise(cls, config: ModelConfig = ModelConfig(), seed: int = 0) -> "MilModel":
        return cls(config, init_params(config, seed))

    def with_params(self, params: dict[str, np.ndarray]) -> "MilModel":
        return MilModel(self.config, params)

    def copy(self) -> "MilModel":
        return MilModel(self.config, {k: v.copy() for k, v in self.params.items()})

    # ---------------------------------------------------------------- forward

    def _slice_chunk(self, h: int, w: int) -> int:
        worst = max(cw * 9 * (h >> i) * (w >> i) * 8
                    for i, cw in enumerate([1] + list(self.config.conv_widths[:-1])))
        return max(1, _COLS_BUDGET_BYTES // max(worst, 1))

    def _blocks_forward(self, x: np.ndarray, keep_caches: bool):
        """x (B, 1, H, W) -> pooled maps, per-block caches when requested."""
        caches: list[BlockCache] | None = [] if keep_caches else None
        a = x
        last_A = None
        last_idx = None
        for i in range(len(self.config.conv_widths)):
            out, cols2 = nn.conv2d_forward(a, self.params[f"conv{i}_w"],
                                           self.params[f"conv{i}_b"])
            relu, mask = nn.relu_forward(out)
            pooled, idx = nn.maxpool2x2_forward(relu)
            if keep_caches:
                caches.append(BlockCache(cols2, a.shape, mask, idx, relu.shape))
            last_A, last_idx = relu, idx
            a = pooled
        return a, caches, last_A, last_idx

    def extract_features(self, bag: np.ndarray, keep_caches: bool = False):
        """bag (K, H, W) -> features (K, D) plus caches for backprop."""
        K, h, w = bag.shape
        x = bag[:, None, :, :].astype(np.float64, copy=False)
        if keep_caches:
            pooled, caches, _, _ = self._blocks_forward(x, True)
            feats, gap_shape = nn.gap_forward(pooled)
            return feats, caches, gap_shape
        chunk = self._slice_chunk(h, w)
        feats = np.empty((K, self.config.feature_dim), dtype=np.float64)
        for s in range(0, K, chunk):
            pooled, _, _, _ = self._blocks_forward(x[s:s + chunk], False)
            feats[s:s + chunk] = nn.gap_forward(pooled)[0]
        return feats, None, None

    def forward_bag(self, bag: np.ndarray, keep_caches: bool = False) -> BagForward:
        feats, caches, gap_shape = self.extract_features(bag, keep_caches)
        a, z, attn_cache = nn.attention_forward(feats, self.params["attn_V"],
                                                self.params["attn_w"])
        logits = self.params["head_w"] @ z + self.params["head_b"]
        probs = nn.softmax(logits)
        return BagForward(probs=probs, logits=logits, attention=a, z=z,
                          features=feats, attn_cache=attn_cache,
                          block_caches=caches, gap_shape=gap_shape)

    # --------------------------------------------------------------- backward

    def _blocks_backward(self, dpooled: np.ndarray, caches: list[BlockCache],
                         grads: dict[str, np.ndarray]):
        da = dpooled
        for i in reversed(range(len(self.config.conv_widths))):
            c = caches[i]
            dout = nn.maxpool2x2_backward(da, c.pool_idx, c.relu_shape)
            dout = nn.relu_backward(dout, c.relu_mask)
            da, dw, db = nn.conv2d_backward(dout, self.params[f"conv{i}_w"],
                                            c.cols2, c.x_shape)
            grads[f"conv{i}_w"] += dw
            grads[f"conv{i}_b"] += db
        return da

    def backward_bag(self, fwd: BagForward, label: int, *, ce_scale: float,
                     aw_scale: float, grads: dict[str, np.ndarray]) -> None:
        """Accumulate gradients of ``ce_scale * CE + aw_scale * AW`` for one
        bag into ``grads``. Requires a forward pass with caches."""
        if fwd.block_caches is None:
            raise ValueError("forward pass was run without caches")
        p = np.zeros(2)
        p[label] = 1.0
        dlogits = (fwd.probs - p) * ce_scale
        grads["head_w"] += np.outer(dlogits, fwd.z)
        grads["head_b"] += dlogits
        dz = self.params["head_w"].T @ dlogits

        da_extra = aw_scale * smoothness_grad(fwd.attention) if aw_scale else None
        dH, dV, dw = nn.attention_backward(dz, da_extra, fwd.features,
                                           self.params["attn_V"],
                                           self.params["attn_w"], fwd.attn_cache)
        grads["attn_V"] += dV
        grads["attn_w"] += dw

        dpooled = nn.gap_backward(dH, fwd.gap_shape)
        self._blocks_backward(dpooled, fwd.block_caches, grads)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def smoothness_grad(a: np.ndarray) -> np.ndarray:
    """Gradient of sum((a[i] - a[i-1])^2) with respect to the weights."""
    d = np.diff(a)
    g = np.zeros_like(a)
    g[1:] += 2.0 * d
    g[:-1] -= 2.0 * d
    return g


# public functional forms -----------------------------------------------------

def extract_features(bag: np.ndarray, model: MilModel) -> np.ndarray:
    """Per-slice feature matrix (K, D); deterministic."""
    return model.extract_features(bag)[0]


def attention_pool(H: np.ndarray, V: np.ndarray, w: np.ndarray):
    """Attention weights and pooled feature vector for an instance matrix."""
    a, z, _ = nn.attention_forward(np.asarray(H, dtype=np.float64),
                                   np.asarray(V, dtype=np.float64),
                                   np.asarray(w, dtype=np.float64))
    return a, z


def classify_forward(z: np.ndarray, head_w: np.ndarray, head_b: np.ndarray) -> np.ndarray:
    """Two-class probabilities from the pooled feature vector."""
    return nn.softmax(head_w @ z + head_b)
