"""Bag dataset types, augmentation, Adam, and the training loop."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .losses import LossComponents, cross_entropy, smoothness_penalty
from .model import MilModel, ModelConfig


@dataclass(frozen=True)
class Bag:
    """One case: a stack of preprocessed slices with a case-level label."""

    slices: np.ndarray  # (K, H, W) float64 in [0, 1]
    label: int          # 0 negative, 1 positive
    case_id: str = ""

    def __post_init__(self):
        s = np.asarray(self.slices, dtype=np.float64)
        if s.ndim != 3 or s.shape[0] < 1:
            raise ValueError(f"bag must be (K, H, W) with K >= 1, got {s.shape}")
        if s.min() < 0.0 or s.max() > 1.0:
            raise ValueError("bag values must lie in [0, 1]")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "slices", s)

    @property
    def num_slices(self) -> int:
        return self.slices.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    lambda_smooth: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 4
    seed: int = 0
    augment: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    aw_batch_reduction: str = "mean"

    def __post_init__(self):
        if self.lambda_smooth < 0:
            raise ValueError("lambda must be non-negative")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("bad training configuration")


# ready-made configurations: "toy" trains in minutes on one CPU core;
# "clinical" mirrors the full-scale recipe used with a pretrained backbone
TRAIN_PRESETS: dict[str, TrainConfig] = {
    "toy": TrainConfig(learning_rate=1e-3, epochs=30, batch_size=4),
    "clinical": TrainConfig(learning_rate=1e-5, epochs=100, batch_size=4),
}


# ------------------------------------------------------------------ augment

@dataclass(frozen=True)
class Augmentation:
    angle_deg: float
    flip_h: bool
    flip_v: bool


def draw_augmentation(rng: np.random.Generator) -> Augmentation:
    """Rotation in [-10, 10] degrees, each flip with probability 1/2."""
    return Augmentation(angle_deg=float(rng.uniform(-10.0, 10.0)),
                        flip_h=bool(rng.random() < 0.5),
                        flip_v=bool(rng.random() < 0.5))


def apply_augmentation(slices: np.ndarray, aug: Augmentation) -> np.ndarray:
    """Apply one rotation/flip decision identically to every slice."""
    out = slices
    if aug.flip_h:
        out = out[:, :, ::-1]
    if aug.flip_v:
        out = out[:, ::-1, :]
    if aug.angle_deg != 0.0:
        out = ndimage.rotate(out, aug.angle_deg, axes=(1, 2), reshape=False,
                             order=1, mode="constant", cval=0.0)
        out = np.clip(out, 0.0, 1.0)
    return np.ascontiguousarray(out)


def augment_bag(bag: Bag, rng: np.random.Generator) -> Bag:
    return replace(bag, slices=apply_augmentation(bag.slices, draw_augmentation(rng)))


# --------------------------------------------------------------------- adam

def init_adam(params: dict[str, np.ndarray]):
    return {"t": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One Adam update with bias correction; returns new params and state."""
    t = state["t"] + 1
    new_params, m_new, v_new = {}, {}, {}
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state["m"][k] + (1.0 - beta1) * g
        v = beta2 * state["v"][k] + (1.0 - beta2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params[k] = p - update
        m_new[k] = m
        v_new[k] = v
    return new_params, {"t": t, "m": m_new, "v": v_new}


# --------------------------------------------------------------------- train

@dataclass
class TrainResult:
    model: MilModel
    history: list[LossComponents] = field(default_factory=list)


def train(dataset: Sequence[Bag], config: TrainConfig,
          model_config: ModelConfig = ModelConfig(),
          model: MilModel | None = None) -> TrainResult:
    """End-to-end training, deterministic for a given config seed."""
    labels = {bag.label for bag in dataset}
    if len(labels) < 2:
        raise ValueError("training requires both classes to be present")
    if model is None:
        model = MilModel.initialise(model_config, seed=config.seed)
    rng = np.random.default_rng(config.seed + 1)
    state = init_adam(model.params)
    lam = config.lambda_smooth
    history: list[LossComponents] = []

    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        ce_sum = aw_sum = total_sum = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            n = len(batch)
            ce_scale = 1.0 / n
            aw_scale = lam / n if config.aw_batch_reduction == "mean" else lam
            grads = model.zero_grads()
            probs = np.empty((n, 2))
            batch_labels = []
            attentions = []
            for j, bag_idx in enumerate(batch):
                bag = dataset[bag_idx]
                x = (apply_augmentation(bag.slices, draw_augmentation(rng))
                     if config.augment else bag.slices)
                fwd = model.forward_bag(x, keep_caches=True)
                model.backward_bag(fwd, bag.label, ce_scale=ce_scale,
                                   aw_scale=aw_scale, grads=grads)
                probs[j] = fwd.probs
                batch_labels.append(bag.label)
                attentions.append(fwd.attention)
            new_params, state = adam_step(model.params, grads, state,
                                          config.learning_rate, config.beta1,
                                          config.beta2, config.eps)
            model = model.with_params(new_params)
            ce = cross_entropy(probs, batch_labels)
            per_bag = [smoothness_penalty(a) for a in attentions]
            aw = (float(np.mean(per_bag)) if config.aw_batch_reduction == "mean"
                  else float(np.sum(per_bag)))
            ce_sum += ce
            aw_sum += aw
            total_sum += ce + lam * aw
            n_batches += 1
        history.append(LossComponents(ce=ce_sum / n_batches, aw=aw_sum / n_batches,
                                      total=total_sum / n_batches))
    return TrainResult(model=model, history=history)


def predict_proba(model: MilModel, bags: Sequence[Bag] | Sequence[np.ndarray]) -> np.ndarray:
    """Class probabilities (n, 2) for a sequence of bags."""
    out = np.empty((len(bags), 2))
    for i, bag in enumerate(bags):
        slices = bag.slices if isinstance(bag, Bag) else np.asarray(bag)
        out[i] = model.forward_bag(slices).probs
    return out
