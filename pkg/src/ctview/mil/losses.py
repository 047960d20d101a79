"""Training objective: batch cross entropy plus the adjacent-slice
smoothness penalty on attention weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossComponents:
    ce: float
    aw: float
    total: float


def cross_entropy(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean binary cross entropy over a batch of (N, 2) probabilities."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=int)
    if probs.shape[0] != labels.shape[0]:
        raise ValueError("probs/labels length mismatch")
    q = probs[np.arange(len(labels)), labels]
    q = np.clip(q, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(np.log(q)))


def smoothness_penalty(a: np.ndarray) -> float:
    """Sum of squared differences of consecutive attention weights."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(np.diff(a) ** 2))


def loss_components(probs: np.ndarray, labels: Sequence[int],
                    attentions: Sequence[np.ndarray], lam: float,
                    aw_batch_reduction: str = "mean") -> LossComponents:
    """Combined loss for a batch.

    The smoothness term is summed within each bag; across the batch it is
    averaged by default (keeps the balance constant independent of batch
    size) or summed when ``aw_batch_reduction == "sum"``.
    """
    if lam < 0:
        raise ValueError("the balance constant must be non-negative")
    if aw_batch_reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {aw_batch_reduction!r}")
    ce = cross_entropy(probs, labels)
    per_bag = [smoothness_penalty(a) for a in attentions]
    aw = float(np.mean(per_bag)) if aw_batch_reduction == "mean" else float(np.sum(per_bag))
    return LossComponents(ce=ce, aw=aw, total=ce + lam * aw)
