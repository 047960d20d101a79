"""Evaluation: ROC/AUC, bootstrap confidence intervals, stratified
cross-validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import MilModel, ModelConfig
from .train import Bag, TrainConfig, train


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the trapezoid rule over tie groups.

    Numerically identical to the probability that a random positive is
    ranked above a random negative (ties count 1/2).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both classes")
    order = np.argsort(-scores, kind="mergesort")
    y = labels[order]
    s = scores[order]
    cum_tp = np.cumsum(y == 1)
    cum_fp = np.cumsum(y == 0)
    # one ROC vertex per distinct threshold
    boundary = np.nonzero(np.diff(s))[0]
    idx = np.append(boundary, len(s) - 1)
    tpr = np.concatenate([[0.0], cum_tp[idx] / n_pos])
    fpr = np.concatenate([[0.0], cum_fp[idx] / n_neg])
    return float(np.trapezoid(tpr, fpr))


def binary_metrics(scores: Sequence[float], labels: Sequence[int],
                   threshold: float = 0.5) -> dict[str, float]:
    """Accuracy/sensitivity/specificity at a fixed threshold, plus AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    pred = (scores >= threshold).astype(int)
    pos = labels == 1
    neg = labels == 0
    return {
        "accuracy": float((pred == labels).mean()),
        "auc": roc_auc(scores, labels),
        "sensitivity": float((pred[pos] == 1).mean()) if pos.any() else float("nan"),
        "specificity": float((pred[neg] == 0).mean()) if neg.any() else float("nan"),
    }


def bootstrap_ci(metric_fn: Callable[[np.ndarray, np.ndarray], float],
                 scores: Sequence[float], labels: Sequence[int],
                 level: float = 0.95, n_boot: int = 2000,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval; degenerate one-class resamples are
    redrawn. Deterministic for a given seed."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n = len(scores)
    if n < 10:
        raise ValueError("bootstrap needs at least 10 samples")
    rng = np.random.default_rng(seed)
    vals = np.empty(n_boot)
    for b in range(n_boot):
        for _ in range(1000):
            idx = rng.integers(0, n, size=n)
            if labels[idx].min() != labels[idx].max():
                break
        else:
            raise ValueError("could not draw a two-class resample")
        vals[b] = metric_fn(scores[idx], labels[idx])
    alpha = (1.0 - level) / 2.0
    return (float(np.percentile(vals, 100 * alpha)),
            float(np.percentile(vals, 100 * (1 - alpha))))


def stratified_folds(labels: Sequence[int], folds: int,
                     seed: int = 0) -> list[np.ndarray]:
    """Seeded stratified split: per-class shuffle dealt round-robin, so fold
    sizes per class differ by at most one."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=2)
    if counts.min() < folds:
        raise ValueError(f"each class needs >= {folds} cases, have {counts.tolist()}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=int)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = np.arange(len(idx)) % folds
    return [np.flatnonzero(assignment == f) for f in range(folds)]


@dataclass
class FoldResult:
    metrics: dict[str, float]
    ci: dict[str, tuple[float, float]]
    test_indices: np.ndarray
    scores: np.ndarray
    labels: np.ndarray


@dataclass
class CrossValResult:
    folds: list[FoldResult]
    pooled: dict[str, float]
    pooled_ci: dict[str, tuple[float, float]]

    def to_report(self) -> dict:
        def block(metrics, ci):
            return {**metrics, "ci": {k: [lo, hi] for k, (lo, hi) in ci.items()}}
        return {"folds": [block(f.metrics, f.ci) for f in self.folds],
                "pooled": block(self.pooled, self.pooled_ci)}


_CI_METRICS: dict[str, Callable] = {
    "accuracy": lambda s, y: float(((s >= 0.5).astype(int) == y).mean()),
    "auc": roc_auc,
    "sensitivity": lambda s, y: float((s[y == 1] >= 0.5).mean()),
    "specificity": lambda s, y: float((s[y == 0] < 0.5).mean()),
}


def _ci_block(scores, labels, seed) -> dict[str, tuple[float, float]]:
    return {name: bootstrap_ci(fn, scores, labels, seed=seed)
            for name, fn in _CI_METRICS.items()}


def cross_validate(dataset: Sequence[Bag], folds: int = 5,
                   config: TrainConfig = TrainConfig(),
                   model_config: ModelConfig = ModelConfig()) -> CrossValResult:
    """Stratified k-fold cross-validation of the bag classifier.

    Every fold trains a fresh model on the remaining folds (per-fold seeds
    derived from the config seed) and scores its held-out cases at
    threshold 0.5.
    """
    labels = np.array([bag.label for bag in dataset], dtype=int)
    test_sets = stratified_folds(labels, folds, seed=config.seed)
    fold_results: list[FoldResult] = []
    pooled_scores = np.empty(len(dataset))
    for f, test_idx in enumerate(test_sets):
        train_idx = np.setdiff1d(np.arange(len(dataset)), test_idx)
        fold_cfg = TrainConfig(**{**config.__dict__, "seed": config.seed + 1000 * (f + 1)})
        result = train([dataset[i] for i in train_idx], fold_cfg, model_config)
        scores = np.array([result.model.forward_bag(dataset[i].slices).probs[1]
                           for i in test_idx])
        pooled_scores[test_idx] = scores
        fold_labels = labels[test_idx]
        fold_results.append(FoldResult(
            metrics=binary_metrics(scores, fold_labels),
            ci=_ci_block(scores, fold_labels, seed=config.seed + f),
            test_indices=test_idx, scores=scores, labels=fold_labels))
    pooled = binary_metrics(pooled_scores, labels)
    pooled_ci = _ci_block(pooled_scores, labels, seed=config.seed)
    return CrossValResult(folds=fold_results, pooled=pooled, pooled_ci=pooled_ci)
