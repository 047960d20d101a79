"""scikit-learn style front end for the bag classifier.

Bags have a variable slice count, so ``X`` is a sequence of (K_i, H, W)
arrays rather than a rectangular matrix; everything else follows the
estimator protocol (``fit``/``predict``/``predict_proba``/``get_params``),
which makes the classifier usable with sklearn model-selection utilities
that accept list-like ``X``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .model import MilModel, ModelConfig
from .train import Bag, TrainConfig, train


def check_bag(x) -> np.ndarray:
    """Validate one bag: 3D, finite, values in [0, 1]."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] < 1:
        raise ValueError(f"each bag must be (K, H, W) with K >= 1, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("bag contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("bag values must lie in [0, 1]")
    return arr


def check_bags_and_labels(X, y=None):
    bags = [check_bag(x) for x in X]
    if y is None:
        return bags, None
    labels = np.asarray(y, dtype=int)
    if labels.shape != (len(bags),):
        raise ValueError(f"expected {len(bags)} labels, got shape {labels.shape}")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError("labels must be 0 or 1")
    return bags, labels


class MilBagClassifier(BaseEstimator, ClassifierMixin):
    """Attention-pooled slice-stack classifier with a smoothness penalty on
    the per-slice attention weights of adjacent slices."""

    def __init__(self, conv_widths=(16, 32, 64), attention_dim=128,
                 lambda_smooth=1.0, learning_rate=1e-3, epochs=30,
                 batch_size=4, seed=0, augment=True,
                 beta1=0.9, beta2=0.999, eps=1e-8,
                 aw_batch_reduction="mean"):
        self.conv_widths = conv_widths
        self.attention_dim = attention_dim
        self.lambda_smooth = lambda_smooth
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.augment = augment
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.aw_batch_reduction = aw_batch_reduction

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        return (ModelConfig(conv_widths=tuple(self.conv_widths),
                            attention_dim=self.attention_dim),
                TrainConfig(lambda_smooth=self.lambda_smooth,
                            learning_rate=self.learning_rate,
                            epochs=self.epochs, batch_size=self.batch_size,
                            seed=self.seed, augment=self.augment,
                            beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                            aw_batch_reduction=self.aw_batch_reduction))

    def fit(self, X, y):
        bags, labels = check_bags_and_labels(X, y)
        model_cfg, train_cfg = self._configs()
        dataset = [Bag(slices=b, label=int(l)) for b, l in zip(bags, labels)]
        result = train(dataset, train_cfg, model_cfg)
        self.model_ = result.model
        self.loss_history_ = result.history
        self.classes_ = np.array([0, 1])
        return self

    def _require_fitted(self) -> MilModel:
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError("fit the classifier before predicting")
        return model

    def predict_proba(self, X) -> np.ndarray:
        model = self._require_fitted()
        bags, _ = check_bags_and_labels(X)
        return np.stack([model.forward_bag(b).probs for b in bags])

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def attention_weights(self, x) -> np.ndarray:
        """Per-slice attention weights for a single bag."""
        model = self._require_fitted()
        return model.forward_bag(check_bag(x)).attention
