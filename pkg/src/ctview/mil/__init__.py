"""Weakly-supervised slice-stack classifier with attention pooling,
adjacent-slice smoothness regularisation, activation heatmaps, and the
evaluation harness."""

from .checkpoint import load_model, load_model_file, save_model, save_model_file
from .estimator import MilBagClassifier, check_bag, check_bags_and_labels
from .gradcam import PredictionResult, predict_with_heatmap
from .losses import LossComponents, cross_entropy, loss_components, smoothness_penalty
from .metrics import (CrossValResult, binary_metrics, bootstrap_ci,
                      cross_validate, roc_auc, stratified_folds)
from .model import (MilModel, ModelConfig, attention_pool, classify_forward,
                    extract_features, init_params)
from .train import (TRAIN_PRESETS, Bag, TrainConfig, TrainResult, adam_step,
                    apply_augmentation, augment_bag, draw_augmentation,
                    init_adam, predict_proba, train)

__all__ = [
    "Bag", "CrossValResult", "LossComponents", "MilBagClassifier", "MilModel",
    "ModelConfig", "PredictionResult", "TRAIN_PRESETS", "TrainConfig",
    "TrainResult", "adam_step", "apply_augmentation", "attention_pool",
    "augment_bag", "binary_metrics", "bootstrap_ci", "check_bag",
    "check_bags_and_labels", "classify_forward", "cross_entropy",
    "cross_validate", "draw_augmentation", "extract_features", "init_adam",
    "init_params", "load_model", "load_model_file", "loss_components",
    "predict_proba", "predict_with_heatmap", "roc_auc", "save_model",
    "save_model_file", "smoothness_penalty", "stratified_folds", "train",
]
