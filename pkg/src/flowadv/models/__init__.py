"""Classifiers (MLP, random forest, k-NN), presets, metrics, persistence."""

from .base import (
    KNNParams,
    MLPParams,
    RFParams,
    attacker_presets,
    defender_presets,
    load_model,
    preset,
    save_model,
    train,
)
from .forest import DecisionTree, RandomForest
from .knn import KNN
from .metrics import (
    ConfusionMatrix,
    Metrics,
    confusion,
    detection_rate,
    evaluate,
    metrics_from_confusion,
)
from .mlp import MLP

__all__ = [
    "MLPParams",
    "RFParams",
    "KNNParams",
    "attacker_presets",
    "defender_presets",
    "preset",
    "train",
    "save_model",
    "load_model",
    "MLP",
    "RandomForest",
    "DecisionTree",
    "KNN",
    "ConfusionMatrix",
    "Metrics",
    "confusion",
    "metrics_from_confusion",
    "evaluate",
    "detection_rate",
]
