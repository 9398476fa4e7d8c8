"""Confusion matrix and recall/precision/F1 with malicious as positive class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import BENIGN, MALICIOUS, LabeledDataset

__all__ = ["ConfusionMatrix", "Metrics", "confusion", "metrics_from_confusion",
           "evaluate", "detection_rate"]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Metrics:
    recall: float
    precision: float
    f1: float
    # names of metrics whose denominator was zero (value reported as 0)
    undefined: tuple[str, ...] = ()

    @property
    def detection_rate(self) -> float:
        return self.recall


def confusion(y_true: np.ndarray, y_pred: np.ndarray) -> ConfusionMatrix:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    return ConfusionMatrix(
        tp=int(((y_true == MALICIOUS) & (y_pred == MALICIOUS)).sum()),
        fp=int(((y_true == BENIGN) & (y_pred == MALICIOUS)).sum()),
        fn=int(((y_true == MALICIOUS) & (y_pred == BENIGN)).sum()),
        tn=int(((y_true == BENIGN) & (y_pred == BENIGN)).sum()),
    )


def metrics_from_confusion(cm: ConfusionMatrix) -> Metrics:
    undefined: list[str] = []

    def safe(num: int, den: int, name: str) -> float:
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    recall = safe(cm.tp, cm.tp + cm.fn, "recall")
    precision = safe(cm.tp, cm.tp + cm.fp, "precision")
    if recall + precision > 0:
        f1 = 2 * recall * precision / (recall + precision)
    else:
        undefined.append("f1")
        f1 = 0.0
    return Metrics(recall, precision, f1, tuple(undefined))


def evaluate(model, test: LabeledDataset) -> tuple[ConfusionMatrix, Metrics]:
    """Score a model on a raw test split (the model's scaler is applied)."""
    x = test.x
    if getattr(model, "scaler", None) is not None:
        x = model.scaler.transform(x)
    cm = confusion(test.y, model.predict(x))
    return cm, metrics_from_confusion(cm)


def detection_rate(y_pred: np.ndarray) -> float:
    """Fraction of an all-positive batch predicted malicious (recall)."""
    y_pred = np.asarray(y_pred)
    return float((y_pred == MALICIOUS).mean()) if y_pred.size else 0.0
