"""k-nearest-neighbors classifier (Euclidean, deterministic tie handling).

Distance ties are resolved toward the lower training-row index (stable sort)
and vote ties toward malicious, the fail-safe answer for an IDS.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from ..data import MALICIOUS
from ..errors import TrainingError
from .base import KNNParams, check_arity, labels_from_proba, _as2d

__all__ = ["KNN"]

_CHUNK = 1024


class KNN:
    kind = "knn"

    def __init__(self, params: KNNParams):
        self.params = params
        self.side = ""
        self.scaler = None
        self.x_train: np.ndarray | None = None
        self.y_train: np.ndarray | None = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "KNN":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if np.unique(y).size < 2:
            raise TrainingError("knn training needs both classes")
        if self.params.k > x.shape[0]:
            raise TrainingError("k exceeds the number of training rows")
        self.x_train = x.copy()
        self.y_train = y.copy()
        return self

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x2, single = _as2d(x)
        check_arity(x2, self.x_train.shape[1])
        k = self.params.k
        p_mal = np.empty(x2.shape[0])
        for start in range(0, x2.shape[0], _CHUNK):
            block = x2[start : start + _CHUNK]
            d = cdist(block, self.x_train, metric="sqeuclidean")
            neighbors = np.argsort(d, axis=1, kind="stable")[:, :k]
            p_mal[start : start + _CHUNK] = (self.y_train[neighbors] == MALICIOUS).mean(
                axis=1
            )
        proba = np.column_stack([1.0 - p_mal, p_mal])
        return proba[0] if single else proba

    def predict(self, x: np.ndarray) -> np.ndarray | int:
        x2, single = _as2d(x)
        labels = labels_from_proba(np.atleast_2d(self.predict_proba(x2)))
        return int(labels[0]) if single else labels

    # -- persistence -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"x_train": self.x_train, "y_train": self.y_train}

    @classmethod
    def from_state(cls, params: KNNParams, arrays: dict[str, np.ndarray]) -> "KNN":
        model = cls(params)
        model.x_train = arrays["x_train"]
        model.y_train = arrays["y_train"]
        return model
