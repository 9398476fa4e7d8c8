"""Classifier hyperparameters, the attacker/defender presets, and persistence.

All three classifiers share a small informal protocol: ``kind`` (str),
``fit(X, y)``, ``predict(X)``, ``predict_proba(X)``, and the bookkeeping
attributes ``side`` and ``scaler`` attached by :func:`train`.  Probabilities
are ordered (p_benign, p_malicious); exact probability ties resolve to
malicious, the fail-safe answer for an IDS, so ``predict`` always equals the
argmax of ``predict_proba`` under that documented tie rule.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import BENIGN, MALICIOUS, LabeledDataset, Scaler
from ..errors import ConfigError, DataError, TrainingError

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
]


@dataclass(frozen=True)
class MLPParams:
    hidden_layers: int = 3
    neurons_per_layer: int = 128
    activation: str = "relu"
    optimizer: str = "adam"
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    early_stop_patience: int = 5

    def __post_init__(self) -> None:
        if self.hidden_layers < 1 or self.neurons_per_layer < 1:
            raise ConfigError("MLP needs at least one hidden layer and neuron")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("bad MLP training parameters")
        if self.activation != "relu" or self.optimizer != "adam":
            raise ConfigError("only relu activation with adam is supported")


@dataclass(frozen=True)
class RFParams:
    n_estimators: int = 300
    criterion: str = "gini"
    bootstrap: bool = True
    max_depth: int | None = None
    min_samples_split: int = 2
    max_features: str | int | None = "sqrt"

    def __post_init__(self) -> None:
        if self.n_estimators < 1 or self.min_samples_split < 2:
            raise ConfigError("bad random forest parameters")
        if self.criterion != "gini":
            raise ConfigError("only gini impurity is supported")


@dataclass(frozen=True)
class KNNParams:
    k: int = 5
    metric: str = "euclidean"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.metric != "euclidean":
            raise ConfigError("only euclidean distance is supported")


def attacker_presets() -> dict[str, object]:
    return {
        "mlp": MLPParams(hidden_layers=3, neurons_per_layer=128),
        "rf": RFParams(n_estimators=300),
        "knn": KNNParams(k=5),
    }


def defender_presets() -> dict[str, object]:
    return {
        "mlp": MLPParams(hidden_layers=2, neurons_per_layer=256),
        "rf": RFParams(n_estimators=200),
        "knn": KNNParams(k=3),
    }


def preset(side: str, kind: str):
    table = {"attacker": attacker_presets, "defender": defender_presets}
    if side not in table:
        raise ConfigError(f"unknown side {side!r}")
    presets = table[side]()
    if kind not in presets:
        raise ConfigError(f"unknown model kind {kind!r}")
    return presets[kind]


def _as2d(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise DataError(f"expected a vector or (n, f) matrix, got shape {x.shape}")


def check_arity(x: np.ndarray, n_features: int) -> None:
    if x.shape[1] != n_features:
        raise DataError(f"expected {n_features} features, got {x.shape[1]}")


def labels_from_proba(proba: np.ndarray) -> np.ndarray:
    """Argmax with probability ties resolving to malicious."""
    return np.where(proba[:, MALICIOUS] >= proba[:, BENIGN], MALICIOUS, BENIGN)


def train(kind: str, hyper, data: LabeledDataset, seed: int,
          side: str = "", scaler: Scaler | None = None):
    """Fit one classifier on an already-scaled dataset.

    ``scaler`` is attached to the returned model so callers working in raw
    feature units (the crafting loop, evaluation on raw test splits) can map
    into the model's input space.
    """
    from .forest import RandomForest
    from .knn import KNN
    from .mlp import MLP

    b, m = data.class_counts()
    if b == 0 or m == 0:
        raise TrainingError("training data must contain both classes")

    if kind == "mlp":
        model = MLP(hyper, n_features=data.schema.arity, seed=seed)
    elif kind == "rf":
        model = RandomForest(hyper, seed=seed)
    elif kind == "knn":
        model = KNN(hyper)
    else:
        raise ConfigError(f"unknown model kind {kind!r}")

    model.fit(data.x, data.y)
    model.side = side
    model.scaler = scaler
    return model


# ---------------------------------------------------------------------------
# Persistence: one .npz per model with a JSON meta record plus weight arrays.

_FORMAT_VERSION = 1
_PARAM_TYPES = {"mlp": MLPParams, "rf": RFParams, "knn": KNNParams}


def save_model(model, path) -> None:
    meta = {
        "format_version": _FORMAT_VERSION,
        "kind": model.kind,
        "side": getattr(model, "side", ""),
        "hyper": asdict(model.params),
        "scaler_digest": model.scaler.digest() if model.scaler is not None else None,
    }
    arrays = dict(model.state_arrays())
    if model.scaler is not None:
        arrays["scaler_min"] = model.scaler.min
        arrays["scaler_max"] = model.scaler.max
    np.savez_compressed(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                        **arrays)


def load_model(path):
    from .forest import RandomForest
    from .knn import KNN
    from .mlp import MLP

    with np.load(path) as bundle:
        meta = json.loads(bytes(bundle["meta"]).decode())
        if meta.get("format_version") != _FORMAT_VERSION:
            raise DataError(f"unsupported model format in {path}")
        kind = meta["kind"]
        hyper = _PARAM_TYPES[kind](**meta["hyper"])
        arrays = {k: bundle[k] for k in bundle.files if k != "meta"}

    scaler = None
    if "scaler_min" in arrays:
        scaler = Scaler(arrays.pop("scaler_min"), arrays.pop("scaler_max"))

    if kind == "mlp":
        model = MLP.from_state(hyper, arrays)
    elif kind == "rf":
        model = RandomForest.from_state(hyper, arrays)
    elif kind == "knn":
        model = KNN.from_state(hyper, arrays)
    else:
        raise DataError(f"unknown model kind {kind!r} in {path}")
    model.side = meta.get("side", "")
    model.scaler = scaler
    return model
