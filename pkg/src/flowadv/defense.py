"""Ensemble adversarial detector and the protected-NIDS pipeline.

Three sub-detectors are trained in parallel on disjoint column groups of the
flow vector: the directly modifiable factors, the dependent (recomputed)
factors, and the immutable remainder.  Each sub-detector separates clean
traffic (benign and malicious relabeled together) from crafted adversarial
traffic.  At prediction time the per-detector class probabilities are
discounted by reliability weights, measured as each sub-detector's
adversarial-class recall on held-out data, and fused:

    P_a = sum_i(P_a_i * w_i) / (sum_i(P_a_i * w_i) + sum_i(P_c_i * w_i))

with P_c defined symmetrically, so P_a + P_c = 1.  An instance is rejected
(never shown to the NIDS) when P_a exceeds the decision threshold; exact
ties pass through as clean so legitimate traffic is not dropped on
ambiguity.

A disagreement-based baseline is included for comparison: a clean-trained
model and a model trained on an equal clean/adversarial mix flag an input
as adversarial whenever their labels differ.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .data import BENIGN, MALICIOUS, LabeledDataset, Scaler
from .errors import DataError, FusionError, TrainingError
from .models.base import MLPParams, load_model, save_model
from .models.mlp import MLP
from .schema import FeatureSchema, Group

__all__ = [
    "CLEAN",
    "ADVERSARIAL",
    "REJECTED",
    "FeaturePartition",
    "DetectorDataset",
    "build_detector_dataset",
    "SubDetector",
    "DetectorEnsemble",
    "train_ensemble",
    "fuse",
    "detect",
    "detect_batch",
    "pipeline_classify",
    "pipeline_classify_batch",
    "AdvTrainDetector",
    "train_adv_training_detector",
    "detect_by_disagreement",
    "save_ensemble",
    "load_ensemble",
]

CLEAN = 0
ADVERSARIAL = 1

REJECTED = "rejected"
_PIPELINE_LABELS = {BENIGN: "benign", MALICIOUS: "malicious"}

_GROUP_NAMES = ("modifiable", "dependent", "immutable")

# Default sub-detector: a small MLP; sizes recorded in run manifests.
_DETECTOR_PARAMS = MLPParams(
    hidden_layers=2, neurons_per_layer=64, epochs=60, early_stop_patience=8
)


@dataclass(frozen=True)
class FeaturePartition:
    """Index sets of the three column groups; disjoint, covering the schema."""

    modifiable: np.ndarray
    dependent: np.ndarray
    immutable: np.ndarray

    @classmethod
    def from_schema(cls, schema: FeatureSchema) -> "FeaturePartition":
        return cls(
            modifiable=schema.indices(Group.MODIFIABLE),
            dependent=schema.indices(Group.DEPENDENT),
            immutable=schema.indices(Group.IMMUTABLE),
        )

    def groups(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.modifiable, self.dependent, self.immutable

    def to_dict(self) -> dict:
        return {
            name: [int(i) for i in idx]
            for name, idx in zip(_GROUP_NAMES, self.groups())
        }


@dataclass(frozen=True)
class DetectorDataset:
    """Vectors labeled clean (0) vs adversarial (1), per the relabeling rule."""

    x: np.ndarray
    y: np.ndarray
    schema: FeatureSchema

    def __len__(self) -> int:
        return self.x.shape[0]

    def class_counts(self) -> tuple[int, int]:
        return int((self.y == CLEAN).sum()), int((self.y == ADVERSARIAL).sum())


def build_detector_dataset(
    benign: np.ndarray,
    malicious: np.ndarray,
    adversarial: np.ndarray,
    schema: FeatureSchema,
    seed: int = 0,
) -> DetectorDataset:
    """Concatenate benign+malicious as clean, crafted instances as adversarial.

    The larger class is subsampled (seeded) to the smaller so the detector
    trains balanced.
    """
    benign = np.atleast_2d(np.asarray(benign, dtype=float))
    malicious = np.atleast_2d(np.asarray(malicious, dtype=float))
    adversarial = np.asarray(adversarial, dtype=float)
    if adversarial.size == 0:
        raise DataError("detector dataset needs a non-empty adversarial set")
    adversarial = np.atleast_2d(adversarial)
    clean = np.vstack([benign, malicious])
    for name, arr in (("clean", clean), ("adversarial", adversarial)):
        if arr.shape[1] != schema.arity:
            raise DataError(f"{name} vectors do not match the schema arity")

    rng = np.random.default_rng(seed)
    n = min(len(clean), len(adversarial))
    if len(clean) > n:
        clean = clean[np.sort(rng.choice(len(clean), n, replace=False))]
    if len(adversarial) > n:
        adversarial = adversarial[np.sort(rng.choice(len(adversarial), n, replace=False))]

    x = np.vstack([clean, adversarial])
    y = np.concatenate([np.full(len(clean), CLEAN), np.full(len(adversarial), ADVERSARIAL)])
    return DetectorDataset(x, y, schema)


@dataclass
class SubDetector:
    name: str
    columns: np.ndarray
    clf: MLP
    weight: float


@dataclass
class DetectorEnsemble:
    detectors: tuple[SubDetector, SubDetector, SubDetector]
    scaler: Scaler
    threshold: float = 0.5

    @property
    def weights(self) -> np.ndarray:
        return np.array([d.weight for d in self.detectors])


def _default_detector(n_features: int, seed: int) -> MLP:
    return MLP(_DETECTOR_PARAMS, n_features=n_features, seed=seed)


def _holdout_split(
    y: np.ndarray, fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/validation index split."""
    train_idx: list[np.ndarray] = []
    val_idx: list[np.ndarray] = []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        n_val = max(1, int(round(fraction * idx.size)))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def train_ensemble(
    partition: FeaturePartition,
    data: DetectorDataset,
    seed: int,
    holdout: float = 0.2,
    threshold: float = 0.5,
    make_detector=None,
) -> DetectorEnsemble:
    """Train the three group-wise sub-detectors and set their weights.

    Each weight is the sub-detector's detection rate (adversarial-class
    recall) on a held-out fraction of the detector data, so unreliable
    groups are discounted at fusion time.  ``make_detector(n_features,
    seed)`` may supply any classifier with fit/predict/predict_proba.
    """
    c, a = data.class_counts()
    if c == 0 or a == 0:
        raise TrainingError("detector training needs both classes")
    for name, cols in zip(_GROUP_NAMES, partition.groups()):
        if cols.size == 0:
            raise DataError(f"feature group {name!r} has no columns")

    make_detector = make_detector or _default_detector
    rng = np.random.default_rng(seed)
    train_idx, val_idx = _holdout_split(data.y, holdout, rng)
    scaler = Scaler.fit(data.x[train_idx])
    x_train = scaler.transform(data.x[train_idx])
    x_val = scaler.transform(data.x[val_idx])
    y_train = data.y[train_idx]
    y_val = data.y[val_idx]

    detectors = []
    for offset, (name, cols) in enumerate(zip(_GROUP_NAMES, partition.groups())):
        clf = make_detector(cols.size, seed + offset)
        clf.fit(x_train[:, cols], y_train)
        pred = np.atleast_1d(clf.predict(x_val[:, cols]))
        is_adv = y_val == ADVERSARIAL
        weight = float((pred[is_adv] == ADVERSARIAL).mean()) if is_adv.any() else 0.0
        detectors.append(SubDetector(name=name, columns=cols, clf=clf, weight=weight))

    return DetectorEnsemble(tuple(detectors), scaler=scaler, threshold=threshold)


def fuse(per_detector, weights) -> tuple[float, float]:
    """Discount per-detector (P_a_i, P_c_i) by weights and renormalize."""
    pairs = np.asarray(per_detector, dtype=float)
    w = np.asarray(weights, dtype=float)
    if pairs.shape != (w.size, 2):
        raise FusionError("need one (P_a, P_c) pair per weight")
    if np.any(pairs < 0) or np.any(np.abs(pairs.sum(axis=1) - 1.0) > 1e-6):
        raise FusionError("each detector output must be a probability pair")
    if np.any(w < 0):
        raise FusionError("weights must be non-negative")
    num_a = float(pairs[:, 0] @ w)
    num_c = float(pairs[:, 1] @ w)
    total = num_a + num_c
    if total == 0.0:
        raise FusionError("all-zero weights leave nothing to fuse")
    return num_a / total, num_c / total


def _ensemble_proba(ensemble: DetectorEnsemble, x2: np.ndarray) -> np.ndarray:
    """Fused (P_a, P_c) rows for a raw-unit batch."""
    scaled = ensemble.scaler.transform(x2)
    w = ensemble.weights
    if not np.any(w > 0):
        raise FusionError("ensemble weights are all zero")
    num_a = np.zeros(x2.shape[0])
    num_c = np.zeros(x2.shape[0])
    for det in ensemble.detectors:
        proba = np.atleast_2d(det.clf.predict_proba(scaled[:, det.columns]))
        num_a += proba[:, ADVERSARIAL] * det.weight
        num_c += proba[:, CLEAN] * det.weight
    total = num_a + num_c
    return np.column_stack([num_a / total, num_c / total])


def detect_batch(
    ensemble: DetectorEnsemble, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Labels plus fused (P_a, P_c) for a raw-unit batch."""
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    fused = _ensemble_proba(ensemble, x2)
    labels = np.where(fused[:, 0] > ensemble.threshold, ADVERSARIAL, CLEAN)
    return labels, fused[:, 0], fused[:, 1]


def detect(ensemble: DetectorEnsemble, v: np.ndarray) -> tuple[int, float, float]:
    """Classify one raw-unit vector: adversarial iff P_a strictly exceeds
    the threshold (an exact tie passes as clean)."""
    labels, p_a, p_c = detect_batch(ensemble, v)
    return int(labels[0]), float(p_a[0]), float(p_c[0])


def pipeline_classify(ensemble: DetectorEnsemble, nids, v: np.ndarray) -> str:
    """Detector-filtered NIDS: rejected instances never reach the NIDS."""
    label, _, _ = detect(ensemble, v)
    if label == ADVERSARIAL:
        return REJECTED
    x = np.asarray(v, dtype=float)[None, :]
    if getattr(nids, "scaler", None) is not None:
        x = nids.scaler.transform(x)
    return _PIPELINE_LABELS[int(np.atleast_1d(nids.predict(x))[0])]


def pipeline_classify_batch(
    ensemble: DetectorEnsemble, nids, x: np.ndarray
) -> list[str]:
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    det_labels, _, _ = detect_batch(ensemble, x2)
    out = [REJECTED] * x2.shape[0]
    passed = np.flatnonzero(det_labels == CLEAN)
    if passed.size:
        xp = x2[passed]
        if getattr(nids, "scaler", None) is not None:
            xp = nids.scaler.transform(xp)
        for i, label in zip(passed, np.atleast_1d(nids.predict(xp))):
            out[i] = _PIPELINE_LABELS[int(label)]
    return out


# ---------------------------------------------------------------------------
# Adversarial-training-detection baseline


@dataclass
class AdvTrainDetector:
    base: MLP
    robust: MLP
    scaler: Scaler


def train_adv_training_detector(
    clean: LabeledDataset,
    adversarial: np.ndarray,
    seed: int,
    params: MLPParams | None = None,
) -> AdvTrainDetector:
    """Clean-only model plus a model trained on a 50/50 clean/adversarial mix.

    Adversarial rows carry the malicious label in the robust model's training
    set (they are malicious flows in disguise).  Both models share the scaler
    fitted on the clean training data.
    """
    adversarial = np.atleast_2d(np.asarray(adversarial, dtype=float))
    if adversarial.shape[0] == 0:
        raise DataError("baseline needs a non-empty adversarial set")
    params = params or MLPParams(hidden_layers=2, neurons_per_layer=128)
    scaler = Scaler.fit(clean.x)

    base = MLP(params, n_features=clean.schema.arity, seed=seed)
    base.fit(scaler.transform(clean.x), clean.y)
    base.scaler = scaler

    rng = np.random.default_rng(seed + 1)
    n = min(len(clean), adversarial.shape[0])
    clean_rows: list[np.ndarray] = []
    # stratified subsample of the clean side so the mix keeps both classes
    for cls in (BENIGN, MALICIOUS):
        idx = np.flatnonzero(clean.y == cls)
        take = round(n * idx.size / len(clean))
        clean_rows.append(rng.permutation(idx)[:take])
    keep = np.sort(np.concatenate(clean_rows))
    adv_keep = np.sort(rng.choice(adversarial.shape[0], n, replace=False))

    x_mix = np.vstack([clean.x[keep], adversarial[adv_keep]])
    y_mix = np.concatenate([clean.y[keep], np.full(n, MALICIOUS)])
    robust = MLP(params, n_features=clean.schema.arity, seed=seed + 2)
    robust.fit(scaler.transform(x_mix), y_mix)
    robust.scaler = scaler
    return AdvTrainDetector(base=base, robust=robust, scaler=scaler)


def detect_by_disagreement(det: AdvTrainDetector, v: np.ndarray) -> np.ndarray | int:
    """Adversarial iff the clean-trained and robust models disagree."""
    x2 = np.asarray(v, dtype=float)
    single = x2.ndim == 1
    x2 = np.atleast_2d(x2)
    scaled = det.scaler.transform(x2)
    base_pred = np.atleast_1d(det.base.predict(scaled))
    robust_pred = np.atleast_1d(det.robust.predict(scaled))
    out = np.where(base_pred != robust_pred, ADVERSARIAL, CLEAN)
    return int(out[0]) if single else out


# ---------------------------------------------------------------------------
# Persistence: three model files plus a JSON head.


def save_ensemble(ensemble: DetectorEnsemble, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    head = {
        "threshold": ensemble.threshold,
        "weights": [d.weight for d in ensemble.detectors],
        "groups": {d.name: [int(c) for c in d.columns] for d in ensemble.detectors},
        "scaler": {"min": ensemble.scaler.min.tolist(),
                   "max": ensemble.scaler.max.tolist()},
    }
    with open(os.path.join(outdir, "ensemble.json"), "w", encoding="utf-8") as fh:
        json.dump(head, fh, indent=2, sort_keys=True)
    for det in ensemble.detectors:
        save_model(det.clf, os.path.join(outdir, f"detector_{det.name}.npz"))


def load_ensemble(outdir) -> DetectorEnsemble:
    with open(os.path.join(outdir, "ensemble.json"), "r", encoding="utf-8") as fh:
        head = json.load(fh)
    detectors = []
    for name, weight in zip(_GROUP_NAMES, head["weights"]):
        clf = load_model(os.path.join(outdir, f"detector_{name}.npz"))
        detectors.append(
            SubDetector(
                name=name,
                columns=np.array(head["groups"][name], dtype=np.intp),
                clf=clf,
                weight=float(weight),
            )
        )
    scaler = Scaler(np.array(head["scaler"]["min"]), np.array(head["scaler"]["max"]))
    return DetectorEnsemble(tuple(detectors), scaler=scaler,
                            threshold=float(head["threshold"]))
