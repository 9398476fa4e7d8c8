"""Datasets: CSV ingestion, attacker/defender partitioning, scaling, synthesis.

The experiment layout splits one labeled flow dataset into two equal,
label-stratified halves (one per side), and each half again into 75% train
and 25% test.  Min-max scaling is always fitted on a training split only.

A deterministic synthetic generator produces desk-scale flow datasets with
log-normal duration/byte/packet distributions so the whole pipeline can run
without the original captures.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, SchemaError
from .schema import (
    FeatureBounds,
    FeatureSchema,
    Group,
    default_schema,
    recompute_dependents,
)

__all__ = [
    "BENIGN",
    "MALICIOUS",
    "LABEL_NAMES",
    "one_hot_labels",
    "labels_from_one_hot",
    "LabeledDataset",
    "LoadReport",
    "load_csv",
    "save_csv",
    "SplitBundle",
    "partition",
    "write_split",
    "Scaler",
    "fit_scaler",
    "SynthParams",
    "synth_generate",
    "family_params",
    "FAMILY_NAMES",
]

BENIGN = 0
MALICIOUS = 1
LABEL_NAMES = ("benign", "malicious")

# One-hot label encoding used by the neural models: benign=(1,0), malicious=(0,1).
_ONE_HOT = np.eye(2, dtype=float)


def one_hot_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    if y.ndim != 1 or not np.isin(y, (BENIGN, MALICIOUS)).all():
        raise DataError("labels must be a 1-d array of 0 (benign) / 1 (malicious)")
    return _ONE_HOT[y]


def labels_from_one_hot(encoded: np.ndarray) -> np.ndarray:
    encoded = np.asarray(encoded, dtype=float)
    if encoded.ndim != 2 or encoded.shape[1] != 2:
        raise DataError("one-hot labels must be (n, 2)")
    return encoded.argmax(axis=1)


@dataclass(frozen=True)
class LoadReport:
    rows_read: int = 0
    rows_kept: int = 0
    dropped_missing: int = 0
    rejected_unparseable: int = 0
    ratio_rewrites: int = 0
    counts_coerced: int = 0
    ignored_columns: tuple[str, ...] = ()


@dataclass(frozen=True)
class LabeledDataset:
    """Flow vectors plus benign/malicious labels under one schema."""

    x: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    source: str = ""
    report: LoadReport | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 2 or x.shape[1] != self.schema.arity:
            raise DataError(f"vectors must be (n, {self.schema.arity}), got {x.shape}")
        if y.shape != (x.shape[0],):
            raise DataError("vectors and labels must have equal length")
        if x.shape[0] and not np.isin(y, (BENIGN, MALICIOUS)).all():
            raise DataError("labels must be 0 (benign) or 1 (malicious)")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    def class_counts(self) -> tuple[int, int]:
        return int((self.y == BENIGN).sum()), int((self.y == MALICIOUS).sum())

    def subset(self, indices: np.ndarray, source: str | None = None) -> "LabeledDataset":
        return LabeledDataset(
            self.x[indices], self.y[indices], self.schema,
            self.source if source is None else source,
        )

    def only(self, label: int) -> "LabeledDataset":
        return self.subset(np.flatnonzero(self.y == label))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.x.tobytes())
        h.update(self.y.tobytes())
        return h.hexdigest()


def load_csv(path, schema: FeatureSchema, label_column: str = "Label") -> LabeledDataset:
    """Read a labeled flow CSV, cleaning it on the way in.

    Rows with missing values are dropped; rows with unparseable numerics or
    unknown labels are rejected and counted.  Counts declared integral by
    the schema are coerced to whole numbers, and any ratio-rule feature whose
    operands are both zero is rewritten to 0 (replacing the pseudo-infinite
    convention some exports use for a zero-byte exchange).
    """
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    df.columns = [c.strip() for c in df.columns]

    missing_cols = [n for n in (*schema.names, label_column) if n not in df.columns]
    if missing_cols:
        raise SchemaError(f"CSV is missing schema columns: {missing_cols}")
    ignored = tuple(c for c in df.columns if c not in schema.names and c != label_column)

    rows_read = len(df)
    raw = df[list(schema.names)]
    labels_raw = df[label_column].str.strip().str.lower()

    missing_mask = (raw == "").any(axis=1) | (labels_raw == "")
    numeric = raw.apply(pd.to_numeric, errors="coerce")
    unparseable_mask = (numeric.isna() & (raw != "")).any(axis=1)
    label_codes = labels_raw.map({n: i for i, n in enumerate(LABEL_NAMES)})
    unparseable_mask |= label_codes.isna() & ~missing_mask

    keep = ~(missing_mask | unparseable_mask)
    x = numeric[keep].to_numpy(dtype=float)
    y = label_codes[keep].to_numpy(dtype=np.int64)

    counts_coerced = 0
    integral = schema.integral_mask
    if x.size:
        whole = np.floor(x[:, integral] + 0.5)
        counts_coerced = int((whole != x[:, integral]).sum())
        x[:, integral] = whole

    ratio_rewrites = 0
    for rule in schema.rules:
        if rule.formula != "ratio" or not x.size:
            continue
        a = x[:, schema.index_of(rule.operands[0])]
        b = x[:, schema.index_of(rule.operands[1])]
        j = schema.index_of(rule.target)
        both_zero = (a == 0) & (b == 0)
        ratio_rewrites += int((x[both_zero, j] != 0).sum())
        x[both_zero, j] = 0.0

    report = LoadReport(
        rows_read=rows_read,
        rows_kept=int(keep.sum()),
        dropped_missing=int(missing_mask.sum()),
        rejected_unparseable=int((unparseable_mask & ~missing_mask).sum()),
        ratio_rewrites=ratio_rewrites,
        counts_coerced=counts_coerced,
        ignored_columns=ignored,
    )
    source = os.path.splitext(os.path.basename(str(path)))[0]
    return LabeledDataset(x, y, schema, source=source, report=report)


def save_csv(ds: LabeledDataset, path, label_column: str = "Label") -> None:
    df = pd.DataFrame(ds.x, columns=list(ds.schema.names))
    df[label_column] = [LABEL_NAMES[v] for v in ds.y]
    df.to_csv(path, index=False)


# ---------------------------------------------------------------------------
# Partitioning


@dataclass(frozen=True)
class SplitBundle:
    attacker_train: LabeledDataset
    attacker_test: LabeledDataset
    defender_train: LabeledDataset
    defender_test: LabeledDataset
    seed: int = 0

    def parts(self) -> dict[str, LabeledDataset]:
        return {
            "attacker_train": self.attacker_train,
            "attacker_test": self.attacker_test,
            "defender_train": self.defender_train,
            "defender_test": self.defender_test,
        }

    def manifest(self) -> dict:
        out: dict = {"seed": self.seed}
        for name, part in self.parts().items():
            b, m = part.class_counts()
            out[name] = {"rows": len(part), "benign": b, "malicious": m}
        return out


def _largest_remainder(counts: list[int], frac: float, total_target: int) -> list[int]:
    """Allocate per-class train sizes summing to ``total_target``."""
    base = [math.floor(frac * n) for n in counts]
    remainder = total_target - sum(base)
    order = sorted(
        range(len(counts)), key=lambda i: (-(frac * counts[i] - base[i]), i)
    )
    for i in order[:remainder]:
        base[i] += 1
    return base


def _train_test(per_class: list[np.ndarray], frac: float) -> tuple[np.ndarray, np.ndarray]:
    total = sum(len(idx) for idx in per_class)
    target = round(frac * total)
    sizes = _largest_remainder([len(idx) for idx in per_class], frac, target)
    train = np.concatenate([idx[:k] for idx, k in zip(per_class, sizes)])
    test = np.concatenate([idx[k:] for idx, k in zip(per_class, sizes)])
    return np.sort(train), np.sort(test)


def partition(ds: LabeledDataset, seed: int, train_frac: float = 0.75) -> SplitBundle:
    """Split into equal attacker/defender halves, then 75/25 train/test.

    Every stage is stratified by label.  Halving interleaves each class's
    shuffled rows between the two sides (alternating which side starts, per
    class) so the halves are equal sized to within one row; the train/test
    cut uses largest-remainder allocation so class proportions match the
    parent within one row.  Fully deterministic given ``seed``.
    """
    if len(ds) < 8:
        raise DataError("partition needs at least 8 rows")
    classes = np.unique(ds.y)
    if classes.size < 2:
        raise DataError("stratification requires both classes present")

    rng = np.random.default_rng(seed)
    att: list[np.ndarray] = []
    dfn: list[np.ndarray] = []
    for k, cls in enumerate(classes):
        idx = rng.permutation(np.flatnonzero(ds.y == cls))
        first, second = (att, dfn) if k % 2 == 0 else (dfn, att)
        first.append(idx[0::2])
        second.append(idx[1::2])

    at_train, at_test = _train_test(att, train_frac)
    df_train, df_test = _train_test(dfn, train_frac)
    tag = ds.source or "dataset"
    return SplitBundle(
        attacker_train=ds.subset(at_train, f"{tag}/attacker_train"),
        attacker_test=ds.subset(at_test, f"{tag}/attacker_test"),
        defender_train=ds.subset(df_train, f"{tag}/defender_train"),
        defender_test=ds.subset(df_test, f"{tag}/defender_test"),
        seed=seed,
    )


def write_split(bundle: SplitBundle, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    for name, part in bundle.parts().items():
        save_csv(part, os.path.join(outdir, f"{name}.csv"))
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(bundle.manifest(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Min-max scaling


@dataclass(frozen=True)
class Scaler:
    """Per-feature min-max scaler: x -> (x - min) / (max - min).

    Constant features map to 0 so downstream models stay well defined.
    """

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DataError("scaler min/max must be matching 1-d arrays")
        if np.any(hi < lo):
            raise DataError("scaler max must be >= min")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise DataError("scaler must be fitted on a non-empty (n, f) array")
        return cls(x.min(axis=0), x.max(axis=0))

    def _span(self) -> np.ndarray:
        span = self.max - self.min
        return np.where(span > 0, span, 1.0)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = (x - self.min) / self._span()
        constant = self.max == self.min
        if constant.any():
            out[..., constant] = 0.0
        return out

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        scaled = np.asarray(scaled, dtype=float)
        return scaled * self._span() + self.min

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.min.tobytes())
        h.update(self.max.tobytes())
        return h.hexdigest()


def fit_scaler(train: LabeledDataset) -> Scaler:
    return Scaler.fit(train.x)


# ---------------------------------------------------------------------------
# Synthetic generation

# (mu, sigma) of the underlying normal for each modifiable factor.
_BENIGN_PROFILE: dict[str, tuple[float, float]] = {
    "Dur": (math.log(18.0), 1.0),
    "OutBytes": (math.log(2200.0), 1.1),
    "InBytes": (math.log(6000.0), 1.1),
    "TotPkts": (math.log(20.0), 0.8),
}

# Malicious profiles per botnet family; tighter, smaller flows than benign.
_FAMILY_PROFILES: dict[str, dict[str, tuple[float, float]]] = {
    "neris": {
        "Dur": (math.log(1.2), 0.7),
        "OutBytes": (math.log(220.0), 0.7),
        "InBytes": (math.log(110.0), 0.7),
        "TotPkts": (math.log(5.0), 0.55),
    },
    "rbot": {
        "Dur": (math.log(0.8), 0.6),
        "OutBytes": (math.log(90.0), 0.5),
        "InBytes": (math.log(60.0), 0.5),
        "TotPkts": (math.log(3.0), 0.5),
    },
    "virut": {
        "Dur": (math.log(2.5), 1.0),
        "OutBytes": (math.log(380.0), 1.0),
        "InBytes": (math.log(260.0), 1.05),
        "TotPkts": (math.log(6.0), 0.8),
    },
    "zeus_ares": {
        "Dur": (math.log(2.0), 0.85),
        "OutBytes": (math.log(300.0), 0.9),
        "InBytes": (math.log(170.0), 0.9),
        "TotPkts": (math.log(5.0), 0.75),
    },
}

FAMILY_NAMES = tuple(_FAMILY_PROFILES)

# Destination-port class probabilities (well-known, registered, ephemeral)
# and type-of-service distributions.  Botnet C&C traffic leans on registered
# ports and odd ToS marks, so the immutable columns carry a moderate class
# signal that crafting cannot erase -- mirroring real captures, where a
# detector looking only at immutable columns lands well above chance but far
# below the modifiable-feature detectors.
_BENIGN_PORTS = (0.62, 0.08, 0.30)
_MALICIOUS_PORTS = (0.18, 0.60, 0.22)
_TOS_VALUES = (0.0, 2.0, 4.0)
_BENIGN_TOS = (0.95, 0.04, 0.01)
_MALICIOUS_TOS = (0.76, 0.17, 0.07)


@dataclass(frozen=True)
class SynthParams:
    """Log-normal generator settings for one synthetic flow dataset.

    Each class draws from a log-normal per factor; with ``straggler_frac``
    > 0, that fraction of rows comes from a second, wider log-normal pulled
    part-way toward the other class (keep-alive-like benign flows, bulkier
    malicious transfers), which populates the overlap region the way real
    captures do.
    """

    n_benign: int
    n_malicious: int
    benign: Mapping[str, tuple[float, float]]
    malicious: Mapping[str, tuple[float, float]]
    name: str = "synthetic"
    benign_stragglers: float = 0.0
    malicious_stragglers: float = 0.0

    def __post_init__(self) -> None:
        if self.n_benign < 0 or self.n_malicious < 0:
            raise ConfigError("class sizes must be non-negative")
        for frac in (self.benign_stragglers, self.malicious_stragglers):
            if not 0.0 <= frac <= 0.5:
                raise ConfigError("straggler fractions must be in [0, 0.5]")
        for side, spec in (("benign", self.benign), ("malicious", self.malicious)):
            for key in _BENIGN_PROFILE:
                if key not in spec:
                    raise ConfigError(f"{side} profile is missing {key!r}")
            for name, (mu, sigma) in spec.items():
                if not (math.isfinite(mu) and math.isfinite(sigma)) or sigma < 0:
                    raise ConfigError(f"bad log-normal params for {side}/{name}")


def family_params(family: str, n_benign: int, n_malicious: int) -> SynthParams:
    if family not in _FAMILY_PROFILES:
        raise ConfigError(f"unknown family {family!r}; known: {sorted(_FAMILY_PROFILES)}")
    return SynthParams(
        n_benign=n_benign,
        n_malicious=n_malicious,
        benign=_BENIGN_PROFILE,
        malicious=_FAMILY_PROFILES[family],
        name=family,
        benign_stragglers=_BENIGN_STRAGGLERS,
        malicious_stragglers=_MALICIOUS_STRAGGLERS,
    )


# Straggler components: a slice of each class drawn from a wider log-normal
# pulled toward the other class (in log space).  Malicious stragglers
# (bulkier transfers) are common in botnet captures; benign keep-alives are
# kept rare so the benign core stays clean.
_BENIGN_STRAGGLERS = 0.02
_MALICIOUS_STRAGGLERS = 0.12
_STRAGGLER_PULL = 0.55
_STRAGGLER_WIDEN = 1.3


def _synth_class(
    rng: np.random.Generator,
    schema: FeatureSchema,
    spec: Mapping[str, tuple[float, float]],
    other: Mapping[str, tuple[float, float]],
    straggler_frac: float,
    ports: tuple[float, float, float],
    tos: tuple[float, float, float],
    n: int,
) -> np.ndarray:
    x = np.zeros((n, schema.arity))
    n_straggler = int(round(straggler_frac * n))
    straggler = np.zeros(n, dtype=bool)
    if n_straggler:
        straggler[rng.choice(n, n_straggler, replace=False)] = True
    for name in ("Dur", "OutBytes", "InBytes", "TotPkts"):
        mu, sigma = spec[name]
        values = rng.lognormal(mu, sigma, n)
        if n_straggler:
            mu_s = mu + _STRAGGLER_PULL * (other[name][0] - mu)
            values[straggler] = rng.lognormal(
                mu_s, sigma * _STRAGGLER_WIDEN, n_straggler
            )
        x[:, schema.index_of(name)] = values
    # Keep every flow physically plausible: positive duration, at least one
    # packet, at least one byte each way (a TCP conversation acknowledges).
    x[:, schema.index_of("Dur")] = np.maximum(x[:, schema.index_of("Dur")], 1e-3)
    for name in ("OutBytes", "InBytes", "TotPkts"):
        j = schema.index_of(name)
        x[:, j] = np.maximum(np.floor(x[:, j] + 0.5), 1.0)

    x[:, schema.index_of("sTos")] = rng.choice(_TOS_VALUES, n, p=tos)
    x[:, schema.index_of("dTos")] = rng.choice(_TOS_VALUES, n, p=tos)
    port_class = rng.choice(3, n, p=ports)
    x[:, schema.index_of("DportWellKnown")] = port_class == 0
    x[:, schema.index_of("DportRegistered")] = port_class == 1
    x[:, schema.index_of("DportEphemeral")] = port_class == 2

    unbounded = FeatureBounds.unbounded(schema)
    for i in range(n):
        x[i] = recompute_dependents(schema, x[i], unbounded)
    return x


def synth_generate(
    params: SynthParams, seed: int, schema: FeatureSchema | None = None
) -> LabeledDataset:
    """Generate a valid, reproducible labeled dataset under the default schema."""
    schema = schema or default_schema()
    required = {"Dur", "OutBytes", "InBytes", "TotPkts"}
    if set(schema.modifiable_names) != required:
        raise ConfigError("synth_generate targets the default modifiable factors")

    rng = np.random.default_rng(seed)
    xb = _synth_class(
        rng, schema, params.benign, params.malicious, params.benign_stragglers,
        _BENIGN_PORTS, _BENIGN_TOS, params.n_benign,
    )
    xm = _synth_class(
        rng, schema, params.malicious, params.benign, params.malicious_stragglers,
        _MALICIOUS_PORTS, _MALICIOUS_TOS, params.n_malicious,
    )
    x = np.vstack([xb, xm])
    y = np.concatenate(
        [np.full(params.n_benign, BENIGN), np.full(params.n_malicious, MALICIOUS)]
    )
    order = rng.permutation(len(y))
    return LabeledDataset(x[order], y[order], schema, source=params.name)
