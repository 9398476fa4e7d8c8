"""Black-box adversarial flow crafting.

The attacker knows only sniffed traffic statistics (per-factor benign and
malicious means) and a surrogate model trained on his own half of the data.
Crafting walks an escalation ladder: at step t it tries, for each of the 15
nonempty subsets of the modifiable factors (the mask table), a perturbation

    eps(f) = sign(benign_mean(f) - x0(f)) * (c * t) * m(f)

where m is either the absolute benign/malicious mean difference or the
malicious/benign mean ratio.  Every candidate is projected back into the
space of realizable flows before the surrogate is queried; the first
candidate the surrogate calls benign wins.  Only the surrogate is ever
queried -- the function does not take, and cannot touch, a defender model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import BENIGN, LabeledDataset
from .errors import ConfigError, DataError, StatsError
from .schema import FeatureBounds, FeatureSchema, Group, project

__all__ = [
    "TrafficStats",
    "compute_stats",
    "Mask",
    "mask_table",
    "enumerate_masks",
    "MASK_FACTOR_ORDER",
    "AttackConfig",
    "perturbation",
    "CraftResult",
    "craft",
    "craft_batch",
    "TimingReport",
    "PerturbationReport",
    "perturbation_report",
]

# Bit order of the shipped mask table, most-significant bit first: mask id 1
# is 0001 (duration only) and id 15 is 1111 (all four factors).
MASK_FACTOR_ORDER = ("OutBytes", "InBytes", "TotPkts", "Dur")


@dataclass(frozen=True)
class TrafficStats:
    """Sniffed per-factor means over the attacker's benign and malicious sets."""

    features: tuple[str, ...]
    benign_mean: np.ndarray
    malicious_mean: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.benign_mean, dtype=float)
        m = np.asarray(self.malicious_mean, dtype=float)
        if b.shape != (len(self.features),) or m.shape != (len(self.features),):
            raise StatsError("means must match the feature list")
        object.__setattr__(self, "benign_mean", b)
        object.__setattr__(self, "malicious_mean", m)

    def index_of(self, name: str) -> int:
        try:
            return self.features.index(name)
        except ValueError:
            raise StatsError(f"no statistics for feature {name!r}") from None

    @property
    def mean_diff(self) -> np.ndarray:
        return np.abs(self.benign_mean - self.malicious_mean)

    @property
    def ratio_defined(self) -> np.ndarray:
        return self.benign_mean != 0.0

    @property
    def mean_ratio(self) -> np.ndarray:
        out = np.zeros_like(self.benign_mean)
        ok = self.ratio_defined
        out[ok] = self.malicious_mean[ok] / self.benign_mean[ok]
        return out

    def undefined_ratio_features(self) -> tuple[str, ...]:
        return tuple(
            name for name, ok in zip(self.features, self.ratio_defined) if not ok
        )


def compute_stats(benign: LabeledDataset, malicious: LabeledDataset) -> TrafficStats:
    """Arithmetic means of each modifiable factor, in raw (unscaled) units."""
    if len(benign) == 0 or len(malicious) == 0:
        raise StatsError("statistics need non-empty benign and malicious sets")
    if benign.schema.names != malicious.schema.names:
        raise StatsError("benign and malicious sets must share a schema")
    schema = benign.schema
    idx = schema.indices(Group.MODIFIABLE)
    return TrafficStats(
        features=schema.modifiable_names,
        benign_mean=benign.x[:, idx].mean(axis=0),
        malicious_mean=malicious.x[:, idx].mean(axis=0),
    )


@dataclass(frozen=True)
class Mask:
    """One nonempty subset of the modifiable factors."""

    id: int
    bits: tuple[bool, ...]
    factors: tuple[str, ...]

    def targets(self) -> tuple[str, ...]:
        return tuple(f for f, on in zip(self.factors, self.bits) if on)


def enumerate_masks(factors: tuple[str, ...]) -> tuple[Mask, ...]:
    """All nonempty factor subsets; mask id n is n written in binary over
    ``factors`` (first factor = most significant bit)."""
    k = len(factors)
    if k == 0:
        raise ConfigError("mask enumeration needs at least one factor")
    masks = []
    for n in range(1, 2**k):
        bits = tuple(bool((n >> (k - 1 - i)) & 1) for i in range(k))
        masks.append(Mask(id=n, bits=bits, factors=factors))
    return tuple(masks)


def mask_table() -> tuple[Mask, ...]:
    """The 15-row mask table over (OutBytes, InBytes, TotPkts, Dur)."""
    return enumerate_masks(MASK_FACTOR_ORDER)


def _masks_for(schema: FeatureSchema) -> tuple[Mask, ...]:
    names = schema.modifiable_names
    if set(names) == set(MASK_FACTOR_ORDER):
        return mask_table()
    return enumerate_masks(names)


@dataclass(frozen=True)
class AttackConfig:
    method: str = "mean_diff"  # or "mean_ratio"
    c: float = 0.1
    t_max: int = 100
    cumulative: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in ("mean_diff", "mean_ratio"):
            raise ConfigError(f"unknown perturbation method {self.method!r}")
        if not self.c > 0:
            raise ConfigError("coefficient c must be positive")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")


def _magnitudes(config: AttackConfig, stats: TrafficStats) -> np.ndarray:
    if config.method == "mean_diff":
        return stats.mean_diff
    return stats.mean_ratio  # zeros where undefined, flagged by the caller


def perturbation(
    f: str, t: int, config: AttackConfig, stats: TrafficStats, x0_f: float
) -> float:
    """Raw-unit perturbation for factor ``f`` at escalation step ``t``.

    A factor already sitting at the benign mean gets sign 0 and is never
    perturbed; a mean-ratio request for a factor whose benign mean is zero
    yields 0 (the factor is reported by ``stats.undefined_ratio_features``).
    """
    if t < 1:
        raise ConfigError("perturbation step t starts at 1")
    i = stats.index_of(f)
    m = float(_magnitudes(config, stats)[i])
    return float(np.sign(stats.benign_mean[i] - x0_f)) * (config.c * t) * m


@dataclass(frozen=True)
class CraftResult:
    adversarial: np.ndarray
    evaded: bool
    iterations: int
    mask_id: int | None
    n_queries: int
    elapsed: float
    flags: tuple[str, ...] = ()


def craft(
    x: np.ndarray,
    surrogate,
    schema: FeatureSchema,
    bounds: FeatureBounds,
    stats: TrafficStats,
    config: AttackConfig,
) -> CraftResult:
    """Craft one adversarial flow from malicious instance ``x``.

    Escalates t = 1..t_max, trying the 15 masks in table order at each step;
    candidates are projected, then classified by the surrogate (scaled
    through the surrogate's own scaler when it has one).  Returns on the
    first benign-classified candidate.  With ``cumulative`` (the default)
    the working vector keeps accumulating masked perturbations across the
    mask loop and across steps; otherwise every candidate restarts from the
    original instance.  If t_max is exhausted the last candidate is returned
    with ``evaded=False``.
    """
    started = time.perf_counter()
    x0 = np.asarray(x, dtype=float)
    if x0.shape != (schema.arity,):
        raise DataError(f"instance must have arity {schema.arity}, got {x0.shape}")
    if not np.isfinite(x0).all():
        raise DataError("instance contains non-finite values")

    masks = _masks_for(schema)
    mod_idx = np.array([schema.index_of(f) for f in stats.features], dtype=np.intp)
    mask_rows = np.array([[m.bits[m.factors.index(f)] for f in stats.features]
                          for m in masks], dtype=float)
    sign = np.sign(stats.benign_mean - x0[mod_idx])
    magnitude = _magnitudes(config, stats)
    flags = (
        stats.undefined_ratio_features() if config.method == "mean_ratio" else ()
    )

    scaler = getattr(surrogate, "scaler", None)
    current = x0.copy()
    n_queries = 0
    candidates = np.empty((len(masks), schema.arity))

    for t in range(1, config.t_max + 1):
        eps = sign * (config.c * t) * magnitude
        base = current
        for j, row in enumerate(mask_rows):
            cand = (base if config.cumulative else x0).copy()
            cand[mod_idx] += eps * row
            candidates[j] = project(schema, cand, bounds, x0)
            if config.cumulative:
                base = candidates[j]
        queries = scaler.transform(candidates) if scaler is not None else candidates
        labels = np.atleast_1d(surrogate.predict(queries))
        benign_hits = np.flatnonzero(labels == BENIGN)
        if benign_hits.size:
            j = int(benign_hits[0])
            return CraftResult(
                adversarial=candidates[j].copy(),
                evaded=True,
                iterations=t,
                mask_id=masks[j].id,
                n_queries=n_queries + j + 1,
                elapsed=time.perf_counter() - started,
                flags=flags,
            )
        n_queries += len(masks)
        if config.cumulative:
            current = candidates[-1].copy()

    return CraftResult(
        adversarial=candidates[-1].copy(),
        evaded=False,
        iterations=config.t_max,
        mask_id=None,
        n_queries=n_queries,
        elapsed=time.perf_counter() - started,
        flags=flags,
    )


@dataclass(frozen=True)
class TimingReport:
    surrogate_kind: str
    n_instances: int
    total_seconds: float
    mean_seconds: float

    def to_dict(self) -> dict:
        return {
            "surrogate_kind": self.surrogate_kind,
            "n_instances": self.n_instances,
            "total_seconds": self.total_seconds,
            "mean_seconds": self.mean_seconds,
        }


def craft_batch(
    instances: np.ndarray,
    surrogate,
    schema: FeatureSchema,
    bounds: FeatureBounds,
    stats: TrafficStats,
    config: AttackConfig,
) -> tuple[list[CraftResult], TimingReport]:
    """Craft a batch in input order; wall time is measured over the batch."""
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    started = time.perf_counter()
    results = [
        craft(row, surrogate, schema, bounds, stats, config) for row in instances
    ]
    total = time.perf_counter() - started if len(results) else 0.0
    report = TimingReport(
        surrogate_kind=getattr(surrogate, "kind", "unknown"),
        n_instances=len(results),
        total_seconds=total,
        mean_seconds=total / len(results) if results else 0.0,
    )
    return results, report


@dataclass(frozen=True)
class PerturbationReport:
    """Per-factor mean and max absolute perturbation, in raw units."""

    features: tuple[str, ...]
    mean_abs: np.ndarray
    max_abs: np.ndarray

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "mean_abs": [float(v) for v in self.mean_abs],
            "max_abs": [float(v) for v in self.max_abs],
        }


def perturbation_report(pairs, schema: FeatureSchema) -> PerturbationReport:
    """Summarize |adversarial - original| per modifiable factor.

    ``pairs`` is an iterable of (original, adversarial) vectors or a pair of
    equally shaped (n, arity) arrays.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2:
        originals, adversarials = (np.asarray(p, dtype=float) for p in pairs)
    else:
        pairs = list(pairs)
        originals = np.array([np.asarray(o, dtype=float) for o, _ in pairs])
        adversarials = np.array([np.asarray(a, dtype=float) for _, a in pairs])
        if not pairs:
            originals = originals.reshape(0, schema.arity)
            adversarials = adversarials.reshape(0, schema.arity)
    if originals.shape != adversarials.shape or (
        originals.size and originals.shape[1] != schema.arity
    ):
        raise DataError("perturbation pairs must share the schema arity")

    idx = schema.indices(Group.MODIFIABLE)
    if originals.shape[0] == 0:
        zeros = np.zeros(idx.size)
        return PerturbationReport(schema.modifiable_names, zeros, zeros.copy())
    delta = np.abs(adversarials[:, idx] - originals[:, idx])
    return PerturbationReport(
        features=schema.modifiable_names,
        mean_abs=delta.mean(axis=0),
        max_abs=delta.max(axis=0),
    )
