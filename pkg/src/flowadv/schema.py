"""Flow-feature schema: manipulability groups, dependency rules, projection.

A schema declares, for every column of a flow record, a name, a unit, and a
manipulability group:

* ``modifiable``  -- factors an attacker can change directly in traffic
  (flow duration, byte counts in each direction, packet count),
* ``dependent``   -- derived quantities that must be recomputed whenever a
  modifiable operand changes (totals, rates, ratios),
* ``immutable``   -- everything the attacker cannot touch without breaking
  the communication (type of service, port class flags, ...).

Dependent features are tied to their operands by small arithmetic rules
(sum, ratio, per-unit).  ``project`` is the workhorse of the attack side: it
forces an arbitrarily perturbed vector back into the space of flows that
could occur on a real network, by clamping modifiable values into physical
range, rounding counts, recomputing dependents, and restoring immutables.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import SchemaError

__all__ = [
    "Group",
    "DependencyRule",
    "FeatureDef",
    "FeatureSchema",
    "FeatureBounds",
    "Violation",
    "SchemaReport",
    "InstanceReport",
    "default_schema",
    "load_schema",
    "schema_from_dict",
    "schema_to_dict",
    "validate_schema",
    "recompute_dependents",
    "project",
    "validate_instance",
]

# Relative tolerance used when checking that a dependent feature still equals
# its formula; absorbs float error accumulated over iterative crafting.
DEPENDENT_REL_TOL = 1e-6


class Group(str, enum.Enum):
    MODIFIABLE = "modifiable"
    DEPENDENT = "dependent"
    IMMUTABLE = "immutable"


_FORMULAS = ("sum", "ratio", "per_unit")


@dataclass(frozen=True)
class DependencyRule:
    """One dependent feature expressed in terms of two operand features.

    ``zero_denominator`` is what the target takes when the divisor is zero
    and the numerator is not: the string ``"max"`` (the target's dataset
    maximum, the default) or a literal number.  A zero numerator over a zero
    denominator always yields 0, mirroring how a flow with no bytes in
    either direction has a zero ratio rather than a pseudo-infinite one.
    """

    target: str
    formula: str
    operands: tuple[str, str]
    zero_denominator: float | str = "max"

    def __post_init__(self) -> None:
        if self.formula not in _FORMULAS:
            raise SchemaError(f"unknown formula {self.formula!r} for {self.target!r}")
        if len(self.operands) != 2:
            raise SchemaError(f"rule for {self.target!r} needs exactly two operands")
        if isinstance(self.zero_denominator, str) and self.zero_denominator != "max":
            raise SchemaError(
                f"zero_denominator must be a number or 'max', got {self.zero_denominator!r}"
            )


@dataclass(frozen=True)
class FeatureDef:
    """One column: name, group, unit, physical floor, integrality."""

    name: str
    group: Group
    unit: str = ""
    floor: float = 0.0
    integral: bool = False


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureDef, ...]
    rules: tuple[DependencyRule, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.features)

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {f.name: i for i, f in enumerate(self.features)}

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def group_of(self, name: str) -> Group:
        return self.features[self.index_of(name)].group

    def indices(self, group: Group) -> np.ndarray:
        return np.array(
            [i for i, f in enumerate(self.features) if f.group is group], dtype=np.intp
        )

    def names_in(self, group: Group) -> tuple[str, ...]:
        return tuple(f.name for f in self.features if f.group is group)

    @cached_property
    def modifiable_names(self) -> tuple[str, ...]:
        return self.names_in(Group.MODIFIABLE)

    def rule_for(self, name: str) -> DependencyRule | None:
        for rule in self.rules:
            if rule.target == name:
                return rule
        return None

    @cached_property
    def floors(self) -> np.ndarray:
        return np.array([f.floor for f in self.features], dtype=float)

    @cached_property
    def integral_mask(self) -> np.ndarray:
        return np.array([f.integral for f in self.features], dtype=bool)

    def topological_rules(self) -> tuple[DependencyRule, ...]:
        """Rules ordered so every operand is final before its dependents.

        Kahn's algorithm, with declaration order as the stable tie-break, so
        evaluation is deterministic regardless of how rules were listed.
        """
        targets = {r.target for r in self.rules}
        pending = list(self.rules)
        resolved: set[str] = set(self.names) - targets
        ordered: list[DependencyRule] = []
        while pending:
            progressed = False
            for rule in list(pending):
                if all(op in resolved for op in rule.operands):
                    ordered.append(rule)
                    resolved.add(rule.target)
                    pending.remove(rule)
                    progressed = True
            if not progressed:
                cyclic = ", ".join(sorted(r.target for r in pending))
                raise SchemaError(f"cyclic dependency rules involving: {cyclic}")
        return tuple(ordered)


@dataclass(frozen=True)
class FeatureBounds:
    """Per-feature min/max observed over a reference dataset.

    Projection clamps modifiable values to ``max``; the lower clamp is the
    schema's physical floor, not ``min``.
    """

    names: tuple[str, ...]
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if lo.shape != (len(self.names),) or hi.shape != (len(self.names),):
            raise SchemaError("bounds arrays must match the feature list")
        if np.any(lo > hi):
            bad = [n for n, a, b in zip(self.names, lo, hi) if a > b]
            raise SchemaError(f"min > max for features: {bad}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def from_data(cls, schema: FeatureSchema, x: np.ndarray) -> "FeatureBounds":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != schema.arity:
            raise SchemaError("data must be (n, arity) to fit bounds")
        if x.shape[0] == 0:
            raise SchemaError("cannot fit bounds on an empty dataset")
        return cls(schema.names, x.min(axis=0), x.max(axis=0))

    @classmethod
    def unbounded(cls, schema: FeatureSchema) -> "FeatureBounds":
        n = schema.arity
        return cls(schema.names, np.full(n, -np.inf), np.full(n, np.inf))

    def max_of(self, name: str, schema: FeatureSchema) -> float:
        return float(self.max[schema.index_of(name)])


@dataclass(frozen=True)
class Violation:
    kind: str
    feature: str
    detail: str

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"[{self.kind}] {self.feature}: {self.detail}"


@dataclass(frozen=True)
class SchemaReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class InstanceReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_schema(schema: FeatureSchema) -> SchemaReport:
    """Structural checks; failures are reported, never raised."""
    out: list[Violation] = []
    seen: dict[str, int] = {}
    for f in schema.features:
        if f.name in seen:
            out.append(Violation("duplicate", f.name, "feature name declared twice"))
        seen[f.name] = seen.get(f.name, 0) + 1

    dependents = {f.name for f in schema.features if f.group is Group.DEPENDENT}
    ruled: dict[str, int] = {}
    for rule in schema.rules:
        ruled[rule.target] = ruled.get(rule.target, 0) + 1
        if rule.target not in seen:
            out.append(Violation("rule", rule.target, "rule targets unknown feature"))
            continue
        if rule.target not in dependents:
            out.append(
                Violation("rule", rule.target, "rule targets a non-dependent feature")
            )
        for op in rule.operands:
            if op not in seen:
                out.append(Violation("rule", rule.target, f"unknown operand {op!r}"))
            elif schema.group_of(op) is Group.IMMUTABLE:
                out.append(
                    Violation("rule", rule.target, f"operand {op!r} is immutable")
                )
        if rule.target in rule.operands:
            out.append(Violation("cycle", rule.target, "rule references its own target"))

    for name in dependents:
        n = ruled.get(name, 0)
        if n == 0:
            out.append(Violation("rule", name, "dependent feature has no rule"))
        elif n > 1:
            out.append(Violation("rule", name, "dependent feature has multiple rules"))

    try:
        schema.topological_rules()
    except SchemaError as exc:
        out.append(Violation("cycle", "-", str(exc)))

    return SchemaReport(tuple(out))


def _apply_rule(
    rule: DependencyRule,
    values: np.ndarray,
    schema: FeatureSchema,
    bounds: FeatureBounds,
) -> float:
    a = float(values[schema.index_of(rule.operands[0])])
    b = float(values[schema.index_of(rule.operands[1])])
    if rule.formula == "sum":
        return a + b
    # ratio and per_unit share the same arithmetic; they differ in intent
    # (dimensionless ratio vs quantity per divisor unit).
    if b != 0.0:
        return a / b
    if a == 0.0:
        return 0.0
    if rule.zero_denominator == "max":
        return bounds.max_of(rule.target, schema)
    return float(rule.zero_denominator)


def recompute_dependents(
    schema: FeatureSchema, v: np.ndarray, bounds: FeatureBounds
) -> np.ndarray:
    """Return a copy of ``v`` with every dependent feature recomputed."""
    v = np.asarray(v, dtype=float)
    if v.shape != (schema.arity,):
        raise SchemaError(f"expected vector of arity {schema.arity}, got {v.shape}")
    out = v.copy()
    for rule in schema.topological_rules():
        out[schema.index_of(rule.target)] = _apply_rule(rule, out, schema, bounds)
    return out


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def project(
    schema: FeatureSchema,
    v: np.ndarray,
    bounds: FeatureBounds,
    original: np.ndarray,
) -> np.ndarray:
    """Map a perturbed vector back into the space of realizable flows.

    Syntactic step: modifiable values are clamped into [physical floor,
    dataset max] and count-like values are rounded half-up to whole numbers
    (integral features are clamped to the whole-number range inside the
    bounds so rounding cannot push them back out).  Semantic step: dependent
    features are recomputed from their rules.  Immutable features are
    restored bit-exactly from ``original``.  Idempotent by construction.
    """
    v = np.asarray(v, dtype=float)
    original = np.asarray(original, dtype=float)
    if v.shape != (schema.arity,) or original.shape != (schema.arity,):
        raise SchemaError(f"expected vectors of arity {schema.arity}")
    out = v.copy()

    mod = schema.indices(Group.MODIFIABLE)
    lo = schema.floors[mod].copy()
    hi = bounds.max[mod].copy()
    integral = schema.integral_mask[mod]
    lo[integral] = np.ceil(lo[integral])
    hi[integral] = np.floor(hi[integral])
    hi = np.maximum(hi, lo)  # physical floor wins over degenerate bounds

    vals = out[mod]
    vals[integral] = _round_half_up(vals[integral])
    out[mod] = np.clip(vals, lo, hi)

    out = recompute_dependents(schema, out, bounds)

    imm = schema.indices(Group.IMMUTABLE)
    out[imm] = original[imm]
    return out


def validate_instance(
    schema: FeatureSchema,
    v: np.ndarray,
    bounds: FeatureBounds,
    original: np.ndarray,
    rel_tol: float = DEPENDENT_REL_TOL,
) -> InstanceReport:
    """Report every syntactic/semantic violation of ``v``.

    Checks modifiable range, count integrality, dependent-rule consistency
    (within ``rel_tol`` relative), and immutable drift against ``original``.
    """
    v = np.asarray(v, dtype=float)
    original = np.asarray(original, dtype=float)
    out: list[Violation] = []
    if v.shape != (schema.arity,):
        return InstanceReport(
            (Violation("arity", "-", f"expected {schema.arity} values, got {v.shape}"),)
        )

    for i in schema.indices(Group.MODIFIABLE):
        f = schema.features[i]
        lo = np.ceil(f.floor) if f.integral else f.floor
        hi = np.floor(bounds.max[i]) if f.integral else bounds.max[i]
        hi = max(hi, lo)
        if not (lo <= v[i] <= hi):
            out.append(
                Violation("range", f.name, f"value {v[i]!r} outside [{lo}, {hi}]")
            )

    for i in np.flatnonzero(schema.integral_mask):
        if v[i] != np.floor(v[i]):
            out.append(
                Violation("integral", schema.features[i].name, f"value {v[i]!r} not whole")
            )

    for rule in schema.topological_rules():
        j = schema.index_of(rule.target)
        expect = _apply_rule(rule, v, schema, bounds)
        if abs(v[j] - expect) > rel_tol * max(1.0, abs(expect)):
            out.append(
                Violation(
                    "dependent",
                    rule.target,
                    f"value {v[j]!r} != {expect!r} from {rule.formula}{rule.operands}",
                )
            )

    for i in schema.indices(Group.IMMUTABLE):
        if v[i] != original[i]:
            out.append(
                Violation(
                    "immutable",
                    schema.features[i].name,
                    f"value {v[i]!r} drifted from {original[i]!r}",
                )
            )
    return InstanceReport(tuple(out))


# ---------------------------------------------------------------------------
# Schema files


def schema_from_dict(spec: dict) -> FeatureSchema:
    feats: list[FeatureDef] = []
    rules: list[DependencyRule] = []
    for entry in spec.get("features", []):
        try:
            group = Group(entry["group"])
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"bad feature entry {entry!r}: {exc}") from None
        feats.append(
            FeatureDef(
                name=entry["name"],
                group=group,
                unit=entry.get("unit", ""),
                floor=float(entry.get("floor", 0.0)),
                integral=bool(entry.get("integral", False)),
            )
        )
        if "rule" in entry:
            r = entry["rule"]
            rules.append(
                DependencyRule(
                    target=entry["name"],
                    formula=r["formula"],
                    operands=tuple(r["operands"]),
                    zero_denominator=r.get("zero_denominator", "max"),
                )
            )
    schema = FeatureSchema(tuple(feats), tuple(rules))
    report = validate_schema(schema)
    if not report.ok:
        raise SchemaError("; ".join(str(x) for x in report.violations))
    return schema


def schema_to_dict(schema: FeatureSchema) -> dict:
    out = []
    for f in schema.features:
        entry: dict = {"name": f.name, "group": f.group.value, "unit": f.unit}
        if f.floor:
            entry["floor"] = f.floor
        if f.integral:
            entry["integral"] = True
        rule = schema.rule_for(f.name)
        if rule is not None:
            entry["rule"] = {
                "formula": rule.formula,
                "operands": list(rule.operands),
                "zero_denominator": rule.zero_denominator,
            }
        out.append(entry)
    return {"features": out}


def load_schema(path) -> FeatureSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))


def default_schema() -> FeatureSchema:
    """The shipped flow schema: 4 modifiable, 5 dependent, 5 immutable."""
    text = resources.files("flowadv.resources").joinpath("default_schema.json").read_text()
    return schema_from_dict(json.loads(text))
