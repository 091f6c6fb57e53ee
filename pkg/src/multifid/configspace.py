"""Hierarchical conditional hyperparameter spaces: parsing, sampling, encoding.

A space is an ordered list of typed hyperparameters plus condition rules that
activate children based on parent assignments. Configurations assign exactly
the active hyperparameters. Vector encodings map configurations into the unit
cube for density models and forest surrogates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

__all__ = [
    "SpaceError",
    "HyperparameterSpec",
    "ConditionRule",
    "ConfigurationSpace",
    "DimensionKind",
    "parse_space",
    "load_space",
]

# Inactive numeric dimensions encode to the cell midpoint; categoricals get a
# dedicated extra cell appended after the real categories.
INACTIVE_NUMERIC = 0.5


class SpaceError(ValueError):
    """Invalid space definition or configuration value."""


@dataclass(frozen=True)
class HyperparameterSpec:
    name: str
    kind: str  # 'int' | 'float' | 'cat' | 'bool'
    lower: float | None = None
    upper: float | None = None
    choices: tuple[Any, ...] = ()
    log: bool = False
    default: Any = None

    def __post_init__(self) -> None:
        if self.kind not in ("int", "float", "cat", "bool"):
            raise SpaceError(f"{self.name}: unknown type {self.kind!r}")
        if self.kind in ("int", "float"):
            if self.lower is None or self.upper is None:
                raise SpaceError(f"{self.name}: numeric range required")
            if self.lower > self.upper:
                raise SpaceError(f"{self.name}: lower {self.lower} > upper {self.upper}")
            if self.log and self.lower <= 0:
                raise SpaceError(f"{self.name}: log scale requires positive lower bound")
        else:
            if self.log:
                raise SpaceError(f"{self.name}: log scale invalid for {self.kind}")
            if not self.choices:
                raise SpaceError(f"{self.name}: empty choice list")
            if len(set(self.choices)) != len(self.choices):
                raise SpaceError(f"{self.name}: duplicate choices")
        if self.default is not None and not self.contains(self.default):
            raise SpaceError(f"{self.name}: default {self.default!r} outside domain")

    @property
    def categories(self) -> tuple[Any, ...]:
        if self.kind == "bool":
            return (False, True)
        return self.choices

    def contains(self, value: Any) -> bool:
        if self.kind == "int":
            return isinstance(value, (int, np.integer)) and self.lower <= value <= self.upper
        if self.kind == "float":
            return isinstance(value, (int, float, np.floating)) and self.lower <= value <= self.upper
        return value in self.categories


@dataclass(frozen=True)
class ConditionRule:
    child: str
    parent: str
    activating_values: tuple[Any, ...]


@dataclass(frozen=True)
class DimensionKind:
    kind: str  # 'continuous' | 'integer' | 'categorical'
    n_cells: int = 0  # categorical only: real categories + 1 inactive cell


class ConfigurationSpace:
    """Immutable after construction; safe to share across threads."""

    def __init__(self, hyperparameters: Iterable[HyperparameterSpec],
                 conditions: Iterable[ConditionRule] = ()) -> None:
        self.hyperparameters = tuple(hyperparameters)
        self.conditions = tuple(conditions)
        names = [h.name for h in self.hyperparameters]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise SpaceError(f"duplicate hyperparameter name {dup!r}")
        self._by_name = {h.name: h for h in self.hyperparameters}
        self._rules_for: dict[str, list[ConditionRule]] = {}
        for rule in self.conditions:
            for endpoint in (rule.child, rule.parent):
                if endpoint not in self._by_name:
                    raise SpaceError(f"condition references unknown name {endpoint!r}")
            parent = self._by_name[rule.parent]
            for v in rule.activating_values:
                if not parent.contains(v):
                    raise SpaceError(
                        f"condition on {rule.child!r}: value {v!r} outside {rule.parent!r} domain")
            self._rules_for.setdefault(rule.child, []).append(rule)
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        state: dict[str, int] = {}  # 0 visiting, 1 done

        def visit(name: str) -> None:
            if state.get(name) == 1:
                return
            if state.get(name) == 0:
                raise SpaceError(f"cyclic condition involving {name!r}")
            state[name] = 0
            for rule in self._rules_for.get(name, ()):
                visit(rule.parent)
            state[name] = 1

        for h in self.hyperparameters:
            visit(h.name)

    def __len__(self) -> int:
        return len(self.hyperparameters)

    def __getitem__(self, name: str) -> HyperparameterSpec:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(h.name for h in self.hyperparameters)

    def top_level(self) -> tuple[str, ...]:
        return tuple(h.name for h in self.hyperparameters if h.name not in self._rules_for)

    def active_set(self, assignment: Mapping[str, Any]) -> set[str]:
        """Names reachable through satisfied condition rules.

        The assignment must cover all top-level hyperparameters; any assigned
        child values are also consulted when resolving deeper rules.
        """
        for name in assignment:
            if name not in self._by_name:
                raise SpaceError(f"unknown hyperparameter {name!r}")
        for name in self.top_level():
            if name not in assignment:
                raise SpaceError(f"top-level hyperparameter {name!r} unassigned")
        active = set(self.top_level())
        changed = True
        while changed:
            changed = False
            for h in self.hyperparameters:
                if h.name in active:
                    continue
                rules = self._rules_for.get(h.name)
                if not rules:
                    continue
                if all(r.parent in active and assignment.get(r.parent) in r.activating_values
                       for r in rules):
                    active.add(h.name)
                    changed = True
        return active

    def validate_config(self, config: Mapping[str, Any]) -> None:
        active = self.active_set(config)
        if set(config) != active:
            extra = set(config) - active
            missing = active - set(config)
            if extra:
                raise SpaceError(f"inactive hyperparameters assigned: {sorted(extra)}")
            raise SpaceError(f"active hyperparameters unassigned: {sorted(missing)}")
        for name, value in config.items():
            if not self._by_name[name].contains(value):
                raise SpaceError(f"{name}: value {value!r} outside domain")

    # -- sampling ------------------------------------------------------------

    def _topological_order(self) -> list[HyperparameterSpec]:
        order: list[HyperparameterSpec] = []
        done: set[str] = set()

        def visit(name: str) -> None:
            if name in done:
                return
            for rule in self._rules_for.get(name, ()):
                visit(rule.parent)
            done.add(name)
            order.append(self._by_name[name])

        for h in self.hyperparameters:
            visit(h.name)
        return order

    def sample_uniform(self, rng: np.random.Generator) -> dict[str, Any]:
        """Uniform sample (log-uniform where flagged); children only when active."""
        config: dict[str, Any] = {}
        for h in self._topological_order():
            rules = self._rules_for.get(h.name)
            if rules and not all(r.parent in config and config[r.parent] in r.activating_values
                                 for r in rules):
                continue
            config[h.name] = self._sample_value(h, rng)
        return config

    @staticmethod
    def _sample_value(h: HyperparameterSpec, rng: np.random.Generator) -> Any:
        if h.kind == "float":
            if h.log:
                return float(math.exp(rng.uniform(math.log(h.lower), math.log(h.upper))))
            return float(rng.uniform(h.lower, h.upper))
        if h.kind == "int":
            if h.log:
                v = round(math.exp(rng.uniform(math.log(h.lower), math.log(h.upper))))
                return int(min(max(v, h.lower), h.upper))
            return int(rng.integers(int(h.lower), int(h.upper) + 1))
        cats = h.categories
        return cats[int(rng.integers(len(cats)))]

    # -- unit-cube encoding --------------------------------------------------

    def dimension_kinds(self) -> list[DimensionKind]:
        kinds = []
        for h in self.hyperparameters:
            if h.kind == "float":
                kinds.append(DimensionKind("continuous"))
            elif h.kind == "int":
                kinds.append(DimensionKind("integer"))
            else:
                kinds.append(DimensionKind("categorical", len(h.categories) + 1))
        return kinds

    def to_unit_cube(self, config: Mapping[str, Any]) -> np.ndarray:
        """Encode a configuration as a length-d vector in [0, 1].

        Inactive numeric dimensions are imputed with the cell midpoint 0.5;
        inactive categoricals map to a dedicated extra cell.
        """
        vec = np.empty(len(self.hyperparameters))
        for i, h in enumerate(self.hyperparameters):
            if h.name not in config:
                if h.kind in ("int", "float"):
                    vec[i] = INACTIVE_NUMERIC
                else:
                    n = len(h.categories)
                    vec[i] = (n + 0.5) / (n + 1)
                continue
            vec[i] = self._encode_value(h, config[h.name])
        return vec

    @staticmethod
    def _encode_value(h: HyperparameterSpec, value: Any) -> float:
        if not h.contains(value):
            raise SpaceError(f"{h.name}: value {value!r} outside domain")
        if h.kind == "float":
            if h.log:
                return (math.log(value) - math.log(h.lower)) / (math.log(h.upper) - math.log(h.lower))
            return (value - h.lower) / (h.upper - h.lower) if h.upper > h.lower else 0.0
        if h.kind == "int":
            if h.log:
                if h.upper == h.lower:
                    return 0.0
                return (math.log(value) - math.log(h.lower)) / (math.log(h.upper) - math.log(h.lower))
            width = h.upper - h.lower + 1
            return (value - h.lower + 0.5) / width
        cats = h.categories
        return (cats.index(value) + 0.5) / (len(cats) + 1)

    def from_unit_cube(self, vector: np.ndarray) -> dict[str, Any]:
        """Inverse of to_unit_cube; drops conditional children left inactive."""
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (len(self.hyperparameters),):
            raise SpaceError(
                f"vector length {vector.shape} does not match dimensionality {len(self)}")
        full = {h.name: self._decode_value(h, float(vector[i]))
                for i, h in enumerate(self.hyperparameters)}
        active = self.active_set(full)
        return {k: v for k, v in full.items() if k in active}

    @staticmethod
    def _decode_value(h: HyperparameterSpec, u: float) -> Any:
        u = min(max(u, 0.0), 1.0)
        if h.kind == "float":
            if h.log:
                v = math.exp(math.log(h.lower) + u * (math.log(h.upper) - math.log(h.lower)))
            else:
                v = h.lower + u * (h.upper - h.lower)
            # guard against round-off drifting just past the bounds
            return float(min(max(v, h.lower), h.upper))
        if h.kind == "int":
            if h.log:
                v = round(math.exp(math.log(h.lower) + u * (math.log(h.upper) - math.log(h.lower))))
                return int(min(max(v, h.lower), h.upper))
            width = int(h.upper - h.lower + 1)
            return int(min(int(h.lower) + math.floor(u * width), int(h.upper)))
        cats = h.categories
        idx = min(int(u * (len(cats) + 1)), len(cats))
        if idx == len(cats):  # inactive cell decoded while the dim is consulted
            idx = len(cats) - 1
        return cats[idx]

    def config_key(self, config: Mapping[str, Any]) -> str:
        """Canonical string key for hashing/lookup of configurations."""
        def norm(v: Any) -> Any:
            if isinstance(v, (np.floating, float)):
                return round(float(v), 12)
            if isinstance(v, np.integer):
                return int(v)
            return v
        return json.dumps({k: norm(config[k]) for k in sorted(config)}, sort_keys=True)


# -- parsing ----------------------------------------------------------------

def parse_space(document: str | Mapping[str, Any]) -> ConfigurationSpace:
    """Parse a JSON space document into a validated ConfigurationSpace.

    Schema: {"name": ..., "hyperparameters": [{"name", "type", "range",
    "log", "default", "condition": {"parent", "values"}}]} where "range" is
    [lo, hi] for numerics and the choice list for categoricals.
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SpaceError(f"invalid JSON: {exc}") from exc
    else:
        doc = dict(document)
    raw = doc.get("hyperparameters")
    if not isinstance(raw, list) or not raw:
        raise SpaceError("missing or empty 'hyperparameters' list")
    specs = []
    conditions = []
    for entry in raw:
        if "name" not in entry or "type" not in entry:
            raise SpaceError(f"hyperparameter entry missing name/type: {entry}")
        name, kind = entry["name"], entry["type"]
        rng_field = entry.get("range")
        if kind in ("int", "float"):
            if not isinstance(rng_field, list) or len(rng_field) != 2:
                raise SpaceError(f"{name}: numeric 'range' must be [lo, hi]")
            spec = HyperparameterSpec(name, kind, lower=rng_field[0], upper=rng_field[1],
                                      log=bool(entry.get("log", False)),
                                      default=entry.get("default"))
        elif kind == "bool":
            spec = HyperparameterSpec(name, kind, choices=(False, True),
                                      default=entry.get("default"))
        elif kind == "cat":
            if not isinstance(rng_field, list):
                raise SpaceError(f"{name}: categorical 'range' must be a list")
            spec = HyperparameterSpec(name, kind, choices=tuple(rng_field),
                                      default=entry.get("default"))
        else:
            raise SpaceError(f"{name}: unknown type {kind!r}")
        specs.append(spec)
        cond = entry.get("condition")
        if cond is not None:
            if cond.get("parent") == name:
                raise SpaceError(f"cyclic condition: {name!r} conditioned on itself")
            conditions.append(ConditionRule(child=name, parent=cond["parent"],
                                            activating_values=tuple(cond["values"])))
    return ConfigurationSpace(specs, conditions)


def load_space(path: str) -> ConfigurationSpace:
    with open(path, encoding="utf-8") as fh:
        return parse_space(fh.read())
