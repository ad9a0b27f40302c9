"""Simulation levels: declared factors, their values, and the grid of combos."""
from __future__ import annotations

import itertools
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import SchemaError

# Columns the engine owns; a level or output may not reuse these names.
RESERVED_COLUMNS = frozenset(
    {"sim_uid", "level_id", "rep_id", "batch_id", "runtime", "n_reps", "message", "call"}
)


def _normalize_tree(obj: Any) -> Any:
    """Coerce a payload tree to plain JSON-representable Python objects."""
    if isinstance(obj, np.ndarray):
        return _normalize_tree(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise SchemaError(f"non-finite number {obj!r} in level payload")
        return obj
    if isinstance(obj, Mapping):
        out = {}
        for k, v in obj.items():
            if not isinstance(k, str):
                raise SchemaError(f"payload keys must be strings, got {k!r}")
            out[k] = _normalize_tree(v)
        return out
    if isinstance(obj, (list, tuple)):
        return [_normalize_tree(v) for v in obj]
    raise SchemaError(f"unsupported level payload type {type(obj).__name__}")


@dataclass(frozen=True, eq=False)
class Structured:
    """A labelled level value carrying an arbitrary payload tree.

    Results and summaries show only ``label``. Inside a script the payload's
    entries are reachable as attributes or items (``L.dist.type``,
    ``L.dist["params"]``).
    """

    label: str
    payload: Any = None

    def __post_init__(self):
        if not isinstance(self.label, str) or not self.label:
            raise SchemaError("structured level values need a non-empty label")
        object.__setattr__(self, "payload", _normalize_tree(self.payload))

    def __getattr__(self, name):
        if name.startswith("__"):
            raise AttributeError(name)
        payload = object.__getattribute__(self, "payload")
        if isinstance(payload, dict) and name in payload:
            return payload[name]
        raise AttributeError(name)

    def __getitem__(self, key):
        return self.payload[key]

    def __eq__(self, other):
        if not isinstance(other, Structured):
            return NotImplemented
        return self.label == other.label and self.payload == other.payload

    def __hash__(self):
        return hash((self.label, canonical_json(self.payload)))

    def __repr__(self):
        return f"Structured({self.label!r})"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def normalize_value(value: Any) -> Any:
    """Return the engine's representation of one level value."""
    if isinstance(value, Structured):
        return value
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise SchemaError(f"level values must be finite, got {value!r}")
        return value
    raise SchemaError(
        f"unsupported level value {value!r}; use numbers, strings, booleans, "
        "or a mapping of label -> payload for structured levels"
    )


def encode_value(value: Any) -> Any:
    """JSON form of a level value (structured values are tagged)."""
    if isinstance(value, Structured):
        return {"$structured": value.label, "payload": value.payload}
    return value


def decode_value(obj: Any) -> Any:
    if isinstance(obj, dict):
        return Structured(obj["$structured"], obj.get("payload"))
    return obj


def value_key(value: Any) -> str:
    """Deep, type-aware identity of a level value (label and payload)."""
    return canonical_json(encode_value(value))


def column_value(value: Any) -> Any:
    """What a level value looks like in a results/summary column."""
    return value.label if isinstance(value, Structured) else value


def _distinct_key(value: Any) -> str:
    # structured values must differ by label; scalars by typed value
    if isinstance(value, Structured):
        return "label:" + value.label
    return value_key(value)


class LevelSchema:
    """Ordered set of level variables, each with an ordered list of values."""

    def __init__(self, variables=()):
        seen = set()
        cleaned = []
        for name, values in variables:
            if not isinstance(name, str) or not name:
                raise SchemaError("level names must be non-empty strings")
            if not name.isidentifier():
                raise SchemaError(f"level name {name!r} is not a valid identifier")
            if name in RESERVED_COLUMNS:
                raise SchemaError(f"level name {name!r} is reserved")
            if name in seen:
                raise SchemaError(f"duplicate level name {name!r}")
            seen.add(name)
            vals = tuple(normalize_value(v) for v in values)
            if not vals:
                raise SchemaError(f"level {name!r} has no values")
            keys = [_distinct_key(v) for v in vals]
            if len(set(keys)) != len(keys):
                raise SchemaError(f"level {name!r} has duplicate values")
            cleaned.append((name, vals))
        self.variables: tuple[tuple[str, tuple], ...] = tuple(cleaned)

    @classmethod
    def from_mapping(cls, levels: Mapping[str, Any]) -> "LevelSchema":
        """Build from ``{name: [values]}``; a mapping value declares structured levels."""
        variables = []
        for name, values in levels.items():
            if isinstance(values, Mapping):
                values = [Structured(label, payload) for label, payload in values.items()]
            elif isinstance(values, (str, bytes)) or not hasattr(values, "__iter__"):
                values = [values]
            variables.append((name, list(values)))
        return cls(variables)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.variables]

    def values(self, name: str) -> tuple:
        for n, vals in self.variables:
            if n == name:
                return vals
        raise KeyError(name)

    def n_combos(self) -> int:
        return math.prod(len(vals) for _, vals in self.variables)

    def iter_assignments(self):
        """Yield every combo's assignments; the first-declared variable varies fastest."""
        if not self.variables:
            yield {}
            return
        names = self.names
        pools = [vals for _, vals in reversed(self.variables)]
        for point in itertools.product(*pools):
            yield dict(zip(names, reversed(point)))

    def to_json(self) -> list:
        return [[name, [encode_value(v) for v in vals]] for name, vals in self.variables]

    @classmethod
    def from_json(cls, data) -> "LevelSchema":
        return cls([(name, [decode_value(v) for v in vals]) for name, vals in data])

    def __eq__(self, other):
        if not isinstance(other, LevelSchema):
            return NotImplemented
        return canonical_json(self.to_json()) == canonical_json(other.to_json())

    def __repr__(self):
        inner = ", ".join(f"{n}={[column_value(v) for v in vals]}" for n, vals in self.variables)
        return f"LevelSchema({inner})"


def combo_key(assignments: Mapping[str, Any]) -> str:
    """Declaration-order independent identity of a combo's assignments."""
    return ";".join(f"{name}={value_key(assignments[name])}" for name in sorted(assignments))


@dataclass(frozen=True)
class LevelCombo:
    level_id: int
    assignments: Mapping[str, Any]

    @property
    def key(self) -> str:
        return combo_key(self.assignments)

    def columns(self) -> dict:
        return {name: column_value(v) for name, v in self.assignments.items()}

    def to_json(self) -> dict:
        return {
            "level_id": self.level_id,
            "assignments": [[n, encode_value(v)] for n, v in self.assignments.items()],
        }

    @classmethod
    def from_json(cls, data) -> "LevelCombo":
        return cls(data["level_id"], {n: decode_value(v) for n, v in data["assignments"]})


def assign_level_ids(schema: LevelSchema, known=()) -> list[LevelCombo]:
    """Combos of ``schema`` in enumeration order with stable level ids.

    Combos already present in ``known`` keep their id; new ones are numbered
    after the largest known id, in enumeration order.
    """
    by_key = {c.key: c.level_id for c in known}
    next_id = max(by_key.values(), default=0) + 1
    combos = []
    for assignments in schema.iter_assignments():
        key = combo_key(assignments)
        if key in by_key:
            level_id = by_key[key]
        else:
            level_id = next_id
            by_key[key] = level_id
            next_id += 1
        combos.append(LevelCombo(level_id, assignments))
    return combos


class LevelView(Mapping):
    """Read-only view of one combo's assignments (``L`` inside a script)."""

    __slots__ = ("_data",)

    def __init__(self, assignments: Mapping[str, Any]):
        object.__setattr__(self, "_data", dict(assignments))

    def __getattr__(self, name):
        try:
            return object.__getattribute__(self, "_data")[name]
        except KeyError:
            raise AttributeError(f"no level named {name!r}") from None

    def __setattr__(self, name, value):
        raise AttributeError("levels are read-only inside a script")

    def __getitem__(self, key):
        return self._data[key]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        return "L(" + ", ".join(f"{k}={column_value(v)!r}" for k, v in self._data.items()) + ")"
