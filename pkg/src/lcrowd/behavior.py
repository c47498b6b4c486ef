"""Linear map between simulation parameters and behavior adjectives.

Parameters are normalized around a reference crowd, multiplied by a fixed
6x5 adjective matrix, and the resulting six intensities are turned into one
of six behavior classes. A class table of sampled parameter sets supports
nearest-neighbor lookup in behavior space.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from lcrowd.errors import ConfigError, EmptyTable, SamplingExhausted
from lcrowd.params import PARAM_HIGH, PARAM_LOW, SimParams

TABLE_SCHEMA_VERSION = 1

# Reference crowd and one normalization unit, columns in SimParams order.
NORM_OFFSETS = np.array([15.0, 10.0, 30.0, 0.8, 1.4])
NORM_SCALES = np.array([13.5, 49.5, 14.5, 0.85, 0.5])

# Rows: aggressive, assertive, shy, active, tense, impulsive.
A_ADJ = np.array(
    [
        [-0.02, 0.32, 0.13, -0.41, 1.02],
        [0.03, 0.22, 0.11, -0.28, 1.05],
        [-0.04, -0.08, 0.02, 0.58, -0.88],
        [-0.06, 0.04, 0.04, -0.16, 1.07],
        [0.10, 0.07, -0.08, 0.19, 0.15],
        [0.03, -0.15, 0.03, -0.23, 0.23],
    ]
)
A_ADJ.setflags(write=False)
NORM_OFFSETS.setflags(write=False)
NORM_SCALES.setflags(write=False)

_PINV = np.linalg.pinv(A_ADJ)

MAX_DRAWS = 1_000_000
_BATCH = 50_000


class BehaviorClass(str, enum.Enum):
    AGGRESSIVE = "aggressive"
    ASSERTIVE = "assertive"
    SHY = "shy"
    ACTIVE = "active"
    TENSE = "tense"
    IMPULSIVE = "impulsive"

    @property
    def label(self) -> str:
        return self.value.capitalize()

    @classmethod
    def parse(cls, value) -> "BehaviorClass":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown behavior class {value!r}") from None


CLASSES: tuple[BehaviorClass, ...] = tuple(BehaviorClass)


class BehaviorVector(NamedTuple):
    aggressive: float
    assertive: float
    shy: float
    active: float
    tense: float
    impulsive: float

    @classmethod
    def from_array(cls, a) -> "BehaviorVector":
        return cls(*(float(x) for x in np.asarray(a, dtype=float).reshape(6)))

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


def normalize_params(p: SimParams) -> np.ndarray:
    return (p.as_array() - NORM_OFFSETS) / NORM_SCALES


def params_to_behavior(p: SimParams) -> BehaviorVector:
    return BehaviorVector.from_array(A_ADJ @ normalize_params(p))


def behavior_matrix(params: np.ndarray) -> np.ndarray:
    """Vectorized ``params_to_behavior`` over an (n, 5) parameter array."""
    x = (np.asarray(params, dtype=float) - NORM_OFFSETS) / NORM_SCALES
    return x @ A_ADJ.T


def behavior_to_params_unclamped(b) -> np.ndarray:
    """Minimum-norm least-squares preimage, de-normalized but not clamped."""
    x = _PINV @ np.asarray(b, dtype=float).reshape(6)
    return x * NORM_SCALES + NORM_OFFSETS


def behavior_to_params(b) -> SimParams:
    """Least-squares inverse of :func:`params_to_behavior`.

    The result is clamped to the sampling ranges; max_neighbors is rounded
    to the nearest integer after clamping.
    """
    raw = np.clip(behavior_to_params_unclamped(b), PARAM_LOW, PARAM_HIGH)
    raw[1] = float(np.rint(raw[1]))
    return SimParams.from_array(raw)


def _argmax_classes(B: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. enumeration order on ties
    return np.argmax(B, axis=1)


def classify_vector(b) -> BehaviorClass:
    arr = np.asarray(b, dtype=float).reshape(1, 6)
    return CLASSES[int(_argmax_classes(arr)[0])]


def top_gap(B: np.ndarray) -> np.ndarray:
    """Difference between the largest and second-largest component per row."""
    s = np.sort(np.atleast_2d(B), axis=1)
    return s[:, -1] - s[:, -2]


def sample_uniform_params(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draws over the parameter box; max_neighbors is integer-uniform."""
    out = rng.uniform(PARAM_LOW, PARAM_HIGH, size=(n, 5))
    out[:, 1] = rng.integers(int(PARAM_LOW[1]), int(PARAM_HIGH[1]) + 1, size=n)
    return out


def sample_class_params(
    cls: BehaviorClass, n: int, margin: float, rng: np.random.Generator
) -> np.ndarray:
    """Rejection-sample ``n`` parameter rows whose behavior class is ``cls``.

    A row is kept when ``cls`` is the argmax of its behavior vector and leads
    the runner-up by at least ``margin``. Raises SamplingExhausted when the
    first 10**6 draws yield no acceptance at all.
    """
    cls = BehaviorClass.parse(cls)
    k = CLASSES.index(cls)
    kept: list[np.ndarray] = []
    total = 0
    draws = 0
    while total < n:
        P = sample_uniform_params(rng, _BATCH)
        draws += _BATCH
        B = behavior_matrix(P)
        ok = (_argmax_classes(B) == k) & (top_gap(B) >= margin)
        if ok.any():
            kept.append(P[ok])
            total += int(ok.sum())
        elif total == 0 and draws >= MAX_DRAWS:
            raise SamplingExhausted(
                f"no {cls.value} parameter set with margin {margin} in {draws} draws"
            )
    return np.concatenate(kept)[:n]


@dataclass(frozen=True)
class TableEntry:
    params: SimParams
    behavior: BehaviorVector
    cls: BehaviorClass


class ClassTable:
    """Immutable set of labeled parameter sets with a kd-tree over behavior."""

    def __init__(self, entries):
        self.entries: tuple[TableEntry, ...] = tuple(entries)
        self._B = np.array([e.behavior for e in self.entries], dtype=float).reshape(-1, 6)
        self._tree = cKDTree(self._B) if len(self.entries) else None

    def __len__(self):
        return len(self.entries)

    @property
    def behaviors(self) -> np.ndarray:
        return self._B.copy()

    def validate(self, atol: float = 1e-12) -> None:
        for i, e in enumerate(self.entries):
            expect = params_to_behavior(e.params).as_array()
            if not np.allclose(expect, e.behavior.as_array(), rtol=0.0, atol=atol):
                raise ConfigError(f"table entry {i}: behavior does not match its params")
            if classify_vector(e.behavior) is not e.cls:
                raise ConfigError(f"table entry {i}: class is not the behavior argmax")

    def to_dict(self) -> dict:
        return {
            "schema_version": TABLE_SCHEMA_VERSION,
            "entries": [
                {
                    "params": e.params.to_dict(),
                    "behavior": e.behavior._asdict(),
                    "class": e.cls.value,
                }
                for e in self.entries
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "ClassTable":
        if data.get("schema_version") != TABLE_SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported class table schema version {data.get('schema_version')!r}"
            )
        try:
            entries = [
                TableEntry(
                    SimParams.from_dict(e["params"]),
                    BehaviorVector(**{k: float(v) for k, v in e["behavior"].items()}),
                    BehaviorClass.parse(e["class"]),
                )
                for e in data["entries"]
            ]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed class table: {exc}") from exc
        table = cls(entries)
        table.validate()
        return table

    @classmethod
    def load(cls, path) -> "ClassTable":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"class table not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(data)


def build_class_table(
    samples_per_class: int, margin: float, rng: np.random.Generator
) -> ClassTable:
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    entries = []
    for c in CLASSES:
        for row in sample_class_params(c, samples_per_class, margin, rng):
            p = SimParams.from_array(row)
            entries.append(TableEntry(p, params_to_behavior(p), c))
    return ClassTable(entries)


def nearest_class(b, table: ClassTable) -> tuple[BehaviorClass, float]:
    """Class of the table entry closest to ``b`` in Euclidean behavior space.

    Ties resolve to the lowest entry index, matching a linear scan.
    """
    if len(table) == 0:
        raise EmptyTable("class table is empty")
    q = np.asarray(b, dtype=float).reshape(6)
    d, _ = table._tree.query(q)
    # collect every entry at the minimal distance and keep the first
    idx = table._tree.query_ball_point(q, r=d * (1 + 1e-9) + 1e-12)
    dists = np.sqrt(((table._B[idx] - q) ** 2).sum(axis=1))
    best = min(zip(dists, idx), key=lambda t: (t[0], t[1]))
    return table.entries[best[1]].cls, float(best[0])
