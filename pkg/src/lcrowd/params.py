"""Per-agent simulation parameters."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from lcrowd.errors import ConfigError

PARAM_NAMES = ("neighbor_dist", "max_neighbors", "planning_horizon", "radius", "pref_speed")

# Generation-time sampling ranges, same column order as PARAM_NAMES.
PARAM_LOW = np.array([1.5, 1.0, 0.5, 0.1, 0.3])
PARAM_HIGH = np.array([28.5, 60.0, 45.0, 1.65, 1.9])
PARAM_LOW.setflags(write=False)
PARAM_HIGH.setflags(write=False)

REFERENCE = (15.0, 10, 30.0, 0.8, 1.4)


@dataclass(frozen=True)
class SimParams:
    """Neighbor distance (m), max neighbors, planning horizon (s), radius (m)
    and preferred speed (m/s) of one agent."""

    neighbor_dist: float = REFERENCE[0]
    max_neighbors: int = REFERENCE[1]
    planning_horizon: float = REFERENCE[2]
    radius: float = REFERENCE[3]
    pref_speed: float = REFERENCE[4]

    def __post_init__(self):
        vals = [float(getattr(self, f.name)) for f in fields(self)]
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError(f"non-finite simulation parameter in {self}")
        if self.radius <= 0 or self.pref_speed <= 0:
            raise ConfigError("radius and pref_speed must be positive")
        if self.neighbor_dist < 0 or self.planning_horizon <= 0 or self.max_neighbors < 0:
            raise ConfigError(f"invalid simulation parameters {self}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.neighbor_dist, self.max_neighbors, self.planning_horizon, self.radius,
             self.pref_speed],
            dtype=float,
        )

    @classmethod
    def from_array(cls, a) -> "SimParams":
        a = [float(x) for x in np.asarray(a, dtype=float).reshape(5)]
        return cls(a[0], int(round(a[1])), a[2], a[3], a[4])

    def in_range(self) -> bool:
        a = self.as_array()
        return bool(np.all(a >= PARAM_LOW) and np.all(a <= PARAM_HIGH))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        unknown = set(d) - set(PARAM_NAMES)
        if unknown:
            raise ConfigError(f"unknown simulation parameter(s): {sorted(unknown)}")
        kw = {k: float(v) for k, v in d.items()}
        if "max_neighbors" in kw:
            kw["max_neighbors"] = int(round(kw["max_neighbors"]))
        return cls(**kw)
