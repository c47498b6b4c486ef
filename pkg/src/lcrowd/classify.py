"""Behavior classification from observed trajectories.

Each agent's simulation parameters are recovered by re-simulating it from
every observed state over a short horizon and minimizing the position error
with coordinate descent. Per-agent behavior vectors are averaged into one
video vector, which is matched against a class table.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from lcrowd import kernels
from lcrowd.behavior import (
    CLASSES,
    BehaviorClass,
    BehaviorVector,
    ClassTable,
    behavior_matrix,
    classify_vector,
    nearest_class,
)
from lcrowd.errors import ConfigError, InsufficientData
from lcrowd.params import PARAM_HIGH, PARAM_LOW, PARAM_NAMES, REFERENCE, SimParams
from lcrowd.simulation import Environment, Trajectory, perturbation_angle, rows_to_trajectories

log = logging.getLogger(__name__)

MIN_SAMPLES = 10
FIT_HORIZON = 5
GRID_POINTS = 7
REFINE_PASSES = 3
INDIFFERENCE = 1e-9
SPEED_QUANTILE = 90.0
SPEED_SPAN = 0.15  # first-pass half-width of the speed grid, relative
# coordinate order: speed, radius, planning horizon, neighbor distance, max neighbors
FIT_ORDER = (4, 3, 2, 0, 1)


@dataclass
class ObservedVideo:
    """Trajectories on a common frame grid.

    ``positions`` and ``velocities`` are (frames, agents, 2); ``valid`` marks
    which agent is observed in which frame.
    """

    agent_ids: list
    positions: np.ndarray
    velocities: np.ndarray
    valid: np.ndarray
    dt: float = 0.1
    environment: Environment | None = None
    frames: np.ndarray | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        self.positions = np.nan_to_num(np.asarray(self.positions, dtype=float))
        self.velocities = np.nan_to_num(np.asarray(self.velocities, dtype=float))
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.frames is None:
            self.frames = np.arange(self.positions.shape[0])
        if not self.agent_ids:
            raise ConfigError("observed video has no trajectories")
        if self.valid.sum(axis=0).max() < MIN_SAMPLES:
            raise InsufficientData(f"no trajectory has {MIN_SAMPLES} samples")
        if self.environment is None:
            pts = self.positions[self.valid]
            lo = pts.min(axis=0) - 1.0
            hi = pts.max(axis=0) + 1.0
            self.environment = Environment((lo[0], lo[1], hi[0], hi[1]))

    @property
    def trajectories(self) -> list[Trajectory]:
        """Position samples per agent, in ``agent_ids`` order."""
        out = []
        for j, aid in enumerate(self.agent_ids):
            idx = np.flatnonzero(self.valid[:, j])
            out.append(Trajectory(aid, [(int(self.frames[t]), (float(self.positions[t, j, 0]),
                                                                float(self.positions[t, j, 1])))
                                        for t in idx]))
        return out

    def index_of(self, agent_id) -> int:
        try:
            return self.agent_ids.index(agent_id)
        except ValueError:
            raise KeyError(f"agent {agent_id} not in video") from None

    @classmethod
    def from_rows(cls, rows, dt: float = 0.1, environment=None) -> "ObservedVideo":
        """Build from export rows ``(frame, agent_id, x, y, vx, vy)``."""
        if not rows:
            raise ConfigError("no trajectory rows")
        frames = sorted({int(r[0]) for r in rows})
        ids = sorted({int(r[1]) for r in rows})
        fi = {f: i for i, f in enumerate(frames)}
        ai = {a: i for i, a in enumerate(ids)}
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise ConfigError("trajectory frames do not form a contiguous grid")
        T, N = len(frames), len(ids)
        P = np.zeros((T, N, 2))
        V = np.zeros((T, N, 2))
        M = np.zeros((T, N), dtype=bool)
        for f, aid, x, y, vx, vy in rows:
            t, j = fi[int(f)], ai[int(aid)]
            if M[t, j]:
                raise ConfigError(f"duplicate row for agent {aid} at frame {f}")
            P[t, j] = (x, y)
            V[t, j] = (vx, vy)
            M[t, j] = True
        return cls(ids, P, V, M, dt, environment, np.array(frames))

    @classmethod
    def from_trajectories(cls, trajectories, dt: float = 0.1, environment=None):
        """Build from position-only trajectories; velocities by finite differences."""
        frames = sorted({f for tr in trajectories for f, _ in tr.samples})
        if not frames:
            raise ConfigError("no trajectory samples")
        f0 = frames[0]
        T = frames[-1] - f0 + 1
        ids = [tr.agent_id for tr in trajectories]
        P = np.zeros((T, len(ids), 2))
        V = np.zeros((T, len(ids), 2))
        M = np.zeros((T, len(ids)), dtype=bool)
        for j, tr in enumerate(trajectories):
            for f, (x, y) in tr.samples:
                P[f - f0, j] = (x, y)
                M[f - f0, j] = True
            for t in range(T):
                if not M[t, j]:
                    continue
                if t > 0 and M[t - 1, j]:
                    V[t, j] = (P[t, j] - P[t - 1, j]) / dt
                elif t + 1 < T and M[t + 1, j]:
                    V[t, j] = (P[t + 1, j] - P[t, j]) / dt
        return cls(ids, P, V, M, dt, environment, np.arange(f0, f0 + T))


def goal_estimates(video: ObservedVideo, j: int) -> np.ndarray:
    """Per-frame destination guess for agent column ``j``: its last observed
    position."""
    idx = np.flatnonzero(video.valid[:, j])
    last = video.positions[idx[-1], j]
    return np.tile(last, (video.positions.shape[0], 1))


def _grid(k: int, center: float, step: float) -> list[float]:
    lo, hi = PARAM_LOW[k], PARAM_HIGH[k]
    pts = [center + step * o for o in range(-(GRID_POINTS // 2), GRID_POINTS // 2 + 1)]
    pts = [min(max(p, lo), hi) for p in pts]
    if k == 1:
        pts = [float(round(p)) for p in pts]
    out = []
    for p in pts:
        if p not in out:
            out.append(p)
    return out


def _first_grid(k: int, current: float) -> list[float]:
    lo, hi = PARAM_LOW[k], PARAM_HIGH[k]
    pts = list(np.linspace(lo, hi, GRID_POINTS))
    if k == 1:
        pts = [float(round(p)) for p in pts]
    pts = [float(p) for p in pts]
    if current not in pts:
        pts.append(float(current))
    return sorted(set(pts), key=pts.index)


class _Objective:
    def __init__(self, video: ObservedVideo, j: int, angle: float, radii=None):
        env = video.environment
        self.radii = None if radii is None else np.asarray(radii, dtype=float)
        self.args = (video.positions, video.velocities, video.valid.astype(np.uint8),
                     goal_estimates(video, j), j)
        self.angle = angle
        self.dt = video.dt
        self.verts = env.obstacle_verts
        self.starts = env.obstacle_starts
        self.cache: dict = {}

    def __call__(self, x) -> float:
        key = tuple(float(v) for v in x)
        if key not in self.cache:
            P, V, M, G, j = self.args
            sse, cnt = kernels.fit_residual(P, V, M, G, j, key, self.angle, self.dt,
                                            FIT_HORIZON, self.verts, self.starts, self.radii)
            self.cache[key] = sse / cnt if cnt else 0.0
        return self.cache[key]


def estimate_params(video: ObservedVideo, agent_id, radii=None,
                    start=None) -> tuple[SimParams, float]:
    """Best-fit simulation parameters for one agent and their mean squared
    position error (m^2).

    ``radii`` gives per-column radii for the other agents (entries <= 0 fall
    back to the candidate radius); ``start`` warm-starts the search. Without a
    start, preferred speed begins at the 90th percentile of observed speeds
    and the first pass sweeps each other parameter over its full range. Later
    passes sweep a 7-point grid around the current value; the step shrinks
    threefold unless the best point sat on the grid edge. A parameter whose
    sweep moves the residual by less than 1e-9 is unidentifiable and reset to
    its reference value.
    """
    j = video.index_of(agent_id)
    m = video.valid[:, j]
    if m.sum() < MIN_SAMPLES:
        raise InsufficientData(f"agent {agent_id} has {int(m.sum())} samples")
    speeds = np.linalg.norm(video.velocities[m, j], axis=1)
    sp0 = float(np.percentile(speeds, SPEED_QUANTILE))
    sp0 = min(max(sp0, PARAM_LOW[4]), PARAM_HIGH[4])
    if start is None:
        x = np.array([REFERENCE[0], REFERENCE[1], REFERENCE[2], REFERENCE[3], sp0], dtype=float)
    else:
        x = np.array(SimParams.from_array(np.asarray(start, dtype=float)).as_array(), dtype=float)
    f = _Objective(video, j, perturbation_angle(agent_id), radii)
    best = f(x)
    half = GRID_POINTS // 2
    steps = [(PARAM_HIGH[k] - PARAM_LOW[k]) / (GRID_POINTS - 1) for k in range(5)]
    steps[4] = SPEED_SPAN * sp0 / half
    for p in range(REFINE_PASSES):
        on_edge = set()
        for k in FIT_ORDER:
            if p == 0 and k != 4:
                grid = _first_grid(k, x[k])
            else:
                grid = _grid(k, x[k], steps[k])
            vals = []
            for g in grid:
                trial = x.copy()
                trial[k] = g
                vals.append(f(trial))
            if max(vals) - min(vals) < INDIFFERENCE:
                x[k] = REFERENCE[k]
                best = f(x)
                continue
            i = int(np.argmin(vals))
            if vals[i] < best:
                x[k] = grid[i]
                best = vals[i]
                if p > 0 and i in (0, len(grid) - 1):
                    on_edge.add(k)
        for k in range(5):
            if (p > 0 or k == 4) and k not in on_edge:
                steps[k] /= half
    return SimParams.from_array(x), float(best)


@dataclass
class FitResult:
    agent_params: dict  # agent id -> SimParams
    agent_residuals: dict  # agent id -> m^2
    video_vector: BehaviorVector
    predicted_class: BehaviorClass
    nearest_distance: float
    argmax_class: BehaviorClass
    votes: dict = field(default_factory=dict)
    failed_agents: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_agent": [
                {"agent_id": aid, "params": self.agent_params[aid].to_dict(),
                 "residual": self.agent_residuals[aid]}
                for aid in sorted(self.agent_params)
            ],
            "video_vector": self.video_vector._asdict(),
            "predicted_class": self.predicted_class.value,
            "nearest_distance": self.nearest_distance,
            "argmax_class": self.argmax_class.value,
            "votes": {c.value: int(self.votes.get(c, 0)) for c in CLASSES},
            "failed_agents": list(self.failed_agents),
        }


def aggregate(agent_params: dict, agent_residuals: dict, table: ClassTable,
              failed=()) -> FitResult:
    ids = sorted(agent_params)
    B = behavior_matrix(np.array([agent_params[a].as_array() for a in ids]))
    vec = B.mean(axis=0)
    pred, dist = nearest_class(vec, table)
    votes = Counter(classify_vector(b) for b in B)
    return FitResult(dict(agent_params), dict(agent_residuals), BehaviorVector.from_array(vec),
                     pred, dist, classify_vector(vec), dict(votes), list(failed))


def classify_video(video: ObservedVideo, table: ClassTable) -> FitResult:
    """Fit every agent, average behavior vectors, and label the clip.

    Agents are fitted twice: first assuming every neighbor shares the
    candidate radius, then again from that estimate with each neighbor's
    first-round radius fixed.
    """
    first, failed = {}, []
    for aid in video.agent_ids:
        try:
            first[aid] = estimate_params(video, aid)[0]
        except InsufficientData:
            failed.append(aid)
    if not first:
        raise InsufficientData("no agent has enough samples to fit")
    radii = np.array([first[a].radius if a in first else 0.0 for a in video.agent_ids])
    params, residuals = {}, {}
    for aid in first:
        params[aid], residuals[aid] = estimate_params(video, aid, radii, first[aid].as_array())
    return aggregate(params, residuals, table, failed)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows true class, columns predicted, CLASSES order

    @property
    def matrix(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = np.where(rows > 0, self.counts / np.maximum(rows, 1), 0.0)
        return m

    def accuracy(self, cls) -> float:
        i = CLASSES.index(BehaviorClass.parse(cls))
        return float(self.matrix[i, i])

    @property
    def overall_accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def to_dict(self) -> dict:
        m = self.matrix
        return {
            "classes": [c.value for c in CLASSES],
            "matrix": m.tolist(),
            "counts": self.counts.astype(int).tolist(),
            "per_class_accuracy": {c.value: float(m[i, i]) for i, c in enumerate(CLASSES)},
            "overall_accuracy": self.overall_accuracy,
        }


def confusion(pairs) -> ConfusionMatrix:
    """Confusion matrix from ``(true, predicted)`` class pairs."""
    counts = np.zeros((6, 6))
    for t, p in pairs:
        counts[CLASSES.index(BehaviorClass.parse(t)), CLASSES.index(BehaviorClass.parse(p))] += 1
    return ConfusionMatrix(counts)


def _classify_one(args):
    video, table = args
    return classify_video(video, table).predicted_class


def evaluate(labeled, table: ClassTable, workers: int = 1) -> ConfusionMatrix:
    """Row-normalized confusion matrix of ``classify_video`` over labeled videos."""
    labeled = list(labeled)
    jobs = [(v, table) for v, _ in labeled]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            preds = list(ex.map(_classify_one, jobs))
    else:
        preds = [_classify_one(j) for j in jobs]
    return confusion([(c, p) for (_, c), p in zip(labeled, preds)])


def load_observed(path, dt: float = 0.1, environment=None) -> ObservedVideo:
    from lcrowd.simulation import read_trajectory_csv

    rows = read_trajectory_csv(path)
    rows_to_trajectories(rows)  # validates frame ordering
    return ObservedVideo.from_rows(rows, dt, environment)


def dump_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


__all__ = [
    "ObservedVideo", "FitResult", "ConfusionMatrix", "estimate_params", "classify_video",
    "evaluate", "confusion", "aggregate", "goal_estimates", "load_observed", "PARAM_NAMES",
]
