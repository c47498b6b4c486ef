"""Agent simulation: goal selection, global planning and local adaptation.

Agents are discs on the ground plane. Each step refreshes goals on arrival,
derives a preferred velocity from the agent's waypoint path, resolves it into
a collision-avoiding velocity with reciprocal half-plane constraints, and
integrates positions.
"""
from __future__ import annotations

import csv
import enum
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lcrowd import kernels
from lcrowd.errors import ConfigError, NoFreeSpace, Unreachable
from lcrowd.params import SimParams
from lcrowd.planner import occupancy_grid, plan_global_path, point_polygon_distance

log = logging.getLogger(__name__)

SPEED_SLACK = 0.05
DEFAULT_DT = 0.1
DEFAULT_GRID_RESOLUTION = 0.25
PERTURB_STEP = 0.002  # rad per unit of (id mod 7 - 3)
REGION_SAMPLE_ATTEMPTS = 1000
TRAJECTORY_HEADER = ("frame", "agent_id", "x", "y", "vx", "vy")


def perturbation_angle(agent_id: int) -> float:
    return (int(agent_id) % 7 - 3) * PERTURB_STEP


class GoalKind(str, enum.Enum):
    FIXED_POINT = "fixed_point"
    REGION_SAMPLE = "region_sample"
    WAYPOINT_CYCLE = "waypoint_cycle"


@dataclass
class GoalPolicy:
    kind: GoalKind
    point: tuple[float, float] | None = None
    region: tuple[float, float, float, float] | None = None  # xmin, ymin, xmax, ymax
    waypoints: list[tuple[float, float]] | None = None

    def __post_init__(self):
        self.kind = GoalKind(self.kind)
        if self.kind is GoalKind.FIXED_POINT and self.point is None:
            raise ConfigError("fixed_point policy needs a point")
        if self.kind is GoalKind.REGION_SAMPLE and self.region is None:
            raise ConfigError("region_sample policy needs a region")
        if self.kind is GoalKind.WAYPOINT_CYCLE and not self.waypoints:
            raise ConfigError("waypoint_cycle policy needs waypoints")


@dataclass
class Environment:
    bounds: tuple[float, float, float, float]
    obstacles: list = field(default_factory=list)
    grid_resolution: float = DEFAULT_GRID_RESOLUTION

    def __post_init__(self):
        xmin, ymin, xmax, ymax = (float(b) for b in self.bounds)
        if not (xmax > xmin and ymax > ymin):
            raise ConfigError(f"degenerate environment bounds {self.bounds}")
        if self.grid_resolution <= 0:
            raise ConfigError("grid_resolution must be positive")
        self.bounds = (xmin, ymin, xmax, ymax)
        self.obstacles = [[(float(x), float(y)) for x, y in poly] for poly in self.obstacles]
        for poly in self.obstacles:
            if len(poly) < 3:
                raise ConfigError("obstacle polygons need at least three vertices")
            for x, y in poly:
                if not (xmin <= x <= xmax and ymin <= y <= ymax):
                    raise ConfigError("obstacle vertex outside environment bounds")
        verts = [v for poly in self.obstacles for v in poly]
        self.obstacle_verts = np.array(verts, dtype=float).reshape(-1, 2)
        self.obstacle_starts = np.cumsum([0] + [len(p) for p in self.obstacles]).astype(np.int64)
        self._grids: dict[float, np.ndarray] = {}

    def contains(self, p) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= p[0] <= xmax and ymin <= p[1] <= ymax

    def clearance(self, p) -> float:
        if not self.obstacles:
            return math.inf
        pt = np.asarray(p, dtype=float).reshape(1, 2)
        return float(min(point_polygon_distance(pt, poly)[0] for poly in self.obstacles))

    def is_free(self, p, radius: float = 0.0) -> bool:
        return self.contains(p) and (
            self.clearance(p) >= radius if radius > 0 else self.clearance(p) > 0
        )

    def occupancy(self, radius: float) -> np.ndarray:
        key = round(float(radius), 9)
        if key not in self._grids:
            self._grids[key] = occupancy_grid(self, radius)
        return self._grids[key]

    def clamp(self, p) -> np.ndarray:
        xmin, ymin, xmax, ymax = self.bounds
        return np.array([min(max(p[0], xmin), xmax), min(max(p[1], ymin), ymax)])

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "obstacles": [[list(v) for v in poly] for poly in self.obstacles],
            "grid_resolution": self.grid_resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        return cls(tuple(d["bounds"]), d.get("obstacles", []),
                   d.get("grid_resolution", DEFAULT_GRID_RESOLUTION))


@dataclass
class AgentState:
    id: int
    position: np.ndarray
    params: SimParams
    policy: GoalPolicy
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    goal: np.ndarray | None = None
    path: list = field(default_factory=list)  # remaining waypoints, goal last

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        if self.goal is not None:
            self.goal = np.asarray(self.goal, dtype=float).reshape(2)


@dataclass
class Trajectory:
    agent_id: int
    samples: list  # (frame index, (x, y))


def select_goal(agent: AgentState, environment: Environment, policy: GoalPolicy,
                rng: np.random.Generator) -> np.ndarray:
    """Next goal for ``agent`` under ``policy``.

    WaypointCycle advances to the waypoint after the current goal once the
    agent is within two radii of it; otherwise the current goal stands.
    """
    radius = agent.params.radius
    if policy.kind is GoalKind.FIXED_POINT:
        p = np.asarray(policy.point, dtype=float)
        if not environment.is_free(p, radius):
            raise NoFreeSpace(f"fixed goal {tuple(p)} is not in free space")
        return p
    if policy.kind is GoalKind.REGION_SAMPLE:
        xmin, ymin, xmax, ymax = policy.region
        for _ in range(REGION_SAMPLE_ATTEMPTS):
            p = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
            if environment.is_free(p, radius):
                return p
        raise NoFreeSpace(f"goal region {policy.region} has no free space")
    wps = [np.asarray(w, dtype=float) for w in policy.waypoints]
    idx = None
    if agent.goal is not None:
        for i, w in enumerate(wps):
            if np.array_equal(w, agent.goal):
                idx = i
                break
    if idx is None:
        goal = wps[0]
    elif np.linalg.norm(agent.position - wps[idx]) <= 2.0 * radius:
        goal = wps[(idx + 1) % len(wps)]
    else:
        goal = wps[idx]
    if not environment.is_free(goal, radius):
        raise NoFreeSpace(f"waypoint {tuple(goal)} is not in free space")
    return goal


def preferred_velocity(agent: AgentState, dt: float) -> np.ndarray:
    """Velocity toward the next waypoint at pref_speed, slowing only to land
    exactly on the final goal."""
    if not agent.path:
        return np.zeros(2)
    target = agent.path[0]
    vx, vy = kernels.pref_toward(agent.position[0], agent.position[1], target[0], target[1],
                                 agent.params.pref_speed, dt)
    return np.array([vx, vy])


def _advance_path(agent: AgentState, dt: float) -> None:
    reach = max(agent.params.radius, agent.params.pref_speed * dt)
    while len(agent.path) > 1 and math.dist(agent.position, agent.path[0]) <= reach:
        agent.path.pop(0)


def _params_row(p: SimParams):
    return (p.neighbor_dist, float(p.max_neighbors), p.planning_horizon, p.radius, p.pref_speed)


def adapt_velocity(agent: AgentState, neighbors, obstacles, dt: float) -> np.ndarray:
    """Collision-avoiding velocity closest to the agent's preferred velocity.

    ``obstacles`` is a list of convex polygons. Only the nearest
    ``max_neighbors`` neighbors within ``neighbor_dist`` constrain the result.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    pref = preferred_velocity(agent, dt)
    p = agent.params
    if neighbors:
        op = np.array([n.position for n in neighbors], dtype=float)
        ov = np.array([n.velocity for n in neighbors], dtype=float)
        orad = np.array([n.params.radius for n in neighbors], dtype=float)
    else:
        op = np.zeros((0, 2))
        ov = np.zeros((0, 2))
        orad = np.zeros(0)
    verts = [v for poly in obstacles for v in poly]
    starts = np.cumsum([0] + [len(poly) for poly in obstacles])
    vx, vy = kernels.agent_velocity(
        agent.position[0], agent.position[1], agent.velocity[0], agent.velocity[1],
        pref[0], pref[1], op, ov, orad,
        p.neighbor_dist, p.max_neighbors, p.planning_horizon, p.radius, p.pref_speed,
        perturbation_angle(agent.id), dt, verts, starts,
    )
    return np.array([vx, vy])


@dataclass
class World:
    environment: Environment
    agents: list[AgentState]
    dt: float = DEFAULT_DT
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    frame: int = 0
    costs_ms: list = field(default_factory=list)

    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.agents], dtype=float).reshape(-1, 2)

    def velocities(self) -> np.ndarray:
        return np.array([a.velocity for a in self.agents], dtype=float).reshape(-1, 2)


def initialize_agent(agent: AgentState, world: World) -> None:
    """Assign the first goal and plan its path; Unreachable propagates."""
    agent.goal = select_goal(agent, world.environment, agent.policy, world.rng)
    path = plan_global_path(agent.position, agent.goal, world.environment, agent.params.radius)
    agent.path = [tuple(p) for p in path[1:]] or [tuple(agent.goal)]


def _refresh_goal(agent: AgentState, world: World) -> None:
    arrived = agent.goal is not None and (
        math.dist(agent.position, agent.goal) <= 2.0 * agent.params.radius
    )
    if agent.goal is not None and not arrived:
        return
    try:
        new_goal = select_goal(agent, world.environment, agent.policy, world.rng)
    except NoFreeSpace as exc:
        log.debug("agent %s: %s", agent.id, exc)
        return
    if agent.goal is not None and np.array_equal(new_goal, agent.goal):
        return
    try:
        path = plan_global_path(agent.position, new_goal, world.environment,
                                agent.params.radius)
    except Unreachable as exc:
        # hold position; retry on the next step
        log.debug("agent %s holds: %s", agent.id, exc)
        agent.goal = None
        agent.path = []
        return
    agent.goal = new_goal
    agent.path = [tuple(p) for p in path[1:]] or [tuple(new_goal)]


def step(world: World, dt: float | None = None) -> World:
    """Advance ``world`` by one timestep in place and return it."""
    dt = world.dt if dt is None else dt
    if not (0 < dt <= 0.5):
        raise ValueError(f"dt must lie in (0, 0.5], got {dt}")
    agents = world.agents
    if not agents:
        world.frame += 1
        return world
    t0 = time.perf_counter()
    n = len(agents)
    pref = np.zeros((n, 2))
    for i, a in enumerate(agents):
        _refresh_goal(a, world)
        _advance_path(a, dt)
        pref[i] = preferred_velocity(a, dt)
    pos = world.positions()
    vel = world.velocities()
    params = np.array([_params_row(a.params) for a in agents])
    angles = np.array([perturbation_angle(a.id) for a in agents])
    env = world.environment
    new_vel = kernels.compute_velocities(pos, vel, pref, params, angles,
                                         env.obstacle_verts, env.obstacle_starts, dt)
    new_pos = pos + new_vel * dt
    xmin, ymin, xmax, ymax = env.bounds
    clamped = np.clip(new_pos, [xmin, ymin], [xmax, ymax])
    moved = np.any(clamped != new_pos, axis=1)
    if moved.any():
        new_vel[moved] = (clamped[moved] - pos[moved]) / dt
    for i, a in enumerate(agents):
        a.position = clamped[i]
        a.velocity = new_vel[i]
    world.frame += 1
    world.costs_ms.append((time.perf_counter() - t0) * 1e3)
    return world


class TrajectoryRecorder:
    """Accumulates ``frame,agent_id,x,y,vx,vy`` rows, quantized as exported."""

    def __init__(self):
        self.rows: list[tuple] = []

    def record(self, world: World) -> None:
        for a in world.agents:
            self.rows.append((world.frame, a.id,
                              _q(a.position[0]), _q(a.position[1]),
                              _q(a.velocity[0]), _q(a.velocity[1])))

    def frame_rows(self, frame: int):
        return [r for r in self.rows if r[0] == frame]

    def to_csv(self) -> str:
        return format_trajectory_csv(self.rows)

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())


def _q(x: float) -> float:
    # value as it reads back from the 6-decimal export
    return float(f"{x:.6f}")


def format_trajectory_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(TRAJECTORY_HEADER) + "\n")
    for f, aid, x, y, vx, vy in rows:
        buf.write(f"{int(f)},{int(aid)},{x:.6f},{y:.6f},{vx:.6f},{vy:.6f}\n")
    return buf.getvalue()


def parse_trajectory_csv(text: str, source: str = "<trajectories>"):
    """Parse export-format text into a list of row tuples.

    Raises ConfigError with a line number on malformed input.
    """
    reader = csv.reader(io.StringIO(text))
    rows = []
    header = None
    for lineno, rec in enumerate(reader, start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        if header is None:
            header = tuple(c.strip() for c in rec)
            if header != TRAJECTORY_HEADER:
                raise ConfigError(f"{source}: line {lineno}: expected header "
                                  f"{','.join(TRAJECTORY_HEADER)}")
            continue
        if len(rec) != 6:
            raise ConfigError(f"{source}: line {lineno}: expected 6 fields, got {len(rec)}")
        try:
            f, aid = int(rec[0]), int(rec[1])
            vals = [float(c) for c in rec[2:]]
        except ValueError:
            raise ConfigError(f"{source}: line {lineno}: non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError(f"{source}: line {lineno}: non-finite value")
        rows.append((f, aid, *vals))
    if header is None:
        raise ConfigError(f"{source}: empty trajectory file")
    if not rows:
        raise ConfigError(f"{source}: no trajectory rows")
    return rows


def read_trajectory_csv(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"trajectory file not found: {path}")
    return parse_trajectory_csv(path.read_text(), str(path))


def rows_to_trajectories(rows) -> list[Trajectory]:
    by_agent: dict[int, list] = {}
    for f, aid, x, y, *_ in rows:
        by_agent.setdefault(aid, []).append((f, (x, y)))
    out = []
    for aid in sorted(by_agent):
        samples = sorted(by_agent[aid])
        frames = [s[0] for s in samples]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ConfigError(f"agent {aid}: frame indices not strictly increasing")
        out.append(Trajectory(aid, samples))
    return out
