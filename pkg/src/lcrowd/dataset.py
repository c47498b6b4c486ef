"""Labeled dataset generation over the seven label axes.

A sweep is the Cartesian product of per-axis value lists. Every scenario is
seeded from the base seed and its axis-index tuple, simulated, annotated and
optionally rendered into its own directory. The manifest is written last.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from lcrowd.behavior import BehaviorClass, sample_class_params
from lcrowd.errors import ConfigError, LCrowdError, SpawnFailure
from lcrowd.labeling import (
    CameraModel,
    FlowLine,
    Projection,
    annotate_frame,
    annotate_rows,
    annotations_document,
    boxes_csv,
    dumps_annotations,
)
from lcrowd.params import SimParams
from lcrowd.render import BackgroundStyle, RenderSettings, add_gaussian_noise, rasterize, write_pgm
from lcrowd.simulation import (
    AgentState,
    Environment,
    GoalKind,
    GoalPolicy,
    TrajectoryRecorder,
    World,
    initialize_agent,
    read_trajectory_csv,
    step,
)

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
SPAWN_ATTEMPTS = 10_000
MARGIN_M = 5.0  # free border between the spawn region and the bounds
IMAGE_SIZE = (320, 240)
AXES = ("background", "behavior_class", "camera", "density", "environment", "light",
        "pedestrian_count")
ENVIRONMENTS = ("open", "crossing", "plaza", "corridor")
CAMERA_PRESETS = ("overhead", "oblique", "street", "orthographic")
MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def scenario_seed(base_seed: int, index: tuple) -> int:
    """64-bit seed: the base seed folded with each axis index through splitmix64."""
    h = splitmix64(int(base_seed) & MASK64)
    for i in index:
        h = splitmix64(h ^ splitmix64(int(i)))
    return h


@dataclass(frozen=True)
class ScenarioSpec:
    background: BackgroundStyle = BackgroundStyle.FLAT
    behavior_class: BehaviorClass = BehaviorClass.SHY
    camera: str | dict = "oblique"  # preset name or camera dict
    density: float = 0.25
    environment: str = "open"
    light: float = 0.6
    pedestrian_count: int = 10
    duration: int = 100
    dt: float = 0.1
    seed: int = 0
    param_margin: float = 0.1
    noise_std: float = 0.0
    agent_shade: float = 0.1
    background_asset: str | None = None  # reserved for real-footage compositing

    def __post_init__(self):
        try:
            object.__setattr__(self, "background", BackgroundStyle(self.background))
            object.__setattr__(self, "behavior_class", BehaviorClass.parse(self.behavior_class))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if isinstance(self.pedestrian_count, bool) or int(self.pedestrian_count) != self.pedestrian_count:
            raise ConfigError("pedestrian_count must be an integer")
        object.__setattr__(self, "pedestrian_count", int(self.pedestrian_count))
        if self.pedestrian_count < 0:
            raise ConfigError("pedestrian_count must be >= 0")
        if not self.density > 0:
            raise ConfigError("density must be > 0")
        if self.environment not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.environment!r}")
        if isinstance(self.camera, str):
            if self.camera not in CAMERA_PRESETS:
                raise ConfigError(f"unknown camera preset {self.camera!r}")
        elif isinstance(self.camera, dict):
            CameraModel.from_dict(self.camera)
        else:
            raise ConfigError("camera must be a preset name or a camera object")
        if not 0.0 <= self.light <= 1.0:
            raise ConfigError("light must lie in [0, 1]")
        if self.duration < 1:
            raise ConfigError("duration must be >= 1 frame")
        if not 0 < self.dt <= 0.5:
            raise ConfigError("dt must lie in (0, 0.5]")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.param_margin < 0:
            raise ConfigError("param_margin must be >= 0")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["background"] = self.background.value
        d["behavior_class"] = self.behavior_class.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario field(s): {', '.join(sorted(extra))}")
        return cls(**d)


@dataclass
class Layout:
    environment: Environment
    spawn_region: tuple[float, float, float, float]
    flow_lines: list
    extent: float  # half-diagonal of the spawn region


def _square(cx, cy, h):
    return [(cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h)]


def build_layout(name: str, count: int, density: float) -> Layout:
    """Environment, spawn region and counting line for a named layout. The
    spawn region's area is ``count / density``."""
    area = max(count, 1) / density
    if name == "corridor":
        w = math.sqrt(area / 3.0)
        L = 3.0 * w
        spawn = (-L / 2, -w / 2, L / 2, w / 2)
        bounds = (-L / 2 - 1.0, -w / 2 - 0.5, L / 2 + 1.0, w / 2 + 0.5)
        env = Environment(bounds)
    else:
        s = math.sqrt(area)
        spawn = (-s / 2, -s / 2, s / 2, s / 2)
        bounds = (-s / 2 - MARGIN_M, -s / 2 - MARGIN_M, s / 2 + MARGIN_M, s / 2 + MARGIN_M)
        obstacles = []
        if name == "plaza":
            h = s / 16
            obstacles = [_square(sx * s / 4, sy * s / 4, h) for sx in (-1, 1) for sy in (-1, 1)]
        env = Environment(bounds, obstacles)
    x0, y0, x1, y1 = spawn
    flow = FlowLine((0.0, y0), (0.0, y1), line_id="center")
    return Layout(env, spawn, [flow], 0.5 * math.hypot(x1 - x0, y1 - y0))


def goal_policy(name: str, layout: Layout, position) -> GoalPolicy:
    x0, y0, x1, y1 = layout.spawn_region
    if name == "crossing":
        # antipodal destination through the spawn center
        return GoalPolicy(GoalKind.FIXED_POINT, point=(-float(position[0]), -float(position[1])))
    if name == "corridor":
        y = float(position[1])
        ends = [(x0 + 0.5, y), (x1 - 0.5, y)]
        if position[0] < 0:
            ends.reverse()
        return GoalPolicy(GoalKind.WAYPOINT_CYCLE, waypoints=[ends[1], ends[0]])
    return GoalPolicy(GoalKind.REGION_SAMPLE, region=layout.spawn_region)


def camera_for(preset, layout: Layout) -> CameraModel:
    if isinstance(preset, dict):
        return CameraModel.from_dict(preset)
    W, H = IMAGE_SIZE
    R = layout.extent
    f = (W / 2) / math.tan(math.radians(30))
    if preset == "overhead":
        z = 1.2 * R / math.tan(math.radians(30)) + 1.7
        return CameraModel((0.0, -0.1 * z, z), math.pi / 2, -1.45, f, W, H)
    if preset == "oblique":
        d = 2.0 * R
        return CameraModel((0.0, -d, R), math.pi / 2, -math.atan2(R, d), f, W, H)
    if preset == "street":
        return CameraModel((0.0, -R - 2.0, 1.8), math.pi / 2, -0.15, f, W, H)
    if preset == "orthographic":
        return CameraModel((0.0, -R, 2.0 * R), math.pi / 2, -1.2, f, W, H,
                           Projection.ORTHOGRAPHIC, 0.9 * (H / 2) / R)
    raise ConfigError(f"unknown camera preset {preset!r}")


def _spawn_positions(radii, layout: Layout, rng: np.random.Generator) -> np.ndarray:
    x0, y0, x1, y1 = layout.spawn_region
    env = layout.environment
    placed = np.zeros((0, 2))
    placed_r = np.zeros(0)
    for i, r in enumerate(radii):
        for _ in range(SPAWN_ATTEMPTS):
            q = np.array([rng.uniform(x0 + r, x1 - r) if x1 - x0 > 2 * r else (x0 + x1) / 2,
                          rng.uniform(y0 + r, y1 - r) if y1 - y0 > 2 * r else (y0 + y1) / 2])
            if len(placed) and np.any(np.hypot(*(placed - q).T) <= placed_r + r):
                continue
            if env.obstacles and not env.is_free(q, r):
                continue
            break
        else:
            raise SpawnFailure(f"could not place agent {i} after {SPAWN_ATTEMPTS} attempts")
        placed = np.vstack([placed, q])
        placed_r = np.append(placed_r, r)
    return placed


def instantiate(spec: ScenarioSpec) -> tuple[World, Layout]:
    """Initial world for a scenario: non-overlapping spawn, class-conditioned
    parameters, goals and global paths."""
    layout = build_layout(spec.environment, spec.pedestrian_count, spec.density)
    ss = np.random.SeedSequence(spec.seed)
    param_rng, spawn_rng, goal_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    n = spec.pedestrian_count
    agents = []
    if n:
        P = sample_class_params(spec.behavior_class, n, spec.param_margin, param_rng)
        params = [SimParams.from_array(p) for p in P]
        pos = _spawn_positions([p.radius for p in params], layout, spawn_rng)
        for i in range(n):
            agents.append(AgentState(i, pos[i], params[i],
                                     goal_policy(spec.environment, layout, pos[i])))
    world = World(layout.environment, agents, spec.dt, goal_rng)
    for a in agents:
        initialize_agent(a, world)
    return world, layout


@dataclass
class VideoRecord:
    scenario: ScenarioSpec
    index: tuple
    directory: str
    files: dict = field(default_factory=dict)  # role -> path relative to the output root
    status: str = "ok"
    error: str | None = None

    def to_dict(self) -> dict:
        return {"index": list(self.index), "directory": self.directory,
                "status": self.status, "error": self.error,
                "scenario": self.scenario.to_dict(), "files": dict(self.files)}


def scenario_name(index: tuple) -> str:
    return "video_" + "_".join(f"{i:03d}" for i in index)


def render_settings(spec: ScenarioSpec) -> RenderSettings:
    return RenderSettings(spec.background, spec.light, spec.agent_shade, spec.noise_std,
                          IMAGE_SIZE)


def run_scenario(spec: ScenarioSpec, out_dir, write_frames: bool = True) -> dict:
    """Simulate, annotate and render one scenario into ``out_dir``.

    Returns the written files by role (paths relative to ``out_dir``) and the
    per-frame simulation plus annotation cost statistics in milliseconds.
    """
    import time

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world, layout = instantiate(spec)
    cam = camera_for(spec.camera, layout)
    settings = render_settings(spec)
    noise_rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(4)[3])
    lines = [fl.fresh() for fl in layout.flow_lines]
    radii = {a.id: a.params.radius for a in world.agents}
    rec = TrajectoryRecorder()
    frames = []
    costs = []
    if write_frames:
        (out / "frames").mkdir(exist_ok=True)
    n = len(world.agents)
    for k in range(spec.duration):
        t0 = time.perf_counter()
        if k:
            step(world)
        rec.record(world)
        rows = rec.rows[len(rec.rows) - n:]
        agents = [(r[1], r[2], r[3], radii[r[1]]) for r in rows]
        frames.append(annotate_frame(world.frame, agents, cam, lines))
        costs.append((time.perf_counter() - t0) * 1e3)
        if write_frames:
            img = rasterize(agents, cam, settings)
            if spec.noise_std > 0:
                img = add_gaussian_noise(img, spec.noise_std, noise_rng)
            write_pgm(img, out / "frames" / f"frame_{world.frame:06d}.pgm")
    scene = {
        "scenario": spec.to_dict(),
        "environment": layout.environment.to_dict(),
        "spawn_region": list(layout.spawn_region),
        "camera": cam.to_dict(),
        "flow_lines": [fl.spec_dict() for fl in layout.flow_lines],
        "agents": [{"agent_id": a.id, "params": a.params.to_dict()} for a in world.agents],
    }
    _write_json(out / "scene.json", scene)
    rec.save(out / "trajectories.csv")
    (out / "annotations.json").write_text(
        dumps_annotations(annotations_document(frames, cam, layout.flow_lines)))
    (out / "boxes.csv").write_text(boxes_csv(frames))
    stats = {
        "frames": len(costs),
        "median_ms": statistics.median(costs) if costs else 0.0,
        "mean_ms": statistics.fmean(costs) if costs else 0.0,
        "max_ms": max(costs) if costs else 0.0,
    }
    _write_json(out / "costs.json", stats)
    files = {"scene": "scene.json", "trajectories": "trajectories.csv",
             "annotations": "annotations.json", "boxes": "boxes.csv", "costs": "costs.json"}
    if write_frames:
        files["frames"] = "frames"
    return {"files": files, "costs": stats}


def reannotate(video_dir) -> str:
    """Recompute the annotation file text from a video's stored trajectories
    and scene description."""
    d = Path(video_dir)
    scene = json.loads((d / "scene.json").read_text())
    rows = read_trajectory_csv(d / "trajectories.csv")
    radii = {a["agent_id"]: SimParams.from_dict(a["params"]).radius for a in scene["agents"]}
    cam = CameraModel.from_dict(scene["camera"])
    specs = [FlowLine.from_dict(f) for f in scene["flow_lines"]]
    frames, _ = annotate_rows(rows, radii, cam, specs)
    return dumps_annotations(annotations_document(frames, cam, specs))


@dataclass
class SweepSpec:
    background: list = field(default_factory=lambda: ["flat"])
    behavior_class: list = field(default_factory=lambda: ["shy"])
    camera: list = field(default_factory=lambda: ["oblique"])
    density: list = field(default_factory=lambda: [0.25])
    environment: list = field(default_factory=lambda: ["open"])
    light: list = field(default_factory=lambda: [0.6])
    pedestrian_count: list = field(default_factory=lambda: [10])
    base_seed: int = 0
    output_root: str = "dataset"
    duration: int = 100
    dt: float = 0.1
    param_margin: float = 0.1
    noise_std: float = 0.0
    agent_shade: float = 0.1
    write_frames: bool = True

    def __post_init__(self):
        for ax in AXES:
            vals = getattr(self, ax)
            if not isinstance(vals, (list, tuple)):
                raise ConfigError(f"axis {ax!r} must be a list")
            if len(vals) == 0:
                raise ConfigError(f"axis {ax!r} has an empty value list")
        if not 0 <= int(self.base_seed) <= MASK64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")

    def scenarios(self):
        """(axis-index tuple, ScenarioSpec) pairs of the full product, validated."""
        lists = [getattr(self, ax) for ax in AXES]
        out = []
        for idx in itertools.product(*(range(len(v)) for v in lists)):
            values = {ax: lists[a][i] for a, (ax, i) in enumerate(zip(AXES, idx))}
            out.append((idx, ScenarioSpec(
                **values, duration=self.duration, dt=self.dt,
                seed=scenario_seed(self.base_seed, idx), param_margin=self.param_margin,
                noise_std=self.noise_std, agent_shade=self.agent_shade)))
        return out

    def to_dict(self) -> dict:
        return {f.name: (list(getattr(self, f.name)) if f.name in AXES else getattr(self, f.name))
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        if not isinstance(d, dict):
            raise ConfigError("sweep configuration must be an object")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown sweep field(s): {', '.join(sorted(extra))}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SweepSpec":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data)


def _run_one(job):
    idx, spec, root, write_frames = job
    name = scenario_name(idx)
    try:
        res = run_scenario(spec, Path(root) / name, write_frames)
    except LCrowdError as exc:
        return VideoRecord(spec, idx, name, {}, "failed", f"{type(exc).__name__}: {exc}"), None
    files = {role: f"{name}/{rel}" for role, rel in res["files"].items()}
    return VideoRecord(spec, idx, name, files), res["costs"]


def run_sweep(sweep: SweepSpec, workers: int = 1, progress=None) -> list[VideoRecord]:
    """Generate every scenario of the sweep and write ``manifest.json`` last.

    Scenario failures are recorded in the manifest without stopping the sweep.
    """
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    root = Path(sweep.output_root)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(idx, spec, str(root), sweep.write_frames) for idx, spec in sweep.scenarios()]
    records = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for rec, costs in ex.map(_run_one, jobs):
                records.append(rec)
                if progress:
                    progress(rec, costs)
    else:
        for job in jobs:
            rec, costs = _run_one(job)
            records.append(rec)
            if progress:
                progress(rec, costs)
    records.sort(key=lambda r: r.index)
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "sweep": sweep.to_dict(),
        "records": [r.to_dict() for r in records],
    }
    _write_json(root / "manifest.json", manifest)
    return records


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
