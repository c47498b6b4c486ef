import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcrowd.errors import ConfigError, NoFreeSpace, Unreachable
from lcrowd.params import SimParams
from lcrowd.simulation import (
    AgentState,
    Environment,
    GoalKind,
    GoalPolicy,
    TrajectoryRecorder,
    World,
    adapt_velocity,
    format_trajectory_csv,
    initialize_agent,
    parse_trajectory_csv,
    perturbation_angle,
    rows_to_trajectories,
    select_goal,
    step,
)

FIXED = GoalPolicy(GoalKind.FIXED_POINT, point=(10.0, 0.0))


def agent(i, pos, goal=(10.0, 0.0), vel=(0.0, 0.0), **kw):
    params = SimParams(**kw)
    return AgentState(i, pos, params, GoalPolicy(GoalKind.FIXED_POINT, point=goal), vel,
                      goal=np.array(goal), path=[tuple(goal)])


def make_world(agents, bounds=(-30, -30, 30, 30), obstacles=(), seed=0):
    env = Environment(bounds, list(obstacles))
    w = World(env, agents, 0.1, np.random.default_rng(seed))
    for a in agents:
        initialize_agent(a, w)
    return w


def crowd(n=50, seed=1, side=10.0, radius=0.3):
    rng = np.random.default_rng(seed)
    region = (0.0, 0.0, side, side)
    pts = []
    while len(pts) < n:
        q = rng.uniform(radius, side - radius, 2)
        if all(math.dist(q, p) > 2 * radius for p in pts):
            pts.append(q)
    agents = [AgentState(i, p, SimParams(radius=radius),
                         GoalPolicy(GoalKind.REGION_SAMPLE, region=region))
              for i, p in enumerate(pts)]
    return make_world(agents, bounds=region, seed=seed)


# goal selection

def test_fixed_point_goal():
    env = Environment((-20, -20, 20, 20))
    a = agent(0, (0, 0))
    assert tuple(select_goal(a, env, FIXED, np.random.default_rng(0))) == (10.0, 0.0)


def test_waypoint_cycle_advances_on_arrival():
    env = Environment((-20, -20, 20, 20))
    pol = GoalPolicy(GoalKind.WAYPOINT_CYCLE, waypoints=[(0, 0), (5, 0)])
    a = AgentState(0, (0.5, 0.0), SimParams(radius=0.3), pol, goal=(0.0, 0.0))
    assert tuple(select_goal(a, env, pol, np.random.default_rng(0))) == (5.0, 0.0)
    a.goal = np.array([5.0, 0.0])
    a.position = np.array([4.5, 0.0])
    assert tuple(select_goal(a, env, pol, np.random.default_rng(0))) == (0.0, 0.0)
    a.position = np.array([2.0, 0.0])
    assert tuple(select_goal(a, env, pol, np.random.default_rng(0))) == (5.0, 0.0)


def test_region_sample_deterministic():
    env = Environment((-5, -5, 5, 5))
    pol = GoalPolicy(GoalKind.REGION_SAMPLE, region=(0, 0, 1, 1))
    a = AgentState(0, (0, 0), SimParams(radius=0.1), pol)
    g1 = select_goal(a, env, pol, np.random.default_rng(42))
    g2 = select_goal(a, env, pol, np.random.default_rng(42))
    assert np.array_equal(g1, g2)
    assert 0 <= g1[0] <= 1 and 0 <= g1[1] <= 1


def test_covered_region_raises():
    env = Environment((-5, -5, 5, 5), [[(-1, -1), (2, -1), (2, 2), (-1, 2)]])
    pol = GoalPolicy(GoalKind.REGION_SAMPLE, region=(0, 0, 1, 1))
    a = AgentState(0, (-4, -4), SimParams(radius=0.1), pol)
    with pytest.raises(NoFreeSpace):
        select_goal(a, env, pol, np.random.default_rng(0))


def test_policy_validation():
    with pytest.raises(ConfigError):
        GoalPolicy(GoalKind.FIXED_POINT)
    with pytest.raises(ConfigError):
        Environment((0, 0, -1, 1))
    with pytest.raises(ConfigError):
        Environment((0, 0, 1, 1), [[(0, 0), (2, 0), (0, 0.5)]])


# local adaptation

def test_unconstrained_velocity_is_preferred():
    a = agent(0, (0, 0), pref_speed=1.4)
    v = adapt_velocity(a, [], [], 0.1)
    assert tuple(v) == (1.4, 0.0)


def test_far_neighbor_ignored():
    a = agent(3, (0, 0), neighbor_dist=5.0)
    far = agent(1, (0, 6.0), goal=(0, -10))
    assert np.array_equal(adapt_velocity(a, [far], [], 0.1), adapt_velocity(a, [], [], 0.1))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_neighbor_truncation(seed, max_neighbors):
    rng = np.random.default_rng(seed)
    me = agent(seed % 50, (0, 0), vel=rng.normal(size=2), neighbor_dist=4.0,
               max_neighbors=max_neighbors, radius=0.3)
    others = []
    for i in range(15):
        p = rng.uniform(-8, 8, 2)
        if np.linalg.norm(p) < 0.7:
            continue
        others.append(agent(100 + i, p, vel=rng.normal(size=2), radius=0.3))
    full = adapt_velocity(me, others, [], 0.1)
    near = [o for o in others if np.linalg.norm(o.position) < 4.0]
    assert np.array_equal(full, adapt_velocity(me, near, [], 0.1))
    # only the nearest max_neighbors within range matter
    near.sort(key=lambda o: float(o.position @ o.position))
    assert np.array_equal(full, adapt_velocity(me, near[:max_neighbors], [], 0.1))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_speed_bound_single_call(seed):
    rng = np.random.default_rng(seed)
    me = agent(seed % 7, (0, 0), vel=rng.normal(size=2), pref_speed=float(rng.uniform(0.3, 1.9)),
               radius=0.3)
    others = [agent(10 + i, rng.uniform(-3, 3, 2), vel=rng.normal(size=2), radius=0.3)
              for i in range(6)]
    others = [o for o in others if np.linalg.norm(o.position) > 0.6]
    v = adapt_velocity(me, others, [], 0.1)
    assert np.linalg.norm(v) <= me.params.pref_speed * 1.05


def test_perturbation_angle():
    assert perturbation_angle(3) == 0.0
    assert perturbation_angle(0) == pytest.approx(-0.006)
    assert perturbation_angle(13) == pytest.approx(0.006)


# stepping

def test_single_step_kinematics():
    w = make_world([agent(0, (0, 0), pref_speed=1.4)])
    step(w, 0.1)
    assert w.agents[0].position[0] == pytest.approx(0.14, abs=1e-12)
    assert w.agents[0].position[1] == 0.0


def test_empty_world():
    w = make_world([])
    step(w, 0.1)
    assert w.frame == 1 and w.costs_ms == []


def test_dt_validation():
    w = make_world([agent(0, (0, 0))])
    for dt in (0.0, -0.1, 0.6):
        with pytest.raises(ValueError):
            step(w, dt)


def test_progress_single_agent():
    w = make_world([agent(0, (0, 0), goal=(10, 0), pref_speed=1.4, radius=0.3)])
    limit = (10 / 1.4) / 0.1 * 1.1
    steps = 0
    while math.dist(w.agents[0].position, (10, 0)) > 0.6:
        step(w)
        steps += 1
        assert steps <= limit


def test_head_on_no_penetration():
    a = agent(0, (0, 0), goal=(20, 0), radius=0.4)
    b = agent(1, (20, 0), goal=(0, 0), radius=0.4)
    w = make_world([a, b])
    dmin = math.inf
    for _ in range(300):
        step(w)
        dmin = min(dmin, math.dist(w.agents[0].position, w.agents[1].position))
    assert dmin >= 0.8 - 1e-3
    # both made it past each other
    assert w.agents[0].position[0] > 15 and w.agents[1].position[0] < 5


def test_crowd_penetration_and_speed_bound():
    w = crowd(n=40, seed=3)
    radii = np.array([a.params.radius for a in w.agents])
    rsum = radii[:, None] + radii[None, :]
    iu = np.triu_indices(len(radii), 1)
    events = 0
    for _ in range(300):
        step(w)
        P = w.positions()
        D = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
        events += int(np.sum(D[iu] < rsum[iu] - 1e-3))
        speeds = np.linalg.norm(w.velocities(), axis=1)
        assert np.all(speeds <= 1.4 * 1.05 + 1e-12)
        xmin, ymin, xmax, ymax = w.environment.bounds
        assert np.all((P >= [xmin, ymin]) & (P <= [xmax, ymax]))
    assert events / (300 * len(iu[0])) < 0.01


def test_determinism_50_agents():
    def run():
        w = crowd(n=50, seed=7)
        rec = TrajectoryRecorder()
        for _ in range(100):
            step(w)
            rec.record(w)
        return rec.to_csv()

    assert run() == run()


def test_obstacle_avoidance():
    wall = [(4.9, -3.0), (5.1, -3.0), (5.1, 3.0), (4.9, 3.0)]
    a = agent(0, (0, 0), goal=(10, 0), radius=0.3)
    w = make_world([a], bounds=(-2, -6, 12, 6), obstacles=[wall])
    assert len(w.agents[0].path) >= 2
    for _ in range(200):
        step(w)
        assert w.environment.clearance(w.agents[0].position) > 0.3 - 0.05
    assert math.dist(w.agents[0].position, (10, 0)) < 0.6


def test_unreachable_at_initialization():
    a = AgentState(0, (0, 0), SimParams(radius=0.3),
                   GoalPolicy(GoalKind.FIXED_POINT, point=(9.0, 0.0)))
    box = [[(8, -2), (10, -2), (10, -1.8), (8, -1.8)], [(8, 1.8), (10, 1.8), (10, 2), (8, 2)],
           [(8, -2), (8.2, -2), (8.2, 2), (8, 2)], [(9.8, -2), (10, -2), (10, 2), (9.8, 2)]]
    env = Environment((-5, -5, 12, 5), box)
    w = World(env, [a])
    with pytest.raises(Unreachable):
        initialize_agent(a, w)


def test_mid_run_unreachable_holds():
    # the goal becomes enclosed after initialization; the agent holds instead of raising
    env = Environment((-5, -5, 12, 5))
    pol = GoalPolicy(GoalKind.WAYPOINT_CYCLE, waypoints=[(1.0, 0.0), (9.0, 0.0)])
    a = AgentState(0, (0.9, 0.0), SimParams(radius=0.3), pol)
    w = World(env, [a])
    initialize_agent(a, w)
    env.obstacles = [[(8, -2), (10, -2), (10, -1.8), (8, -1.8)],
                     [(8, 1.8), (10, 1.8), (10, 2), (8, 2)],
                     [(8, -2), (8.2, -2), (8.2, 2), (8, 2)],
                     [(9.8, -2), (10, -2), (10, 2), (9.8, 2)]]
    env.__post_init__()
    for _ in range(5):
        step(w)
    assert a.goal is None
    assert np.linalg.norm(a.velocity) == 0.0


# trajectory export

def test_trajectory_csv_round_trip_and_invariants():
    w = crowd(n=10, seed=2)
    rec = TrajectoryRecorder()
    rec.record(w)
    for _ in range(50):
        step(w)
        rec.record(w)
    text = rec.to_csv()
    assert text.splitlines()[0] == "frame,agent_id,x,y,vx,vy"
    rows = parse_trajectory_csv(text)
    assert rows == rec.rows
    assert format_trajectory_csv(rows) == text
    for tr in rows_to_trajectories(rows):
        frames = [f for f, _ in tr.samples]
        assert frames == sorted(set(frames))
        for (_, p), (_, q) in zip(tr.samples, tr.samples[1:]):
            assert math.dist(p, q) <= 1.4 * 0.1 * 1.05 + 2e-6


@pytest.mark.parametrize(
    "text,match",
    [
        ("", "empty"),
        ("frame,agent_id,x,y\n", "header"),
        ("frame,agent_id,x,y,vx,vy\n0,1,0.0,0.0,0.0\n", "line 2"),
        ("frame,agent_id,x,y,vx,vy\n0,1,0.0,0.0,0.0,0.0\n1,1,a,0,0,0\n", "line 3"),
        ("frame,agent_id,x,y,vx,vy\n0,1,nan,0.0,0.0,0.0\n", "line 2"),
    ],
)
def test_trajectory_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_trajectory_csv(text)


def test_non_increasing_frames_rejected():
    rows = [(1, 0, 0.0, 0.0, 0.0, 0.0), (1, 0, 1.0, 0.0, 0.0, 0.0)]
    with pytest.raises(ConfigError):
        rows_to_trajectories(rows)


def test_environment_round_trip():
    env = Environment((0, 0, 10, 10), [[(1, 1), (2, 1), (2, 2)]], 0.5)
    back = Environment.from_dict(env.to_dict())
    assert back.to_dict() == env.to_dict()
    assert env.is_free((5, 5), 0.3) and not env.is_free((1.8, 1.2), 0.0)
