import heapq
import math

import numpy as np
import pytest

from lcrowd.errors import Unreachable
from lcrowd.planner import (
    astar,
    line_of_sight,
    plan_global_path,
    point_polygon_distance,
    segment_polygon_distance,
)
from lcrowd.simulation import Environment

WALL = [(4.9, 0.0), (5.1, 0.0), (5.1, 8.0), (4.9, 8.0)]


def dijkstra_length(grid, start, goal):
    """Brute-force shortest 8-connected path length, same move rules as the planner."""
    ny, nx = grid.shape
    blocked = grid.copy()
    blocked[start] = blocked[goal] = False
    dist = {start: 0.0}
    heap = [(0.0, start)]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if (r, c) == goal:
            return d
        if d > dist[(r, c)]:
            continue
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if not (dr or dc):
                    continue
                rr, cc = r + dr, c + dc
                if not (0 <= rr < ny and 0 <= cc < nx) or blocked[rr, cc]:
                    continue
                if dr and dc and (blocked[r, cc] or blocked[rr, c]):
                    continue
                nd = d + (math.sqrt(2) if dr and dc else 1.0)
                if nd < dist.get((rr, cc), math.inf):
                    dist[(rr, cc)] = nd
                    heapq.heappush(heap, (nd, (rr, cc)))
    return None


def path_length(pts):
    return sum(math.dist(a, b) for a, b in zip(pts, pts[1:]))


def test_point_polygon_distance():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    d = point_polygon_distance([(0.5, 0.5), (2, 0.5), (2, 2)], sq)
    np.testing.assert_allclose(d, [0.0, 1.0, math.sqrt(2)])


def test_segment_polygon_distance():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert segment_polygon_distance((-1, 0.5), (2, 0.5), sq) == 0.0
    assert segment_polygon_distance((-1, 2), (2, 2), sq) == pytest.approx(1.0)
    assert segment_polygon_distance((2, -1), (2, 3), sq) == pytest.approx(1.0)


def test_empty_environment_straight_line():
    env = Environment((0, 0, 10, 10))
    path = plan_global_path((1, 1), (9, 1), env, 0.3)
    assert path == [(1.0, 1.0), (9.0, 1.0)]
    assert path_length(path) == pytest.approx(8.0)


def test_wall_detour_through_gap():
    env = Environment((0, 0, 10, 10), [WALL])
    r = 0.3
    path = plan_global_path((1, 1), (9, 1), env, r)
    assert path[0] == (1.0, 1.0) and path[-1] == (9.0, 1.0)
    # the only way around is above the wall
    for a, b in zip(path, path[1:]):
        if (a[0] - 5) * (b[0] - 5) <= 0 and a[0] != b[0]:
            t = (5 - a[0]) / (b[0] - a[0])
            assert a[1] + t * (b[1] - a[1]) > 8.0
    for p in path:
        if abs(p[0] - 5) < 0.5:
            assert p[1] > 8.0
    # no longer than the grid-optimal path (shortcutting only shortens)
    grid = env.occupancy(r)
    res = env.grid_resolution
    s = (int(1 / res), int(1 / res))
    g = (int(1 / res), int(9 / res))
    oracle = dijkstra_length(grid, s, g) * res
    assert path_length(path) <= oracle + 2 * res
    # and at least the Euclidean lower bound around the wall tip
    tip = (5.0, 8.0 + r)
    assert path_length(path) >= math.dist((1, 1), tip) + math.dist(tip, (9, 1)) - 2 * res


def test_path_clearance():
    env = Environment((0, 0, 10, 10), [WALL, [(2, 4), (3, 4), (3, 5), (2, 5)]])
    r = 0.4
    path = plan_global_path((1, 1), (9, 1), env, r)
    for p in path[1:-1]:
        assert env.clearance(p) >= r - env.grid_resolution
    for a, b in zip(path, path[1:]):
        assert line_of_sight(a, b, env.obstacles, r - env.grid_resolution)


def test_astar_matches_dijkstra_on_random_grids():
    rng = np.random.default_rng(0)
    for _ in range(30):
        grid = rng.random((20, 20)) < 0.3
        s, g = (0, 0), (19, 19)
        cells = astar(grid, s, g)
        oracle = dijkstra_length(grid, s, g)
        if oracle is None:
            assert cells is None
            continue
        length = sum(math.dist(a, b) for a, b in zip(cells, cells[1:]))
        assert length == pytest.approx(oracle)


def test_start_inside_obstacle():
    env = Environment((0, 0, 10, 10), [WALL])
    with pytest.raises(Unreachable):
        plan_global_path((5.0, 4.0), (9, 1), env, 0.3)


def test_enclosed_goal_unreachable():
    box = [[(6, 6), (9, 6), (9, 6.2), (6, 6.2)], [(6, 8.8), (9, 8.8), (9, 9), (6, 9)],
           [(6, 6), (6.2, 6), (6.2, 9), (6, 9)], [(8.8, 6), (9, 6), (9, 9), (8.8, 9)]]
    env = Environment((0, 0, 10, 10), box)
    with pytest.raises(Unreachable):
        plan_global_path((1, 1), (7.5, 7.5), env, 0.3)


def test_goal_outside_bounds():
    env = Environment((0, 0, 10, 10))
    with pytest.raises(Unreachable):
        plan_global_path((1, 1), (11, 1), env, 0.3)
