"""Global path planning on an inflated occupancy grid.

8-connected A* with an octile heuristic, followed by greedy line-of-sight
shortcutting against the exact (un-rasterized) obstacle polygons.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

from lcrowd.errors import Unreachable

SQRT2 = math.sqrt(2.0)


def point_polygon_distance(points, poly) -> np.ndarray:
    """Distance from each point to a polygon (0 inside). ``points`` is (n, 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    P = np.asarray(poly, dtype=float)
    A = P
    B = np.roll(P, -1, axis=0)
    best = np.full(len(pts), np.inf)
    inside = np.zeros(len(pts), dtype=bool)
    x = pts[:, 0]
    y = pts[:, 1]
    for (x1, y1), (x2, y2) in zip(A, B):
        ex, ey = x2 - x1, y2 - y1
        l2 = ex * ex + ey * ey
        if l2 > 0:
            t = np.clip(((x - x1) * ex + (y - y1) * ey) / l2, 0.0, 1.0)
        else:
            t = np.zeros_like(x)
        cx = x1 + t * ex
        cy = y1 + t * ey
        best = np.minimum(best, np.hypot(x - cx, y - cy))
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * ex / ey
        inside ^= crosses & (x < xint)
    best[inside] = 0.0
    return best


def _seg_seg_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def segment_polygon_distance(a, b, poly) -> float:
    """Minimum distance between segment ``ab`` and a polygon (0 if they touch)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    P = np.asarray(poly, dtype=float)
    if point_polygon_distance(np.array([a, b]), P).min() == 0.0:
        return 0.0
    Q = np.roll(P, -1, axis=0)
    for q1, q2 in zip(P, Q):
        if _seg_seg_intersect(a, b, q1, q2):
            return 0.0
    # vertices of the polygon against the segment
    ab = b - a
    l2 = float(ab @ ab)
    if l2 > 0:
        t = np.clip(((P - a) @ ab) / l2, 0.0, 1.0)
    else:
        t = np.zeros(len(P))
    proj = a + t[:, None] * ab
    d_vert = np.hypot(*(P - proj).T).min()
    d_end = point_polygon_distance(np.array([a, b]), P).min()
    return float(min(d_vert, d_end))


def line_of_sight(a, b, obstacles, clearance: float) -> bool:
    return all(segment_polygon_distance(a, b, poly) >= clearance for poly in obstacles)


def occupancy_grid(environment, radius: float) -> np.ndarray:
    """Boolean grid (rows = y, cols = x); True where a cell center lies closer
    than ``radius`` to an obstacle."""
    xmin, ymin, xmax, ymax = environment.bounds
    res = environment.grid_resolution
    nx = max(1, int(math.ceil((xmax - xmin) / res)))
    ny = max(1, int(math.ceil((ymax - ymin) / res)))
    cx = xmin + (np.arange(nx) + 0.5) * res
    cy = ymin + (np.arange(ny) + 0.5) * res
    X, Y = np.meshgrid(cx, cy)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    blocked = np.zeros(len(pts), dtype=bool)
    for poly in environment.obstacles:
        blocked |= point_polygon_distance(pts, poly) < radius
    return blocked.reshape(ny, nx)


def _cell_of(p, environment, shape):
    xmin, ymin = environment.bounds[0], environment.bounds[1]
    res = environment.grid_resolution
    c = int(math.floor((p[0] - xmin) / res))
    r = int(math.floor((p[1] - ymin) / res))
    return min(max(r, 0), shape[0] - 1), min(max(c, 0), shape[1] - 1)


def astar(grid: np.ndarray, start, goal, cost_diag: float = SQRT2):
    """A* over an 8-connected boolean grid. Returns the list of (row, col)
    cells from start to goal, or None. Start and goal cells are always
    treated as free; diagonal moves may not cut blocked corners."""
    ny, nx = grid.shape
    blocked = grid.copy()
    blocked[start] = False
    blocked[goal] = False
    gr, gc = goal

    def h(r, c):
        dr = abs(r - gr)
        dc = abs(c - gc)
        return (dr + dc) + (cost_diag - 2.0) * min(dr, dc)

    g = {start: 0.0}
    parent = {start: None}
    heap = [(h(*start), 0.0, start)]
    closed = set()
    moves = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
             (-1, -1, cost_diag), (-1, 1, cost_diag), (1, -1, cost_diag), (1, 1, cost_diag)]
    while heap:
        f, gcur, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        if cell == goal:
            out = []
            while cell is not None:
                out.append(cell)
                cell = parent[cell]
            return out[::-1]
        closed.add(cell)
        r, c = cell
        for dr, dc, w in moves:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < ny and 0 <= cc < nx) or blocked[rr, cc]:
                continue
            if dr and dc and (blocked[r, cc] or blocked[rr, c]):
                continue
            ng = gcur + w
            nb = (rr, cc)
            if ng < g.get(nb, math.inf):
                g[nb] = ng
                parent[nb] = cell
                heapq.heappush(heap, (ng + h(rr, cc), ng, nb))
    return None


def shortcut(points, obstacles, clearance: float):
    """Greedy line-of-sight simplification: from each kept vertex, extend to
    later vertices while they stay visible with the given clearance."""
    if len(points) <= 2:
        return list(points)
    out = [points[0]]
    i = 0
    n = len(points)
    while i < n - 1:
        j = i + 1
        while j + 1 < n and line_of_sight(points[i], points[j + 1], obstacles, clearance):
            j += 1
        out.append(points[j])
        i = j
    return out


def plan_global_path(start, goal, environment, radius: float):
    """Waypoints from ``start`` to ``goal`` keeping ``radius`` clearance.

    Raises Unreachable when either endpoint is not free after inflating the
    obstacles by ``radius`` or when no grid path exists.
    """
    start = (float(start[0]), float(start[1]))
    goal = (float(goal[0]), float(goal[1]))
    for name, p in (("start", start), ("goal", goal)):
        if not environment.contains(p):
            raise Unreachable(f"{name} {p} lies outside the environment bounds")
        if not environment.is_free(p, radius):
            raise Unreachable(f"{name} {p} lies inside an inflated obstacle")
    obstacles = environment.obstacles
    if line_of_sight(start, goal, obstacles, radius):
        return [start, goal]
    grid = environment.occupancy(radius)
    s = _cell_of(start, environment, grid.shape)
    g = _cell_of(goal, environment, grid.shape)
    cells = astar(grid, s, g)
    if cells is None:
        raise Unreachable(f"no path from {start} to {goal}")
    xmin, ymin = environment.bounds[0], environment.bounds[1]
    res = environment.grid_resolution
    pts = [start]
    for r, c in cells[1:-1]:
        pts.append((xmin + (c + 0.5) * res, ymin + (r + 0.5) * res))
    pts.append(goal)
    return shortcut(pts, obstacles, radius)
