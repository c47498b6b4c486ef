"""Pure-Python reference for the hot loops in ``lcrowd._kernels``.

Each routine mirrors the compiled version operation for operation, so both
backends agree to the last bit on IEEE-754 doubles. Lines follow the usual
ORCA convention: a velocity ``v`` satisfies a line when
``det(direction, point - v) <= 0`` (the permitted side is on the left).
"""
import math

import numpy as np

EPSILON = 1e-5
OBSTACLE_HORIZON = 2.0


def _det(ax, ay, bx, by):
    return ax * by - ay * bx


def _lp1(lines, line_no, radius, opt_x, opt_y, direction_opt):
    px, py, dx, dy = lines[line_no]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left = -dot - sq
    t_right = -dot + sq
    for i in range(line_no):
        qx, qy, ex, ey = lines[i]
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= EPSILON:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            if t < t_right:
                t_right = t
        else:
            if t > t_left:
                t_left = t
        if t_left > t_right:
            return None
    if direction_opt:
        if opt_x * dx + opt_y * dy > 0.0:
            return px + t_right * dx, py + t_right * dy
        return px + t_left * dx, py + t_left * dy
    t = dx * (opt_x - px) + dy * (opt_y - py)
    if t < t_left:
        t = t_left
    elif t > t_right:
        t = t_right
    return px + t * dx, py + t * dy


def _lp2(lines, radius, opt_x, opt_y, direction_opt):
    if direction_opt:
        rx = opt_x * radius
        ry = opt_y * radius
    else:
        sq = opt_x * opt_x + opt_y * opt_y
        if sq > radius * radius:
            norm = math.sqrt(sq)
            rx = (opt_x / norm) * radius
            ry = (opt_y / norm) * radius
        else:
            rx = opt_x
            ry = opt_y
    for i in range(len(lines)):
        px, py, dx, dy = lines[i]
        if _det(dx, dy, px - rx, py - ry) > 0.0:
            res = _lp1(lines, i, radius, opt_x, opt_y, direction_opt)
            if res is None:
                return i, rx, ry
            rx, ry = res
    return len(lines), rx, ry


def _lp3(lines, n_obst, begin, radius, rx, ry):
    # Least-penetration fallback: minimise the largest violation of the
    # agent lines while the obstacle lines stay hard.
    distance = 0.0
    for i in range(begin, len(lines)):
        px, py, dx, dy = lines[i]
        if _det(dx, dy, px - rx, py - ry) > distance:
            proj = list(lines[:n_obst])
            for j in range(n_obst, i):
                qx, qy, ex, ey = lines[j]
                determinant = _det(dx, dy, ex, ey)
                if abs(determinant) <= EPSILON:
                    if dx * ex + dy * ey > 0.0:
                        continue
                    ptx = 0.5 * (px + qx)
                    pty = 0.5 * (py + qy)
                else:
                    s = _det(ex, ey, px - qx, py - qy) / determinant
                    ptx = px + s * dx
                    pty = py + s * dy
                ux = ex - dx
                uy = ey - dy
                norm = math.sqrt(ux * ux + uy * uy)
                proj.append((ptx, pty, ux / norm, uy / norm))
            fail, tx, ty = _lp2(proj, radius, -dy, dx, True)
            if fail >= len(proj):
                rx = tx
                ry = ty
            distance = _det(dx, dy, px - rx, py - ry)
    return rx, ry


def _obstacle_lines(x, y, radius, max_speed, dt, verts, starts, lines):
    for k in range(len(starts) - 1):
        a = starts[k]
        b = starts[k + 1]
        best = math.inf
        qx = 0.0
        qy = 0.0
        inside = False
        for e in range(a, b):
            x1, y1 = verts[e]
            x2, y2 = verts[e + 1] if e + 1 < b else verts[a]
            ex = x2 - x1
            ey = y2 - y1
            l2 = ex * ex + ey * ey
            t = 0.0
            if l2 > 0.0:
                t = ((x - x1) * ex + (y - y1) * ey) / l2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            cx = x1 + t * ex
            cy = y1 + t * ey
            d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy)
            if d2 < best:
                best = d2
                qx = cx
                qy = cy
            if (y1 > y) != (y2 > y):
                xint = x1 + (y - y1) * ex / ey
                if x < xint:
                    inside = not inside
        dist = math.sqrt(best)
        if dist <= 1e-12:
            continue
        if inside:
            nx = (x - qx) / dist
            ny = (y - qy) / dist
            gap = -dist - radius
        else:
            nx = (qx - x) / dist
            ny = (qy - y) / dist
            gap = dist - radius
        if gap >= max_speed * OBSTACLE_HORIZON:
            continue
        if gap >= 0.0:
            c = gap / OBSTACLE_HORIZON
        else:
            c = gap / dt
        lines.append((c * nx, c * ny, -ny, nx))


def _agent_line(x, y, vx, vy, ox, oy, ovx, ovy, combined_radius, inv_th, dt):
    rpx = ox - x
    rpy = oy - y
    rvx = vx - ovx
    rvy = vy - ovy
    dist_sq = rpx * rpx + rpy * rpy
    crs = combined_radius * combined_radius
    if dist_sq > crs:
        wx = rvx - inv_th * rpx
        wy = rvy - inv_th * rpy
        wls = wx * wx + wy * wy
        dp1 = wx * rpx + wy * rpy
        if dp1 < 0.0 and dp1 * dp1 > crs * wls:
            wl = math.sqrt(wls)
            uwx = wx / wl
            uwy = wy / wl
            dirx = uwy
            diry = -uwx
            s = combined_radius * inv_th - wl
            ux = s * uwx
            uy = s * uwy
        else:
            leg = math.sqrt(dist_sq - crs)
            if _det(rpx, rpy, wx, wy) > 0.0:
                dirx = (rpx * leg - rpy * combined_radius) / dist_sq
                diry = (rpx * combined_radius + rpy * leg) / dist_sq
            else:
                dirx = -(rpx * leg + rpy * combined_radius) / dist_sq
                diry = -(-rpx * combined_radius + rpy * leg) / dist_sq
            dp2 = rvx * dirx + rvy * diry
            ux = dp2 * dirx - rvx
            uy = dp2 * diry - rvy
    else:
        inv_ts = 1.0 / dt
        wx = rvx - inv_ts * rpx
        wy = rvy - inv_ts * rpy
        wl = math.sqrt(wx * wx + wy * wy)
        if wl > 1e-12:
            uwx = wx / wl
            uwy = wy / wl
        else:
            uwx = 1.0
            uwy = 0.0
        dirx = uwy
        diry = -uwx
        s = combined_radius * inv_ts - wl
        ux = s * uwx
        uy = s * uwy
    return (vx + 0.5 * ux, vy + 0.5 * uy, dirx, diry)


def _solve(x, y, vx, vy, pref_x, pref_y, skip, xs, ys, vxs, vys, rads, valid,
           nd, mn, ph, radius, max_speed, angle, dt, verts, starts):
    lines = []
    _obstacle_lines(x, y, radius, max_speed, dt, verts, starts, lines)
    n_obst = len(lines)
    range_sq = nd * nd
    cand = []
    for j in range(len(xs)):
        if j == skip or not valid[j]:
            continue
        dx = xs[j] - x
        dy = ys[j] - y
        d2 = dx * dx + dy * dy
        if d2 < range_sq:
            cand.append((d2, j))
    cand.sort()
    del cand[max(mn, 0):]
    if cand or n_obst:
        c = math.cos(angle)
        s = math.sin(angle)
        pref_x, pref_y = pref_x * c - pref_y * s, pref_x * s + pref_y * c
    inv_th = 1.0 / ph
    for _, j in cand:
        lines.append(_agent_line(x, y, vx, vy, xs[j], ys[j], vxs[j], vys[j],
                                 radius + rads[j], inv_th, dt))
    fail, rx, ry = _lp2(lines, max_speed, pref_x, pref_y, False)
    if fail < len(lines):
        rx, ry = _lp3(lines, n_obst, fail, max_speed, rx, ry)
    return rx, ry


def _poly_lists(verts, starts):
    return [tuple(v) for v in np.asarray(verts, dtype=float).reshape(-1, 2).tolist()], \
        [int(s) for s in np.asarray(starts).tolist()]


def agent_velocity(x, y, vx, vy, pref_x, pref_y, others_pos, others_vel, others_rad,
                   nd, mn, ph, radius, max_speed, angle, dt, verts, starts):
    """New velocity for one agent given arbitrary neighbour arrays."""
    others_pos = np.asarray(others_pos, dtype=float).reshape(-1, 2)
    others_vel = np.asarray(others_vel, dtype=float).reshape(-1, 2)
    vl, sl = _poly_lists(verts, starts)
    n = len(others_pos)
    return _solve(x, y, vx, vy, pref_x, pref_y, -1,
                  others_pos[:, 0].tolist(), others_pos[:, 1].tolist(),
                  others_vel[:, 0].tolist(), others_vel[:, 1].tolist(),
                  np.asarray(others_rad, dtype=float).tolist(), [True] * n,
                  nd, int(mn), ph, radius, max_speed, angle, dt, vl, sl)


def compute_velocities(pos, vel, pref, params, angles, verts, starts, dt):
    """New velocities for every agent from a common pre-step snapshot.

    ``params`` columns: neighbor_dist, max_neighbors, planning_horizon,
    radius, pref_speed (the latter doubles as the speed cap).
    """
    pos = np.asarray(pos, dtype=float)
    n = len(pos)
    out = np.zeros((n, 2))
    if n == 0:
        return out
    xs, ys = pos[:, 0].tolist(), pos[:, 1].tolist()
    vel = np.asarray(vel, dtype=float)
    vxs, vys = vel[:, 0].tolist(), vel[:, 1].tolist()
    pref = np.asarray(pref, dtype=float).tolist()
    prm = np.asarray(params, dtype=float).tolist()
    rads = [p[3] for p in prm]
    ang = np.asarray(angles, dtype=float).tolist()
    valid = [True] * n
    vl, sl = _poly_lists(verts, starts)
    for i in range(n):
        nd, mn, ph, r, sp = prm[i]
        out[i] = _solve(xs[i], ys[i], vxs[i], vys[i], pref[i][0], pref[i][1], i,
                        xs, ys, vxs, vys, rads, valid,
                        nd, int(mn), ph, r, sp, ang[i], dt, vl, sl)
    return out


def pref_toward(x, y, gx, gy, speed, dt):
    dx = gx - x
    dy = gy - y
    dist = math.sqrt(dx * dx + dy * dy)
    if dist <= 1e-12:
        return 0.0, 0.0
    if dist < speed * dt:
        return dx / dt, dy / dt
    return dx / dist * speed, dy / dist * speed


def fit_residual(obs_pos, obs_vel, valid, goals, focal, params, angle, dt, horizon,
                 verts, starts, radii=None):
    """Sum of squared re-simulation errors for one agent and its sample count.

    From every valid observed state the focal agent is re-simulated for up to
    ``horizon`` steps with ``params`` while every other agent replays its
    observed positions and velocities. Other agents take their entry of
    ``radii`` when it is positive and the candidate radius otherwise.
    """
    obs_pos = np.asarray(obs_pos, dtype=float)
    T, N = obs_pos.shape[:2]
    pos_l = obs_pos.tolist()
    vel_l = np.asarray(obs_vel, dtype=float).tolist()
    val_l = np.asarray(valid, dtype=bool).tolist()
    goal_l = np.asarray(goals, dtype=float).tolist()
    nd, mn, ph, r, sp = [float(p) for p in params]
    mn = int(mn)
    rads = [r] * N
    if radii is not None:
        rads = [float(q) if q > 0 else r for q in np.asarray(radii, dtype=float)[:N]]
    vl, sl = _poly_lists(verts, starts)
    cols = []
    for k in range(T):
        row_p = pos_l[k]
        row_v = vel_l[k]
        cols.append(([p[0] for p in row_p], [p[1] for p in row_p],
                     [v[0] for v in row_v], [v[1] for v in row_v]))
    sse = 0.0
    count = 0
    for t in range(T - 1):
        if not val_l[t][focal]:
            continue
        x, y = pos_l[t][focal]
        vx, vy = vel_l[t][focal]
        gx, gy = goal_l[t]
        for s in range(horizon):
            k = t + s
            if k + 1 >= T or not val_l[k + 1][focal]:
                break
            px, py = pref_toward(x, y, gx, gy, sp, dt)
            xs, ys, vxs, vys = cols[k]
            nvx, nvy = _solve(x, y, vx, vy, px, py, focal, xs, ys, vxs, vys, rads,
                              val_l[k], nd, mn, ph, r, sp, angle, dt, vl, sl)
            x = x + nvx * dt
            y = y + nvy * dt
            vx = nvx
            vy = nvy
            ex = x - pos_l[k + 1][focal][0]
            ey = y - pos_l[k + 1][focal][1]
            sse += ex * ex + ey * ey
            count += 1
    return sse, count
