# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ORCA solver and re-simulation residual.

Mirrors ``lcrowd._kernels_py`` operation for operation; keep the two in sync.
"""
from libc.math cimport sqrt, cos, sin, fabs, INFINITY
from libc.stdlib cimport malloc, free

import numpy as np

cdef double EPSILON = 1e-5
cdef double OBSTACLE_HORIZON_C = 2.0
OBSTACLE_HORIZON = OBSTACLE_HORIZON_C


cdef struct Line:
    double px
    double py
    double dx
    double dy


cdef inline double det(double ax, double ay, double bx, double by) noexcept nogil:
    return ax * by - ay * bx


cdef bint lp1(Line* lines, int line_no, double radius, double opt_x, double opt_y,
              bint direction_opt, double* rx, double* ry) noexcept nogil:
    cdef double px = lines[line_no].px, py = lines[line_no].py
    cdef double dx = lines[line_no].dx, dy = lines[line_no].dy
    cdef double dot = px * dx + py * dy
    cdef double disc = dot * dot + radius * radius - (px * px + py * py)
    cdef double sq, t_left, t_right, denom, numer, t
    cdef int i
    if disc < 0.0:
        return False
    sq = sqrt(disc)
    t_left = -dot - sq
    t_right = -dot + sq
    for i in range(line_no):
        denom = det(dx, dy, lines[i].dx, lines[i].dy)
        numer = det(lines[i].dx, lines[i].dy, px - lines[i].px, py - lines[i].py)
        if fabs(denom) <= EPSILON:
            if numer < 0.0:
                return False
            continue
        t = numer / denom
        if denom >= 0.0:
            if t < t_right:
                t_right = t
        else:
            if t > t_left:
                t_left = t
        if t_left > t_right:
            return False
    if direction_opt:
        if opt_x * dx + opt_y * dy > 0.0:
            rx[0] = px + t_right * dx
            ry[0] = py + t_right * dy
        else:
            rx[0] = px + t_left * dx
            ry[0] = py + t_left * dy
        return True
    t = dx * (opt_x - px) + dy * (opt_y - py)
    if t < t_left:
        t = t_left
    elif t > t_right:
        t = t_right
    rx[0] = px + t * dx
    ry[0] = py + t * dy
    return True


cdef int lp2(Line* lines, int n, double radius, double opt_x, double opt_y,
             bint direction_opt, double* rx, double* ry) noexcept nogil:
    cdef double sq, norm, tx, ty
    cdef int i
    if direction_opt:
        rx[0] = opt_x * radius
        ry[0] = opt_y * radius
    else:
        sq = opt_x * opt_x + opt_y * opt_y
        if sq > radius * radius:
            norm = sqrt(sq)
            rx[0] = (opt_x / norm) * radius
            ry[0] = (opt_y / norm) * radius
        else:
            rx[0] = opt_x
            ry[0] = opt_y
    for i in range(n):
        if det(lines[i].dx, lines[i].dy, lines[i].px - rx[0], lines[i].py - ry[0]) > 0.0:
            if not lp1(lines, i, radius, opt_x, opt_y, direction_opt, &tx, &ty):
                return i
            rx[0] = tx
            ry[0] = ty
    return n


cdef void lp3(Line* lines, int n, int n_obst, int begin, double radius,
              double* rx, double* ry, Line* proj) noexcept nogil:
    cdef double distance = 0.0
    cdef double px, py, dx, dy, qx, qy, ex, ey, determinant, s, ptx, pty, ux, uy, norm
    cdef double tx, ty
    cdef int i, j, m, fail
    for i in range(begin, n):
        px = lines[i].px
        py = lines[i].py
        dx = lines[i].dx
        dy = lines[i].dy
        if det(dx, dy, px - rx[0], py - ry[0]) > distance:
            for m in range(n_obst):
                proj[m] = lines[m]
            m = n_obst
            for j in range(n_obst, i):
                qx = lines[j].px
                qy = lines[j].py
                ex = lines[j].dx
                ey = lines[j].dy
                determinant = det(dx, dy, ex, ey)
                if fabs(determinant) <= EPSILON:
                    if dx * ex + dy * ey > 0.0:
                        continue
                    ptx = 0.5 * (px + qx)
                    pty = 0.5 * (py + qy)
                else:
                    s = det(ex, ey, px - qx, py - qy) / determinant
                    ptx = px + s * dx
                    pty = py + s * dy
                ux = ex - dx
                uy = ey - dy
                norm = sqrt(ux * ux + uy * uy)
                proj[m].px = ptx
                proj[m].py = pty
                proj[m].dx = ux / norm
                proj[m].dy = uy / norm
                m += 1
            fail = lp2(proj, m, radius, -dy, dx, True, &tx, &ty)
            if fail >= m:
                rx[0] = tx
                ry[0] = ty
            distance = det(dx, dy, px - rx[0], py - ry[0])


cdef int obstacle_lines(double x, double y, double radius, double max_speed, double dt,
                        const double* verts, const long* starts, int npoly,
                        Line* lines) noexcept nogil:
    cdef int k, e, a, b, count = 0
    cdef double best, qx, qy, x1, y1, x2, y2, ex, ey, l2, t, cx, cy, d2, xint
    cdef double dist, nx, ny, gap, c
    cdef bint inside
    for k in range(npoly):
        a = <int>starts[k]
        b = <int>starts[k + 1]
        best = INFINITY
        qx = 0.0
        qy = 0.0
        inside = False
        for e in range(a, b):
            x1 = verts[2 * e]
            y1 = verts[2 * e + 1]
            if e + 1 < b:
                x2 = verts[2 * (e + 1)]
                y2 = verts[2 * (e + 1) + 1]
            else:
                x2 = verts[2 * a]
                y2 = verts[2 * a + 1]
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
        dist = sqrt(best)
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
        if gap >= max_speed * OBSTACLE_HORIZON_C:
            continue
        if gap >= 0.0:
            c = gap / OBSTACLE_HORIZON_C
        else:
            c = gap / dt
        lines[count].px = c * nx
        lines[count].py = c * ny
        lines[count].dx = -ny
        lines[count].dy = nx
        count += 1
    return count


cdef void agent_line(double x, double y, double vx, double vy, double ox, double oy,
                     double ovx, double ovy, double combined_radius, double inv_th,
                     double dt, Line* line) noexcept nogil:
    cdef double rpx = ox - x, rpy = oy - y
    cdef double rvx = vx - ovx, rvy = vy - ovy
    cdef double dist_sq = rpx * rpx + rpy * rpy
    cdef double crs = combined_radius * combined_radius
    cdef double wx, wy, wls, dp1, wl, uwx, uwy, dirx, diry, s, ux, uy, leg, dp2, inv_ts
    if dist_sq > crs:
        wx = rvx - inv_th * rpx
        wy = rvy - inv_th * rpy
        wls = wx * wx + wy * wy
        dp1 = wx * rpx + wy * rpy
        if dp1 < 0.0 and dp1 * dp1 > crs * wls:
            wl = sqrt(wls)
            uwx = wx / wl
            uwy = wy / wl
            dirx = uwy
            diry = -uwx
            s = combined_radius * inv_th - wl
            ux = s * uwx
            uy = s * uwy
        else:
            leg = sqrt(dist_sq - crs)
            if det(rpx, rpy, wx, wy) > 0.0:
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
        wl = sqrt(wx * wx + wy * wy)
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
    line.px = vx + 0.5 * ux
    line.py = vy + 0.5 * uy
    line.dx = dirx
    line.dy = diry


cdef struct Scratch:
    Line* lines
    Line* proj
    double* cand_d
    int* cand_j


cdef void solve(double x, double y, double vx, double vy, double pref_x, double pref_y,
                int skip, const double* pos, const double* vel, const double* rads,
                const unsigned char* valid, int n,
                double nd, int mn, double ph, double radius, double max_speed,
                double angle, double dt, const double* verts, const long* starts,
                int npoly, Scratch* sc, double* rx, double* ry) noexcept nogil:
    cdef int n_obst = obstacle_lines(x, y, radius, max_speed, dt, verts, starts, npoly,
                                     sc.lines)
    cdef double range_sq = nd * nd
    cdef int ncand = 0, j, m, cap = mn if mn > 0 else 0
    cdef double dx, dy, d2, c, s, tpx, inv_th
    cdef int nlines, fail
    for j in range(n):
        if j == skip or not valid[j]:
            continue
        dx = pos[2 * j] - x
        dy = pos[2 * j + 1] - y
        d2 = dx * dx + dy * dy
        if d2 < range_sq:
            if ncand < cap:
                m = ncand
                ncand += 1
            elif cap > 0 and d2 < sc.cand_d[cap - 1]:
                m = cap - 1
            else:
                continue
            while m > 0 and sc.cand_d[m - 1] > d2:
                sc.cand_d[m] = sc.cand_d[m - 1]
                sc.cand_j[m] = sc.cand_j[m - 1]
                m -= 1
            sc.cand_d[m] = d2
            sc.cand_j[m] = j
    if ncand > 0 or n_obst > 0:
        c = cos(angle)
        s = sin(angle)
        tpx = pref_x * c - pref_y * s
        pref_y = pref_x * s + pref_y * c
        pref_x = tpx
    inv_th = 1.0 / ph
    nlines = n_obst
    for m in range(ncand):
        j = sc.cand_j[m]
        agent_line(x, y, vx, vy, pos[2 * j], pos[2 * j + 1], vel[2 * j], vel[2 * j + 1],
                   radius + rads[j], inv_th, dt, &sc.lines[nlines])
        nlines += 1
    fail = lp2(sc.lines, nlines, max_speed, pref_x, pref_y, False, rx, ry)
    if fail < nlines:
        lp3(sc.lines, nlines, n_obst, fail, max_speed, rx, ry, sc.proj)


cdef int alloc_scratch(Scratch* sc, int n_lines, int n_cand):
    if n_lines < 1:
        n_lines = 1
    if n_cand < 1:
        n_cand = 1
    sc.lines = <Line*>malloc(n_lines * sizeof(Line))
    sc.proj = <Line*>malloc(n_lines * sizeof(Line))
    sc.cand_d = <double*>malloc(n_cand * sizeof(double))
    sc.cand_j = <int*>malloc(n_cand * sizeof(int))
    if not sc.lines or not sc.proj or not sc.cand_d or not sc.cand_j:
        free_scratch(sc)
        raise MemoryError()
    return 0


cdef void free_scratch(Scratch* sc) noexcept:
    free(sc.lines)
    free(sc.proj)
    free(sc.cand_d)
    free(sc.cand_j)
    sc.lines = NULL
    sc.proj = NULL
    sc.cand_d = NULL
    sc.cand_j = NULL


def _poly_arrays(verts, starts):
    v = np.ascontiguousarray(np.asarray(verts, dtype=np.float64).reshape(-1, 2))
    s = np.ascontiguousarray(np.asarray(starts, dtype=np.int64).reshape(-1))
    if s.shape[0] == 0:
        s = np.zeros(1, dtype=np.int64)
    if v.shape[0] == 0:
        v = np.zeros((1, 2), dtype=np.float64)
    return v, s


def agent_velocity(double x, double y, double vx, double vy, double pref_x, double pref_y,
                   others_pos, others_vel, others_rad,
                   double nd, mn, double ph, double radius, double max_speed,
                   double angle, double dt, verts, starts):
    """New velocity for one agent given arbitrary neighbour arrays."""
    cdef double[:, ::1] op = np.ascontiguousarray(
        np.asarray(others_pos, dtype=np.float64).reshape(-1, 2))
    cdef double[:, ::1] ov = np.ascontiguousarray(
        np.asarray(others_vel, dtype=np.float64).reshape(-1, 2))
    cdef double[::1] orad = np.ascontiguousarray(np.asarray(others_rad, dtype=np.float64).reshape(-1))
    cdef int n = op.shape[0]
    cdef unsigned char[::1] valid = np.ones(max(n, 1), dtype=np.uint8)
    v_arr, s_arr = _poly_arrays(verts, starts)
    cdef double[:, ::1] vv = v_arr
    cdef long[::1] ss = s_arr
    cdef int npoly = ss.shape[0] - 1
    cdef int imn = <int>mn
    cdef Scratch sc
    cdef double rx = 0.0, ry = 0.0
    cdef double dummy = 0.0
    cdef double* opp = &dummy
    cdef double* ovp = &dummy
    cdef double* orp = &dummy
    if n > 0:
        opp = &op[0, 0]
        ovp = &ov[0, 0]
        orp = &orad[0]
    alloc_scratch(&sc, npoly + n + 1, imn)
    try:
        solve(x, y, vx, vy, pref_x, pref_y, -1, opp, ovp, orp, &valid[0], n,
              nd, imn, ph, radius, max_speed, angle, dt, &vv[0, 0], &ss[0], npoly,
              &sc, &rx, &ry)
    finally:
        free_scratch(&sc)
    return rx, ry


def compute_velocities(pos, vel, pref, params, angles, verts, starts, double dt):
    """New velocities for every agent from a common pre-step snapshot."""
    cdef double[:, ::1] p = np.ascontiguousarray(np.asarray(pos, dtype=np.float64).reshape(-1, 2))
    cdef int n = p.shape[0]
    out_arr = np.zeros((n, 2))
    if n == 0:
        return out_arr
    cdef double[:, ::1] v = np.ascontiguousarray(np.asarray(vel, dtype=np.float64).reshape(-1, 2))
    cdef double[:, ::1] pr = np.ascontiguousarray(np.asarray(pref, dtype=np.float64).reshape(-1, 2))
    cdef double[:, ::1] prm = np.ascontiguousarray(np.asarray(params, dtype=np.float64).reshape(-1, 5))
    cdef double[::1] ang = np.ascontiguousarray(np.asarray(angles, dtype=np.float64).reshape(-1))
    cdef double[::1] rads = np.ascontiguousarray(prm[:, 3])
    cdef unsigned char[::1] valid = np.ones(n, dtype=np.uint8)
    cdef double[:, ::1] out = out_arr
    v_arr, s_arr = _poly_arrays(verts, starts)
    cdef double[:, ::1] vv = v_arr
    cdef long[::1] ss = s_arr
    cdef int npoly = ss.shape[0] - 1
    cdef int i, max_mn = 1
    for i in range(n):
        if <int>prm[i, 1] > max_mn:
            max_mn = <int>prm[i, 1]
    cdef Scratch sc
    alloc_scratch(&sc, npoly + n + 1, max_mn)
    try:
        with nogil:
            for i in range(n):
                solve(p[i, 0], p[i, 1], v[i, 0], v[i, 1], pr[i, 0], pr[i, 1], i,
                      &p[0, 0], &v[0, 0], &rads[0], &valid[0], n,
                      prm[i, 0], <int>prm[i, 1], prm[i, 2], prm[i, 3], prm[i, 4],
                      ang[i], dt, &vv[0, 0], &ss[0], npoly, &sc, &out[i, 0], &out[i, 1])
    finally:
        free_scratch(&sc)
    return out_arr


cdef inline void pref_toward_c(double x, double y, double gx, double gy, double speed,
                               double dt, double* px, double* py) noexcept nogil:
    cdef double dx = gx - x, dy = gy - y
    cdef double dist = sqrt(dx * dx + dy * dy)
    if dist <= 1e-12:
        px[0] = 0.0
        py[0] = 0.0
    elif dist < speed * dt:
        px[0] = dx / dt
        py[0] = dy / dt
    else:
        px[0] = dx / dist * speed
        py[0] = dy / dist * speed


def pref_toward(double x, double y, double gx, double gy, double speed, double dt):
    cdef double px, py
    pref_toward_c(x, y, gx, gy, speed, dt, &px, &py)
    return px, py


def _other_radii(radii, int n, double r):
    out = np.full(max(n, 1), r)
    if radii is not None:
        given = np.asarray(radii, dtype=np.float64).reshape(-1)
        out[:n] = np.where(given[:n] > 0, given[:n], r)
    return out


def fit_residual(obs_pos, obs_vel, valid, goals, int focal, params, double angle,
                 double dt, int horizon, verts, starts, radii=None):
    """Sum of squared re-simulation errors for one agent and its sample count."""
    cdef double[:, :, ::1] P = np.ascontiguousarray(np.asarray(obs_pos, dtype=np.float64))
    cdef double[:, :, ::1] V = np.ascontiguousarray(np.asarray(obs_vel, dtype=np.float64))
    cdef unsigned char[:, ::1] M = np.ascontiguousarray(np.asarray(valid, dtype=np.uint8))
    cdef double[:, ::1] G = np.ascontiguousarray(np.asarray(goals, dtype=np.float64))
    cdef int T = P.shape[0], N = P.shape[1]
    prm = [float(q) for q in params]
    cdef double nd = prm[0], ph = prm[2], r = prm[3], sp = prm[4]
    cdef int mn = <int>prm[1]
    cdef double[::1] rads = _other_radii(radii, N, r)
    v_arr, s_arr = _poly_arrays(verts, starts)
    cdef double[:, ::1] vv = v_arr
    cdef long[::1] ss = s_arr
    cdef int npoly = ss.shape[0] - 1
    cdef double sse = 0.0
    cdef long count = 0
    cdef int t, s, k
    cdef double x, y, vx, vy, gx, gy, px, py, nvx, nvy, ex, ey
    cdef Scratch sc
    if T == 0 or N == 0:
        return 0.0, 0
    alloc_scratch(&sc, npoly + N + 1, mn)
    try:
        with nogil:
            for t in range(T - 1):
                if not M[t, focal]:
                    continue
                x = P[t, focal, 0]
                y = P[t, focal, 1]
                vx = V[t, focal, 0]
                vy = V[t, focal, 1]
                gx = G[t, 0]
                gy = G[t, 1]
                for s in range(horizon):
                    k = t + s
                    if k + 1 >= T or not M[k + 1, focal]:
                        break
                    pref_toward_c(x, y, gx, gy, sp, dt, &px, &py)
                    solve(x, y, vx, vy, px, py, focal, &P[k, 0, 0], &V[k, 0, 0], &rads[0],
                          &M[k, 0], N, nd, mn, ph, r, sp, angle, dt, &vv[0, 0], &ss[0],
                          npoly, &sc, &nvx, &nvy)
                    x = x + nvx * dt
                    y = y + nvy * dt
                    vx = nvx
                    vy = nvy
                    ex = x - P[k + 1, focal, 0]
                    ey = y - P[k + 1, focal, 1]
                    sse += ex * ex + ey * ey
                    count += 1
    finally:
        free_scratch(&sc)
    return sse, count
