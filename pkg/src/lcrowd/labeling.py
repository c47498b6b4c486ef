"""Ground-truth labels in screen space.

Head points, occlusion-aware bounding boxes, pedestrian counts and
tolerance-zone flow counts derived from world-space agent positions.
"""
from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from lcrowd.errors import ConfigError, DuplicateAgentId

ANNOTATION_SCHEMA_VERSION = 1
HEAD_HEIGHT = 1.7
BODY_HEIGHT = 1.8
BEHIND_EPS = 1e-6
DEFAULT_TOLERANCE = 0.5
_DECIMALS = 4


class Projection(str, enum.Enum):
    PERSPECTIVE = "perspective"
    ORTHOGRAPHIC = "orthographic"


@dataclass(frozen=True)
class CameraModel:
    position: tuple[float, float, float]
    yaw: float
    pitch: float
    focal_px: float
    image_width: int
    image_height: int
    projection: Projection = Projection.PERSPECTIVE
    ortho_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "projection", Projection(self.projection))
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        if self.focal_px <= 0:
            raise ConfigError("focal_px must be positive")
        if self.image_width < 16 or self.image_height < 16:
            raise ConfigError("image dimensions must be at least 16 px")
        if not (-math.pi / 2 < self.pitch < math.pi / 2):
            raise ConfigError("pitch must lie strictly between -pi/2 and pi/2")
        if self.projection is Projection.ORTHOGRAPHIC and self.ortho_scale <= 0:
            raise ConfigError("ortho_scale must be positive")

    def basis(self):
        """Unit right, up and forward vectors in world coordinates (z up)."""
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        forward = np.array([cp * cy, cp * sy, sp])
        right = np.array([sy, -cy, 0.0])
        up = np.cross(right, forward)
        return right, up, forward

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "yaw": self.yaw,
            "pitch": self.pitch,
            "focal_px": self.focal_px,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "projection": self.projection.value,
            "ortho_scale": self.ortho_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        try:
            return cls(
                tuple(d["position"]), float(d["yaw"]), float(d["pitch"]),
                float(d["focal_px"]), int(d["image_width"]), int(d["image_height"]),
                Projection(d.get("projection", "perspective")),
                float(d.get("ortho_scale", 1.0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"malformed camera: {exc}") from exc


BEHIND = None


def project_points(P, cam: CameraModel):
    """Vectorized projection of (n, 3) world points.

    Returns ``(u, v, depth)`` arrays; points with depth <= 1e-6 get NaN pixels.
    """
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    right, up, forward = cam.basis()
    rel = P - np.asarray(cam.position)
    x = rel @ right
    y = rel @ up
    d = rel @ forward
    cx = cam.image_width / 2.0
    cy = cam.image_height / 2.0
    ok = d > BEHIND_EPS
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if cam.projection is Projection.PERSPECTIVE:
            u = cx + cam.focal_px * (x / d)
            v = cy - cam.focal_px * (y / d)
        else:
            u = cx + cam.ortho_scale * x
            v = cy - cam.ortho_scale * y
    u = np.where(ok, u, np.nan)
    v = np.where(ok, v, np.nan)
    return u, v, d


def project_point(p, cam: CameraModel):
    """``(u, v, depth)`` for one world point, or ``None`` when behind the camera."""
    u, v, d = project_points(np.asarray(p, dtype=float).reshape(1, 3), cam)
    if not d[0] > BEHIND_EPS:
        return BEHIND
    return float(u[0]), float(v[0]), float(d[0])


@dataclass
class HeadPoint:
    agent_id: int
    u: float
    v: float
    visible: bool


@dataclass
class BoundingBox:
    agent_id: int
    u_min: float
    v_min: float
    u_max: float
    v_max: float
    visible: bool


class ZoneState(str, enum.Enum):
    OUTSIDE = "outside"
    FROM_NEG = "in_zone_from_neg"
    FROM_POS = "in_zone_from_pos"


@dataclass
class FlowLine:
    """Counting line with a tolerance zone of ``tolerance_halfwidth`` on each side.

    The positive side is to the right of the direction ``start -> end``.
    ``in_count`` counts complete traversals from the negative to the positive
    side, ``out_count`` the reverse.
    """

    start: tuple[float, float]
    end: tuple[float, float]
    tolerance_halfwidth: float = DEFAULT_TOLERANCE
    line_id: str = "line0"
    in_count: int = 0
    out_count: int = 0
    states: dict = field(default_factory=dict)
    last_positions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tolerance_halfwidth <= 0:
            raise ConfigError("tolerance_halfwidth must be positive")
        self.start = (float(self.start[0]), float(self.start[1]))
        self.end = (float(self.end[0]), float(self.end[1]))
        if self.start == self.end:
            raise ConfigError("flow line endpoints coincide")

    def local(self, p):
        """(along, signed normal) coordinates of a world point."""
        sx, sy = self.start
        dx, dy = self.end[0] - sx, self.end[1] - sy
        L = math.hypot(dx, dy)
        ux, uy = dx / L, dy / L
        rx, ry = p[0] - sx, p[1] - sy
        return rx * ux + ry * uy, rx * uy - ry * ux

    @property
    def length(self) -> float:
        return math.dist(self.start, self.end)

    def fresh(self) -> "FlowLine":
        return FlowLine(self.start, self.end, self.tolerance_halfwidth, self.line_id)

    def spec_dict(self) -> dict:
        return {"line_id": self.line_id, "start": list(self.start), "end": list(self.end),
                "tolerance_halfwidth": self.tolerance_halfwidth}

    @classmethod
    def from_dict(cls, d: dict) -> "FlowLine":
        return cls(tuple(d["start"]), tuple(d["end"]),
                   float(d.get("tolerance_halfwidth", DEFAULT_TOLERANCE)),
                   str(d.get("line_id", "line0")))


def _in_zone(a, s, L, hw):
    return 0.0 <= a <= L and -hw <= s <= hw


# zone boundaries: along-line caps and the two long sides
_CAP0, _CAP1, _NEG, _POS = range(4)


def _zone_events(a0, s0, a1, s1, L, hw):
    """Clip the move against the zone rectangle (Liang-Barsky).

    Returns ``(t_in, edge_in, t_out, edge_out)`` where the edges name the
    boundary crossed (None when the endpoint itself is inside), or None when
    the move misses the zone.
    """
    t0, t1 = 0.0, 1.0
    e0 = e1 = None
    da, ds = a1 - a0, s1 - s0
    for edge, p, q in ((_CAP0, -da, a0), (_CAP1, da, L - a0),
                       (_NEG, -ds, s0 + hw), (_POS, ds, hw - s0)):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            if r > t0:
                t0, e0 = r, edge
        else:
            if r < t0:
                return None
            if r < t1:
                t1, e1 = r, edge
    return t0, e0, t1, e1


def _side(s):
    return ZoneState.FROM_NEG if s < 0.0 else ZoneState.FROM_POS


def _advance(line: FlowLine, state: ZoneState, p0, p1) -> ZoneState:
    L = line.length
    hw = line.tolerance_halfwidth
    a1, s1 = line.local(p1)
    inside1 = _in_zone(a1, s1, L, hw)
    if p0 is None:
        return _side(s1) if inside1 else ZoneState.OUTSIDE
    a0, s0 = line.local(p0)
    ev = _zone_events(a0, s0, a1, s1, L, hw)
    if ev is None:
        return ZoneState.OUTSIDE
    t_in, e_in, t_out, e_out = ev
    if state is ZoneState.OUTSIDE:
        if e_in == _NEG:
            state = ZoneState.FROM_NEG
        elif e_in == _POS:
            state = ZoneState.FROM_POS
        else:
            state = _side(s0 + t_in * (s1 - s0))
    if inside1:
        return state
    if e_out == _POS and state is ZoneState.FROM_NEG:
        line.in_count += 1
    elif e_out == _NEG and state is ZoneState.FROM_POS:
        line.out_count += 1
    return ZoneState.OUTSIDE


def update_flow(line: FlowLine, positions: dict) -> FlowLine:
    """Advance the per-agent zone state machine with new positions.

    ``positions`` maps agent id to its (x, y) at the current step; the line
    remembers each agent's previous position. Entering the zone records the
    side of entry; leaving on the opposite side counts a crossing, leaving on
    the same side does not.
    """
    for aid in sorted(positions):
        p1 = (float(positions[aid][0]), float(positions[aid][1]))
        p0 = line.last_positions.get(aid)
        state = line.states.get(aid, ZoneState.OUTSIDE)
        line.states[aid] = _advance(line, state, p0, p1)
        line.last_positions[aid] = p1
    return line


@dataclass
class FrameAnnotations:
    frame: int
    head_points: list
    boxes: list
    pedestrian_count: int
    flows: list  # (line id, in_count, out_count)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "head_points": [
                {"agent_id": h.agent_id, "u": _r(h.u), "v": _r(h.v), "visible": h.visible}
                for h in self.head_points
            ],
            "boxes": [
                {"agent_id": b.agent_id, "u_min": _r(b.u_min), "v_min": _r(b.v_min),
                 "u_max": _r(b.u_max), "v_max": _r(b.v_max), "visible": b.visible}
                for b in self.boxes
            ],
            "pedestrian_count": self.pedestrian_count,
            "flows": [{"line_id": lid, "in_count": i, "out_count": o}
                      for lid, i, o in self.flows],
        }


def _r(x: float):
    if not math.isfinite(x):
        return None
    return round(float(x), _DECIMALS)


_CORNER_SIGNS = np.array(
    [(sx, sy, z) for sx in (-1, 1) for sy in (-1, 1) for z in (0.0, BODY_HEIGHT)]
)


def annotate_frame(frame: int, agents, cam: CameraModel, flow_lines=()) -> FrameAnnotations:
    """Labels for one frame.

    ``agents`` is a sequence of ``(agent_id, x, y, radius)`` tuples (or
    objects with ``id``, ``position`` and ``params.radius``). Flow lines are
    advanced in place.
    """
    rows = [_agent_tuple(a) for a in agents]
    ids = [r[0] for r in rows]
    if len(set(ids)) != len(ids):
        raise DuplicateAgentId("agent ids must be unique within a frame")
    n = len(rows)
    W, H = cam.image_width, cam.image_height
    heads: list[HeadPoint] = []
    boxes: list[BoundingBox] = []
    if n:
        arr = np.array([r[1:] for r in rows], dtype=float)
        xy, rad = arr[:, :2], arr[:, 2]
        head3 = np.column_stack([xy, np.full(n, HEAD_HEIGHT)])
        hu, hv, hd = project_points(head3, cam)
        corners = np.empty((n, 8, 3))
        corners[:, :, 0] = xy[:, None, 0] + _CORNER_SIGNS[None, :, 0] * rad[:, None]
        corners[:, :, 1] = xy[:, None, 1] + _CORNER_SIGNS[None, :, 1] * rad[:, None]
        corners[:, :, 2] = _CORNER_SIGNS[None, :, 2]
        cu, cv, cd = project_points(corners.reshape(-1, 3), cam)
        cu = cu.reshape(n, 8)
        cv = cv.reshape(n, 8)
        cd = cd.reshape(n, 8)
        front = np.all(cd > BEHIND_EPS, axis=1)
        with np.errstate(invalid="ignore"):
            umin = np.clip(np.nanmin(np.where(front[:, None], cu, 0.0), axis=1), 0, W)
            umax = np.clip(np.nanmax(np.where(front[:, None], cu, 0.0), axis=1), 0, W)
            vmin = np.clip(np.nanmin(np.where(front[:, None], cv, 0.0), axis=1), 0, H)
            vmax = np.clip(np.nanmax(np.where(front[:, None], cv, 0.0), axis=1), 0, H)
        box_vis = front & (umax > umin) & (vmax > vmin)
        umin = np.where(box_vis, umin, 0.0)
        umax = np.where(box_vis, umax, 0.0)
        vmin = np.where(box_vis, vmin, 0.0)
        vmax = np.where(box_vis, vmax, 0.0)
        head_in = (hd > BEHIND_EPS) & (hu >= 0) & (hu < W) & (hv >= 0) & (hv < H)
        head_in = np.where(np.isnan(hu), False, head_in)
        # occluded when a strictly nearer agent's clipped box covers the head pixel
        cover = (
            box_vis[None, :]
            & (hd[None, :] < hd[:, None])
            & (umin[None, :] <= hu[:, None]) & (hu[:, None] <= umax[None, :])
            & (vmin[None, :] <= hv[:, None]) & (hv[:, None] <= vmax[None, :])
        )
        np.fill_diagonal(cover, False)
        head_vis = head_in & ~cover.any(axis=1)
        for i, aid in enumerate(ids):
            heads.append(HeadPoint(aid, float(hu[i]), float(hv[i]), bool(head_vis[i])))
            boxes.append(BoundingBox(aid, float(umin[i]), float(vmin[i]), float(umax[i]),
                                     float(vmax[i]), bool(box_vis[i])))
    positions = {r[0]: (r[1], r[2]) for r in rows}
    flows = []
    for line in flow_lines:
        update_flow(line, positions)
        flows.append((line.line_id, line.in_count, line.out_count))
    count = sum(1 for h in heads if h.visible)
    return FrameAnnotations(frame, heads, boxes, count, flows)


def _agent_tuple(a):
    if isinstance(a, tuple):
        return (int(a[0]), float(a[1]), float(a[2]), float(a[3]))
    return (int(a.id), float(a.position[0]), float(a.position[1]), float(a.params.radius))


def annotations_document(frames, camera: CameraModel, flow_lines=()) -> dict:
    return {
        "schema_version": ANNOTATION_SCHEMA_VERSION,
        "camera": camera.to_dict(),
        "flow_lines": [fl.spec_dict() for fl in flow_lines],
        "frames": [f.to_dict() for f in frames],
    }


def dumps_annotations(doc: dict) -> str:
    return json.dumps(doc, separators=(",", ":"), sort_keys=False) + "\n"


def boxes_csv(frames) -> str:
    buf = io.StringIO()
    buf.write("frame,agent_id,u_min,v_min,u_max,v_max\n")
    for f in frames:
        for b in f.boxes:
            if b.visible:
                buf.write(f"{f.frame},{b.agent_id},{b.u_min:.4f},{b.v_min:.4f},"
                          f"{b.u_max:.4f},{b.v_max:.4f}\n")
    return buf.getvalue()


def annotate_rows(rows, radii: dict, cam: CameraModel, flow_specs=()):
    """Annotate every frame of exported trajectory rows.

    ``radii`` maps agent id to radius. Returns the list of FrameAnnotations and
    the flow lines in their final state.
    """
    lines = [fl.fresh() for fl in flow_specs]
    by_frame: dict[int, list] = {}
    for f, aid, x, y, *_ in rows:
        by_frame.setdefault(int(f), []).append((int(aid), x, y, radii[int(aid)]))
    frames = [annotate_frame(f, sorted(by_frame[f]), cam, lines) for f in sorted(by_frame)]
    return frames, lines
