import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcrowd.errors import ConfigError, DuplicateAgentId
from lcrowd.labeling import (
    HEAD_HEIGHT,
    CameraModel,
    FlowLine,
    Projection,
    annotate_frame,
    annotate_rows,
    project_point,
    project_points,
    update_flow,
)


def cam_basic(**kw):
    args = dict(position=(0.0, 0.0, 0.0), yaw=0.0, pitch=0.0, focal_px=100.0,
                image_width=200, image_height=200)
    args.update(kw)
    return CameraModel(**args)


def homogeneous_project(p, cam):
    """Independent pinhole model: 4x4 extrinsic then 3x4 intrinsic."""
    cy_, sy_ = math.cos(-cam.yaw), math.sin(-cam.yaw)
    Rz = np.array([[cy_, -sy_, 0], [sy_, cy_, 0], [0, 0, 1]])
    cp, sp = math.cos(cam.pitch), math.sin(cam.pitch)
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    R = Ry @ Rz  # world -> (forward, left, up)
    E = np.eye(4)
    E[:3, :3] = R
    E[:3, 3] = -R @ np.asarray(cam.position)
    cx, cy, f = cam.image_width / 2, cam.image_height / 2, cam.focal_px
    K = np.array([[cx, -f, 0, 0], [cy, 0, -f, 0], [1, 0, 0, 0]], dtype=float)
    h = K @ E @ np.append(np.asarray(p, float), 1.0)
    if h[2] <= 1e-6:
        return None
    return h[0] / h[2], h[1] / h[2], h[2]


def test_projection_hand_example():
    u, v, d = project_point((10, 0, 1), cam_basic())
    assert (u, v, d) == pytest.approx((100.0, 90.0, 10.0))


def test_optical_axis_hits_principal_point():
    cam = cam_basic(position=(1, 2, 3), yaw=0.7, pitch=-0.3)
    _, _, fwd = cam.basis()
    for dist in (0.5, 3.0, 250.0):
        u, v, _ = project_point(np.array(cam.position) + dist * fwd, cam)
        assert u == pytest.approx(100.0, abs=1e-9)
        assert v == pytest.approx(100.0, abs=1e-9)


def test_behind_camera():
    assert project_point((-1, 0, 0), cam_basic()) is None
    assert project_point((0, 5, 0), cam_basic()) is None  # zero depth
    u, v, d = project_points([(-1, 0, 0), (5, 0, 0)], cam_basic())
    assert np.isnan(u[0]) and u[1] == 100.0


def test_projection_matches_homogeneous_model():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10_000):
        cam = CameraModel(tuple(rng.uniform(-10, 10, 3)), rng.uniform(-math.pi, math.pi),
                          rng.uniform(-1.5, 1.5), rng.uniform(50, 1000), 320, 240)
        p = rng.uniform(-20, 20, 3)
        a = project_point(p, cam)
        b = homogeneous_project(p, cam)
        assert (a is None) == (b is None)
        if a is not None and a[2] > 1e-3:
            worst = max(worst, abs(a[0] - b[0]), abs(a[1] - b[1]))
    assert worst < 1e-6


def test_orthographic_limit():
    rng = np.random.default_rng(1)
    d0, scale = 1e4, 2.0
    base = dict(position=(-d0, 0.0, 0.0), yaw=0.0, pitch=0.0, image_width=320, image_height=240)
    persp = CameraModel(focal_px=scale * d0, **base)
    ortho = CameraModel(focal_px=1.0, projection=Projection.ORTHOGRAPHIC, ortho_scale=scale, **base)
    pts = np.column_stack([rng.uniform(-1, 1, 500), rng.uniform(-70, 70, 500),
                           rng.uniform(-50, 50, 500)])
    up, vp, _ = project_points(pts, persp)
    uo, vo, _ = project_points(pts, ortho)
    assert np.max(np.abs(up - uo)) < 0.1 and np.max(np.abs(vp - vo)) < 0.1


def test_camera_validation():
    with pytest.raises(ConfigError):
        cam_basic(focal_px=0)
    with pytest.raises(ConfigError):
        cam_basic(pitch=math.pi / 2)
    with pytest.raises(ConfigError):
        cam_basic(image_width=8)
    cam = cam_basic(projection="orthographic", ortho_scale=3.0)
    assert CameraModel.from_dict(cam.to_dict()) == cam
    with pytest.raises(ConfigError):
        CameraModel.from_dict({"yaw": 0})


def eye_level_cam():
    return cam_basic(position=(0.0, 0.0, HEAD_HEIGHT), image_width=320, image_height=240)


def test_single_agent_centered():
    fa = annotate_frame(0, [(7, 5.0, 0.0, 0.3)], eye_level_cam())
    h = fa.head_points[0]
    assert (h.u, h.v, h.visible) == (160.0, 120.0, True)
    assert fa.pedestrian_count == 1


def test_collinear_agents_nearer_occludes():
    fa = annotate_frame(0, [(1, 10.0, 0.0, 0.3), (2, 5.0, 0.0, 0.3)], eye_level_cam())
    vis = {h.agent_id: h.visible for h in fa.head_points}
    assert vis == {1: False, 2: True}
    assert fa.pedestrian_count == 1


def test_offscreen_agent_not_counted():
    fa = annotate_frame(0, [(1, 5.0, 40.0, 0.3), (2, -5.0, 0.0, 0.3)], eye_level_cam())
    assert fa.pedestrian_count == 0
    assert not any(h.visible for h in fa.head_points)
    assert not fa.boxes[1].visible  # behind the camera


def test_duplicate_ids_rejected():
    with pytest.raises(DuplicateAgentId):
        annotate_frame(0, [(1, 5.0, 0.0, 0.3), (1, 6.0, 1.0, 0.3)], eye_level_cam())


agents_strategy = st.lists(
    st.tuples(st.floats(-30, 30), st.floats(-30, 30), st.floats(0.1, 1.65)),
    min_size=0, max_size=15)


@settings(max_examples=100, deadline=None)
@given(agents_strategy, st.floats(-math.pi, math.pi), st.floats(-1.2, 0.0))
def test_containment_and_count_consistency(raw, yaw, pitch):
    cam = CameraModel((0.0, 0.0, 8.0), yaw, pitch, 300.0, 320, 240)
    agents = [(i, x, y, r) for i, (x, y, r) in enumerate(raw)]
    fa = annotate_frame(3, agents, cam)
    visible = [h for h in fa.head_points if h.visible]
    assert fa.pedestrian_count == len(visible)
    boxes = {b.agent_id: b for b in fa.boxes}
    for h in visible:
        b = boxes[h.agent_id]
        assert b.visible
        assert b.u_min <= h.u <= b.u_max and b.v_min <= h.v <= b.v_max
        assert 0 <= h.u < 320 and 0 <= h.v < 240


def run_path(line, path, aid=0):
    for p in path:
        update_flow(line, {aid: p})
    return line.in_count, line.out_count


def vertical_line():
    return FlowLine((0.0, -5.0), (0.0, 5.0), 0.5)


def test_clean_crossing():
    assert run_path(vertical_line(), [(-2, 0), (2, 0)]) == (1, 0)


def test_same_side_retreat():
    assert run_path(vertical_line(), [(-2, 0), (-0.2, 0), (-2, 0)]) == (0, 0)


def test_opposite_crossings():
    line = vertical_line()
    update_flow(line, {1: (-2, 0), 2: (2, 1)})
    update_flow(line, {1: (2, 0), 2: (-2, 1)})
    assert (line.in_count, line.out_count) == (1, 1)


def test_motion_inside_zone_never_counts():
    line = vertical_line()
    run_path(line, [(-0.4, 0), (0.4, 0), (-0.4, 1), (0.3, -2)])
    assert (line.in_count, line.out_count) == (0, 0)


def test_bad_tolerance():
    with pytest.raises(ConfigError):
        FlowLine((0, 0), (1, 0), 0.0)
    with pytest.raises(ConfigError):
        FlowLine((0, 0), (0, 0), 0.5)


def oracle_counts(path, hw, substeps=400):
    """Hysteresis count over densely sampled signed distances (x for the test line)."""
    last = None
    cin = cout = 0
    for a, b in zip(path, path[1:]):
        for t in np.linspace(0, 1, substeps + 1)[1:]:
            s = a[0] + t * (b[0] - a[0])
            if s > hw:
                cin += last == "neg"
                last = "pos"
            elif s < -hw:
                cout += last == "pos"
                last = "neg"
    return cin, cout


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-4, 4)), min_size=2, max_size=12),
       st.booleans())
def test_flow_matches_crossing_oracle(path, start_neg):
    hw = 0.5
    first = (-1.5 if start_neg else 1.5, 0.0)
    path = [first] + [p for p in path if abs(abs(p[0]) - hw) > 1e-6]
    line = vertical_line()
    got = run_path(line, path)
    cin, cout = oracle_counts(path, hw)
    assert got == (cin, cout), path


def test_annotate_rows_groups_frames():
    rows = [(0, 1, 5.0, 0.0, 1.0, 0.0), (0, 2, 6.0, 1.0, 0.0, 0.0), (1, 1, 5.1, 0.0, 1.0, 0.0)]
    frames, lines = annotate_rows(rows, {1: 0.3, 2: 0.3}, eye_level_cam(), [vertical_line()])
    assert [f.frame for f in frames] == [0, 1]
    assert len(frames[0].head_points) == 2 and len(frames[1].head_points) == 1
    assert lines[0].line_id == "line0"
