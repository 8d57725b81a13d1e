import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sagquad.sag import (ALIGN_BASE, ALIGN_WRIST, APPROACH_PHASES, COMMITTED, DONE,
                         GRASP_PHASES, GRASP_REACH, PHASES, SEARCH_BACK_LEFT, SEARCH_BACK_RIGHT,
                         SEARCH_PHASES, SEARCH_ROTATE, SEARCH_SWEEP, TRANSITIONS, WALK,
                         ApproachParams, GraspParams, ObjectTooCloseError, Perception, SagController,
                         SagError, SearchParams, approach_base_heading, approach_wrist_target,
                         base_rotate_command, ee_scan_duration, grasp_pitch, grasp_target,
                         min_jerk, search_ee_reference, search_wrist_reference)
from sagquad.spatial import Pose, rotz
from conftest import perception

SP = SearchParams()
C = np.array(SP.center)


# -- grasp pitch --------------------------------------------------------------

def test_grasp_pitch_cases():
    assert abs(grasp_pitch(0.5, 0.5) - np.pi / 4) < 1e-12
    assert grasp_pitch(0.0, 1.0) == 0.0
    assert abs(grasp_pitch(-0.3, 0.6) - np.arctan(-0.5)) < 1e-12
    with pytest.raises(ObjectTooCloseError):
        grasp_pitch(0.1, 0.05)


@given(st.floats(-5, 5), st.floats(0.051, 5))
def test_grasp_pitch_odd(z, x):
    assert grasp_pitch(-z, x) == -grasp_pitch(z, x)


# -- search -------------------------------------------------------------------

def test_search_params_validation():
    with pytest.raises(ValueError):
        SearchParams(radius=0.55)               # inside the singularity margin
    with pytest.raises(ValueError):
        SearchParams(limit_a=-1.0)


def test_search_wrist_start_and_limit():
    x, xd = search_wrist_reference(0.0, SP, "left")
    assert np.allclose(x, C + [SP.radius, 0, 0])
    assert np.isclose(np.linalg.norm(xd), SP.radius * SP.omega)
    assert np.isclose(xd @ (x - C), 0)
    t_end = SP.limit_a / SP.omega
    A = C + SP.radius * np.array([np.cos(SP.limit_a), np.sin(SP.limit_a), 0])
    for t in (t_end, t_end + 5):
        x, xd = search_wrist_reference(t, SP, "left")
        assert np.allclose(x, A) and np.allclose(xd, 0)


@settings(max_examples=200)
@given(st.floats(0, 30), st.sampled_from(["left", "right"]))
def test_search_wrist_on_circle_never_rear_arc(t, side):
    x, _ = search_wrist_reference(t, SP, side)
    d = x - C
    assert abs(np.linalg.norm(d) - SP.radius) < 1e-12
    assert SP.limit_b - 1e-12 <= np.arctan2(d[1], d[0]) <= SP.limit_a + 1e-12
    assert SP.radius < SP.max_reach - 0.05


@settings(max_examples=100)
@given(st.floats(0, 10), st.sampled_from(["left", "right"]))
def test_search_ee_circle(t, side):
    anchor = C + SP.radius * np.array([np.cos(SP.limit_a), np.sin(SP.limit_a), 0])
    x, xd = search_ee_reference(t, anchor, SP, side)
    assert abs(np.linalg.norm(x - anchor) - SP.ee_offset) < 1e-12
    assert x[2] == anchor[2] and xd[2] == 0          # roll and pitch fixed, yaw only


def test_search_ee_duration_and_start():
    anchor = C + [SP.radius, 0, 0]
    x, xd = search_ee_reference(0.0, anchor, SP, "left", start_yaw=0.0)
    assert np.allclose((x - anchor) / SP.ee_offset, [1, 0, 0])        # along the heading
    T = ee_scan_duration(SP)
    assert np.isclose(T, 2 * SP.ee_half_angle / SP.ee_speed)
    _, xd = search_ee_reference(T + 1e-9, anchor, SP, "left", start_yaw=0.0)
    assert np.allclose(xd, 0)


def test_base_rotate():
    assert base_rotate_command(0.0, SP) == (0.4, False)
    assert base_rotate_command(np.pi, SP) == (0.0, True)
    assert np.isclose(np.pi / SP.rotate_rate, 7.853981633974483)


# -- approach -------------------------------------------------------------

def test_approach_wrist_target_cases():
    assert np.allclose(approach_wrist_target([1, 0, 0], SP), C + [SP.radius, 0, 0])
    # circle centred on the trunk origin: a quarter turn lands on the left point
    centred = SearchParams(center=(0.0, 0.0, 0.13))
    assert np.allclose(approach_wrist_target([0, 1, 0], centred), [0, SP.radius, 0.13])
    A = C + SP.radius * np.array([np.cos(SP.limit_a), np.sin(SP.limit_a), 0])
    assert np.allclose(approach_wrist_target([-1, 0.1, 0], SP, "left"), A)
    # with the shoulder ahead of the trunk origin the same ray meets the
    # circle behind A, so the target is clamped
    assert np.allclose(approach_wrist_target([0, 1, 0], SP, "left"), A)
    B = C + SP.radius * np.array([np.cos(SP.limit_b), np.sin(SP.limit_b), 0])
    assert np.allclose(approach_wrist_target([-1, 0.1, 0], SP, "right"), B)
    # inside the allowed arc the target lies on the ray from the trunk origin
    d = np.array([1.0, 0.8, 0.0])
    x = approach_wrist_target(d, SP)
    assert abs(np.linalg.norm(x - C) - SP.radius) < 1e-12
    assert abs(x[0] * d[1] - x[1] * d[0]) < 1e-12
    with pytest.raises(SagError):
        approach_wrist_target([0, 0, 1], SP)


def test_approach_heading_law():
    ap = ApproachParams()
    c = approach_base_heading(0.0, ap, forward=True)
    assert c.yaw_rate == 0 and c.forward_velocity == ap.walk_speed
    assert approach_base_heading(0.5, ap).yaw_rate == 0.3
    assert approach_base_heading(-0.5, ap).yaw_rate == -0.3
    assert approach_base_heading(0.019, ap).yaw_rate == 0.0


def test_grasp_target_geometry():
    base = Pose(rotz(0.3), [1.0, 2.0, 0.42])
    obj = np.array([2.0, 2.5, 0.3])
    g = grasp_target(obj, base, SP.center, 0.3)
    assert np.allclose(g.ee_pose.translation, obj)
    assert np.allclose(g.ee_pose.rotation[:, 2], [np.cos(0.3), np.sin(0.3), 0])
    assert abs(g.ee_pose.rotation[2, 0]) < 1e-12
    rel = base.rotation.T @ (obj - base.translation) - C
    assert np.isclose(g.x_so, rel[0]) and np.isclose(g.z_so, rel[2])


def test_min_jerk_endpoints():
    assert min_jerk(0) == (0, 0) and min_jerk(1)[0] == 1 and min_jerk(1)[1] == 0
    assert min_jerk(2)[0] == 1


# -- phase machine -------------------------------------------------------------

def test_phase_graph_is_closed():
    assert set(TRANSITIONS) == set(PHASES)
    for a, nxt in TRANSITIONS.items():
        assert nxt <= set(PHASES)
    assert TRANSITIONS[DONE] == set()
    # open-loop phases never fall back
    for p in COMMITTED[:-1]:
        assert not TRANSITIONS[p] & set(SEARCH_PHASES)


def test_search_cycle_visits_all_search_phases():
    ctl = SagController(dt=0.02)
    t = 0.0
    seen = []
    for _ in range(int(40 / 0.02)):
        out = ctl.search_tick(perception(t, visible=False))
        seen.append(out.phase)
        assert not out.vision_active
        t += 0.02
    order = [p for i, p in enumerate(seen) if i == 0 or seen[i - 1] != p]
    assert order[:6] == [SEARCH_SWEEP, SEARCH_BACK_LEFT, SEARCH_SWEEP, SEARCH_BACK_RIGHT,
                         SEARCH_ROTATE, SEARCH_SWEEP]


def test_illegal_transition_rejected():
    ctl = SagController()
    with pytest.raises(SagError):
        ctl._go(DONE)


def test_approach_stops_at_distance():
    ctl = SagController(dt=0.02)
    ctl.search_tick(perception(0.0, visible=False))
    t, x = 0.0, 0.0
    stop_x = None
    for _ in range(2000):
        t += 0.02
        x_wr = approach_wrist_target([1, 0, 0], SP)
        out = ctl.approach_tick(perception(t, base=(x, 0, 0.42), x_wr=x_wr))
        if ctl.phase == WALK:
            assert out.vision_active and out.wrist_mode == "visual-joint-impedance"
            x += out.base.forward_velocity * 0.02
            if out.base.forward_velocity == 0.0 and stop_x is None:
                stop_x = x
        if ctl.approach_done():
            break
    assert ctl.phase in GRASP_PHASES
    # the camera stops 0.7 m (within one walking step) from the object
    assert abs(ctl.stop_distance - 0.7) <= ApproachParams().walk_speed * 0.02 + 1e-12
    assert ctl.history[:4] == [SEARCH_SWEEP, ALIGN_WRIST, ALIGN_BASE, WALK]


def test_detection_loss_returns_to_interrupted_search_phase():
    ctl = SagController(dt=0.02)
    for k in range(int((SP.limit_a / SP.omega + 0.5) / 0.02)):
        ctl.search_tick(perception(k * 0.02, visible=False))
    assert ctl.phase == SEARCH_BACK_LEFT
    ctl.approach_tick(perception(10.0))
    assert ctl.phase in APPROACH_PHASES
    ctl.on_detection_lost()
    assert ctl.phase == SEARCH_BACK_LEFT


def test_committed_phases_ignore_detection_loss():
    ctl = SagController()
    ctl.phase = GRASP_REACH
    ctl.on_detection_lost()
    assert ctl.phase == GRASP_REACH


def test_object_at_wrist_height_keeps_height_reference():
    ctl = SagController(dt=0.02)
    ctl.phase = "grasp-position"
    ctl.x_wr_hold = np.array([0.5, 0.0, 0.13])
    out = ctl.grasp_tick(perception(0.0, obj=(3.0, 0.0, 0.42 + 0.13)))
    assert np.isclose(out.x_wr_des[2], 0.13, rtol=0, atol=1e-12)
