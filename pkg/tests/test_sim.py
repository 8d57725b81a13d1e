import numpy as np
import pytest

from sagquad.dynamics import arm_bias, arm_chain, arm_com
from sagquad.model import LEG_NAMES, leg_fk
from sagquad.sim import (ClosedLoop, Disturbance, DisturbanceProfile, GaitSchedule, HoldAndServo,
                         LoopConfig, ObjectState, SimulationDiverged, gait_contacts,
                         home_wrist_target, inject_disturbance, initial_world, step,
                         throw_velocity)
from sagquad.wbc import ContactSet, distribute_forces

G = np.array([0.0, 0.0, -9.81])


def _masses(model):
    m_a = arm_chain(model).mass.sum()
    return m_a, model.base_mass + m_a


def _com(model, w):
    m_a, M = _masses(model)
    r = w.robot
    _, c = arm_com(model, r.q[model.arm])
    return r.base_position + (m_a / M) * (r.base_rotation @ c)


@pytest.fixture
def world(model):
    return initial_world(model, ObjectState([3.0, 0.0, 0.4]))


def test_standing_equilibrium(model, world):
    r = world.robot
    R, q = r.base_rotation, r.q[model.arm]
    m_a, M = _masses(model)
    _, c_a = arm_com(model, q)
    tau = arm_bias(model, q, np.zeros(7), R.T @ G)
    W = np.r_[-M * G, -np.cross(m_a * (R @ c_a), G)]
    fd = distribute_forces(W, ContactSet(world.feet - r.base_position, 0.7))
    assert fd.status == "optimal"
    nxt = step(model, world, tau, fd.forces, 0.001)
    assert np.abs(nxt.robot.base_linear_velocity / 0.001).max() < 1e-6
    assert np.abs(nxt.robot.base_angular_velocity / 0.001).max() < 1e-6
    assert np.abs(nxt.robot.qd[model.arm]).max() < 1e-9


def test_free_fall(model, world):
    # the arm is weightless in free fall, so zero torque keeps it still
    tau = np.zeros(7)
    dt, n = 0.001, 300
    z0 = _com(model, world)[2]
    w = world
    for _ in range(n):
        w = step(model, w, tau, np.zeros((4, 3)), dt)
    t = n * dt
    assert np.isclose(w.robot.base_linear_velocity[2], G[2] * t, atol=1e-9)
    # semi-implicit Euler: z = z0 + g dt^2 n (n + 1) / 2
    assert np.isclose(_com(model, w)[2] - z0, 0.5 * G[2] * t * (t + dt), atol=1e-9)
    assert abs(_com(model, w)[2] - z0 - 0.5 * G[2] * t * t) < abs(G[2]) * t * dt
    assert np.abs(w.robot.base_angular_velocity).max() < 1e-9
    assert np.abs(w.robot.qd[model.arm]).max() < 1e-9


def test_thrown_object_closed_form(model, world):
    v0 = np.array([0.0, 2.0, 3.0])
    p0 = np.array([1.0, 0.0, 0.5])
    world.object = ObjectState(p0, release_time=0.0, release_velocity=v0)
    dt = 0.001
    tau = np.zeros(7)
    w = world
    zs, ts = [p0[2]], [0.0]
    while w.time < 2.0:
        w = step(model, w, tau, np.zeros((4, 3)), dt)
        zs.append(w.object.position[2])
        ts.append(w.time)
        if w.object.position[2] < p0[2]:
            break
    apex = max(zs) - p0[2]
    assert abs(apex - v0[2] ** 2 / (2 * 9.81)) < 0.5 * 9.81 * dt * dt
    # landing time by linear interpolation at the release height
    z1, z2 = zs[-2] - p0[2], zs[-1] - p0[2]
    t_land = ts[-2] + dt * z1 / (z1 - z2)
    assert abs(t_land - 2 * v0[2] / 9.81) < 1e-3
    assert np.isclose(w.object.position[1] - p0[1], v0[1] * w.time, atol=v0[1] * dt)


def test_throw_velocity_hits_target():
    start, stop, T = np.array([2.0, 1.0, 0.8]), np.array([2.0, -1.0, 0.8]), 0.8
    v = throw_velocity(start, stop, T)
    assert np.allclose(start + v * T + 0.5 * G * T * T, stop, atol=1e-12)


def test_held_object_waits_for_release(model, world):
    world.object = ObjectState([1.0, 0, 0.5], release_time=0.05, release_velocity=[0, 1.0, 1.0])
    w = world
    for _ in range(50):
        w = step(model, w, np.zeros(7), np.zeros((4, 3)), 0.001, gravity=np.zeros(3))
    assert np.allclose(w.object.position, [1.0, 0, 0.5])
    w = step(model, w, np.zeros(7), np.zeros((4, 3)), 0.001, gravity=np.zeros(3))
    assert w.object.position[1] > 0.0


def test_gait_all_stance_at_unit_duty():
    g = GaitSchedule(duty=1.0)
    for t in np.linspace(0, 3, 50):
        assert g.stance_flags(t).all()


def test_gait_timing_and_overlap():
    g = GaitSchedule(frequency=1.3, duty=0.6)
    assert np.isclose(g.stance_time, 0.6 / 1.3)
    assert np.isclose(g.stance_time, 0.4615, atol=1e-4)
    ts = np.arange(0, 1 / 1.3, 1e-4)
    flags = np.array([g.stance_flags(t) for t in ts])
    n = flags.sum(axis=1)
    assert n.min() >= 2
    # two double-support overlaps of (2 duty - 1) / 2 each per cycle
    assert np.isclose((n == 4).mean(), 2 * 0.6 - 1, atol=2e-3)
    # diagonal pairs move together
    idx = {l: i for i, l in enumerate(LEG_NAMES)}
    assert np.array_equal(flags[:, idx["LF"]], flags[:, idx["RH"]])
    assert np.array_equal(flags[:, idx["RF"]], flags[:, idx["LH"]])


def test_gait_contacts_subset():
    g = GaitSchedule()
    feet = np.arange(12.0).reshape(4, 3)
    cs = gait_contacts(g, 0.0, feet)
    assert len(cs.names) == 4
    cs = gait_contacts(g, 0.8 / 1.3, feet)      # first pair in swing
    assert set(cs.names) == {"RF", "LH"}


@pytest.mark.parametrize("duty", [0.0, -0.1, 1.2])
def test_gait_duty_validation(duty):
    with pytest.raises(ValueError):
        GaitSchedule(duty=duty)


def test_inject_disturbance_window():
    prof = DisturbanceProfile([Disturbance(2.0, 1.0, [0, 30, 0])])
    assert inject_disturbance(prof, 1.9) == []
    assert inject_disturbance(prof, 3.1) == []
    (frame, f), = inject_disturbance(prof, 2.5)
    assert frame == "forearm"
    assert np.allclose(f, [0, 30, 0])
    # cosine ramps at both ends
    (_, f), = inject_disturbance(prof, 2.025)
    assert 0 < f[1] < 30


def test_disturbances_on_two_frames_superpose():
    prof = DisturbanceProfile([Disturbance(0.0, 1.0, [0, 10, 0]),
                               Disturbance(0.5, 1.0, [5, 0, 0], frame="base")])
    out = dict(inject_disturbance(prof, 0.7))
    assert set(out) == {"forearm", "B"}


def test_overlapping_disturbances_rejected():
    with pytest.raises(ValueError):
        DisturbanceProfile([Disturbance(0.0, 1.0, [0, 10, 0]), Disturbance(0.5, 1.0, [0, 5, 0])])
    with pytest.raises(ValueError):
        Disturbance(0.0, 1.0, [0, 1, 0], frame="elbow")


@pytest.mark.parametrize("dt", [0.0, -0.001, 0.02])
def test_step_rejects_bad_dt(model, world, dt):
    with pytest.raises(ValueError):
        step(model, world, np.zeros(7), np.zeros((4, 3)), dt)


def test_nan_raises_diverged(model, world):
    with pytest.raises(SimulationDiverged) as info:
        step(model, world, np.full(7, np.nan), np.zeros((4, 3)), 0.001)
    assert "tau_arm" in info.value.dump


def test_disturbance_moves_arm(model, world):
    r = world.robot
    tau = arm_bias(model, r.q[model.arm], np.zeros(7), r.base_rotation.T @ G)
    w = world
    for _ in range(20):
        w = step(model, w, tau, np.zeros((4, 3)), 0.001, [("forearm", np.array([0, 30.0, 0]))],
                 gravity=G)
    assert np.abs(w.robot.qd[model.arm]).max() > 1e-3


def test_momentum_conserved_without_gravity(model, world):
    rng = np.random.default_rng(0)
    w = world
    w.robot.qd[model.arm] = rng.normal(size=7)
    w.robot.base_linear_velocity = np.array([0.1, 0.05, 0.0])
    w.robot.base_angular_velocity = np.array([0.1, -0.2, 0.3])
    dt, n = 0.001, 5000
    s0 = _com(model, w)
    s1 = None
    for k in range(n):
        w = step(model, w, np.zeros(7), np.zeros((4, 3)), dt, gravity=np.zeros(3))
        if k == 0:
            s1 = _com(model, w)
    v0 = (s1 - s0) / dt
    v_end = (_com(model, w) - s0) / (n * dt)
    assert np.linalg.norm(v_end - v0) <= 1e-6 * np.linalg.norm(v0)


def _trot_loop(model):
    world = initial_world(model, ObjectState([3.0, 0.0, 0.4]))
    mission = HoldAndServo(home_wrist_target(model), stand=False, vision=False)
    return ClosedLoop(model, world, mission, LoopConfig(), seed=0)


def test_stance_feet_pinned(model):
    loop = _trot_loop(model)
    worst = 0.0
    for _ in range(150):
        before = loop.world.feet.copy()
        st0 = loop.planner.stance.copy()
        loop.control_tick()
        keep = st0 & loop.planner.stance
        if keep.any():
            worst = max(worst, np.abs(loop.world.feet[keep] - before[keep]).max())
        # leg joints reproduce the foot positions
        r = loop.world.robot
        for i, leg in enumerate(LEG_NAMES):
            if loop.planner.stance[i]:
                p = r.base_position + r.base_rotation @ leg_fk(model, leg, r.q[model.legs[leg]])
                assert np.linalg.norm(p - loop.world.feet[i]) < 1e-6
    assert worst < 1e-6
    assert not loop.planner.stance.all() or loop.qp_infeasible == 0


def test_trot_keeps_height(model):
    loop = _trot_loop(model).run(2.0)
    z = np.array([row[4] for row in loop.rows])
    assert np.abs(z - model.stance_height).max() < 0.03
    assert loop.qp_infeasible == 0


def test_closed_loop_deterministic(model):
    a = _trot_loop(model).run(0.4)
    b = _trot_loop(model).run(0.4)
    assert len(a.rows) == len(b.rows)
    for ra, rb in zip(a.rows, b.rows):
        assert ra[1] == rb[1]
        num_a = np.array([v for v in ra if not isinstance(v, str)], float)
        num_b = np.array([v for v in rb if not isinstance(v, str)], float)
        assert np.array_equal(num_a, num_b, equal_nan=True)
