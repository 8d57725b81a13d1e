"""Deterministic fixed-step plant and the closed control loop.

Plant model
-----------
* The trunk is one rigid body.  Translation is integrated for the centre of
  mass of trunk plus arm, so internal arm forces never create momentum; the
  trunk position is recovered from the arm CoM offset.  Rotation is the
  trunk alone under foot forces, disturbances and the arm reaction moment.
* The arm is a fixed-base serial chain in the trunk frame (gravity rotated
  into it), with joint viscous damping, integrated with the implicit
  midpoint rule (two fixed-point sweeps) so that it conserves energy when
  unforced.
* Legs are massless.  Stance feet are pinned in the world and carry the
  commanded ground forces; swing feet follow Hermite arcs.  Leg angles come
  from inverse kinematics.
* Trunk and feet: semi-implicit Euler at a fixed plant step (default 1 ms).

Rates: control 4 ms, behavior tree 20 ms, vision 40 ms.
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as _k
from .arm_control import (CARTESIAN, VISUAL, ArmGains, ArmReference, WristMode,
                          WristSetpointIntegrator, arm_torques, horizontal_rotation)
from .btree import FAILURE, RUNNING, SUCCESS, Blackboard, build_sag_tree, tick
from .dynamics import (GRAVITY, arm_chain, arm_com, arm_coupling_wrench, arm_frame_pose,
                       arm_midpoint_step, arm_point_jacobian)
from .model import LEG_NAMES, leg_ik, leg_jacobian
from .sag import (COMMITTED, DONE, BaseCommand, Perception, SagController, SagOutput,
                  UnreachableGraspError, radial_ee)
from .spatial import Pose, RobotState, exp_so3, heading, matrix_to_rpy, roty, rotz
from .vision import CameraModel, Detection, carrier_feature_rate, detect, servo_step
from .wbc import BaseReference, ContactSet, TrunkGains, desired_base_wrench, distribute_forces


class SimulationDiverged(RuntimeError):
    def __init__(self, msg, dump=None):
        super().__init__(msg)
        self.dump = dump or {}


# ---------------------------------------------------------------------------
# world

@dataclass
class ObjectState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.035
    release_time: float | None = None    # thrown object: held until release
    release_velocity: np.ndarray | None = None
    catch_time: float | None = None
    catch_point: np.ndarray | None = None
    attached: bool = False

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("object radius must be positive")
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)

    def copy(self):
        return replace(self, position=self.position.copy(), velocity=self.velocity.copy())


@dataclass
class WorldState:
    robot: RobotState
    object: ObjectState
    time: float = 0.0
    gait_phase: float = 0.0
    feet: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))   # world
    qdd_arm: np.ndarray = field(default_factory=lambda: np.zeros(7))

    def copy(self):
        return WorldState(self.robot.copy(), self.object.copy(), self.time, self.gait_phase,
                          self.feet.copy(), self.qdd_arm.copy())


@dataclass
class GaitSchedule:
    frequency: float = 1.3
    duty: float = 0.6
    pairs: tuple = (("LF", "RH"), ("RF", "LH"))
    swing_height: float = 0.06

    def __post_init__(self):
        if not 0.0 < self.duty <= 1.0:
            raise ValueError("duty factor must lie in (0, 1]")
        if self.frequency <= 0:
            raise ValueError("step frequency must be positive")

    def phase(self, t):
        return (t * self.frequency) % 1.0

    def stance_flags(self, t):
        """Scheduled stance flag per leg in LEG_NAMES order."""
        if self.duty >= 1.0:
            return np.ones(4, dtype=bool)
        p = self.phase(t)
        flags = {}
        for k, pair in enumerate(self.pairs):
            st = ((p - 0.5 * k) % 1.0) < self.duty
            for leg in pair:
                flags[leg] = st
        return np.array([flags[l] for l in LEG_NAMES])

    @property
    def stance_time(self):
        return self.duty / self.frequency

    @property
    def swing_time(self):
        return (1.0 - self.duty) / self.frequency


def gait_contacts(schedule: GaitSchedule, t, foot_positions, mu=0.7, f_min=0.0, f_max=600.0,
                  heading_yaw=0.0) -> ContactSet:
    """Contact set of the feet the schedule puts in stance at time ``t``.

    ``foot_positions`` are relative to the trunk origin, world-aligned.
    """
    flags = schedule.stance_flags(t)
    idx = np.flatnonzero(flags)
    return ContactSet(np.asarray(foot_positions)[idx], mu, f_min=f_min, f_max=f_max,
                      heading=heading_yaw, names=tuple(LEG_NAMES[i] for i in idx))


@dataclass
class Disturbance:
    start: float
    duration: float
    force: np.ndarray
    frame: str = "forearm"          # forearm | wrist | base
    ramp: float = 0.05

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float)
        if self.frame not in ("forearm", "wrist", "base"):
            raise ValueError(f"unknown disturbance frame {self.frame!r}")
        if self.duration <= 0:
            raise ValueError("disturbance duration must be positive")

    def scale(self, t):
        s = t - self.start
        if s < 0 or s > self.duration:
            return 0.0
        r = min(self.ramp, 0.5 * self.duration)
        if r <= 0:
            return 1.0
        if s < r:
            return 0.5 * (1.0 - np.cos(np.pi * s / r))
        if s > self.duration - r:
            return 0.5 * (1.0 - np.cos(np.pi * (self.duration - s) / r))
        return 1.0


@dataclass
class DisturbanceProfile:
    items: list = field(default_factory=list)

    def __post_init__(self):
        by_frame = {}
        for d in self.items:
            by_frame.setdefault(d.frame, []).append(d)
        for frame, ds in by_frame.items():
            ds = sorted(ds, key=lambda d: d.start)
            for a, b in zip(ds, ds[1:]):
                if b.start < a.start + a.duration:
                    raise ValueError(f"overlapping disturbances on {frame}")

    def releases(self):
        return sorted(d.start + d.duration for d in self.items)


FRAME_NAMES = {"forearm": "forearm", "wrist": "WR", "base": "B"}


def inject_disturbance(profile: DisturbanceProfile, t):
    """Active (frame, force) pairs at time ``t``; frames map to model frame names."""
    out = []
    for d in profile.items:
        s = d.scale(t)
        if s > 0.0:
            out.append((FRAME_NAMES[d.frame], s * d.force))
    return out


# ---------------------------------------------------------------------------
# plant step

def step(model, world: WorldState, tau_arm, foot_forces, dt, disturbances=(), gravity=GRAVITY,
         check=True) -> WorldState:
    """Advance the plant by ``dt``; returns a new world state.

    ``foot_forces`` is a (4, 3) array of world-frame ground forces (zero for
    swing feet); ``disturbances`` a list of (frame, world force).
    """
    if not 0.0 < dt <= 0.01:
        raise ValueError("plant step must lie in (0, 0.01] s")
    ch = arm_chain(model)
    r = world.robot
    R = r.base_rotation
    g = np.asarray(gravity, dtype=float)
    arm = model.arm
    q, qd = r.q[arm], r.qd[arm]

    # arm, trunk coordinates
    dist_base_force = np.zeros(3)
    dist_base_moment = np.zeros(3)
    arm_forces = []
    for frame, f in disturbances:
        f = np.asarray(f, dtype=float)
        if frame == "B":
            dist_base_force += f
        else:
            arm_forces.append((frame, R.T @ f))
    # the arm lives in the trunk frame, which accelerates with the centre of
    # mass; it feels the apparent gravity g - a_com (weightless in free fall)
    m_a = ch.mass.sum()
    M = model.base_mass + m_a
    feet_force = np.asarray(foot_forces, dtype=float)
    f_ext_arm = R @ sum((f_b for _, f_b in arm_forces), np.zeros(3))
    F_tot = feet_force.sum(axis=0) + M * g + dist_base_force + f_ext_arm
    g_b = R.T @ (g - F_tot / M)
    try:
        q_new, qd_new, qdd, q_m, qd_m = arm_midpoint_step(model, q, qd, tau_arm, dt, g_b,
                                                          arm_forces)
    except np.linalg.LinAlgError as exc:
        raise SimulationDiverged(f"arm dynamics failed at t = {world.time:.4f} s: {exc}",
                                 _dump(world, tau_arm)) from exc
    kin = ch.kinematics(q)
    kin_m = ch.kinematics(q_m)

    # arm reaction on the trunk (about the trunk origin)
    _, F, N = _k.rnea(kin_m[0], kin_m[1], kin_m[2], ch.mass, ch.com, ch.inertia, ch.armature,
                      qd_m, qdd, g_b)
    moment_b = -(N + _k.cross(kin_m[1][0], F))
    for frame, f_b in arm_forces:
        k, off = ch.link_index(frame)
        pt = kin_m[1][k] + kin_m[0][k] @ off.translation
        moment_b += _k.cross(pt, f_b)
    moment = R @ moment_b

    # trunk + arm centre of mass
    _, c_a = arm_com(model, q, kin=kin)
    x_b = r.base_position
    s = x_b + (m_a / M) * (R @ c_a)
    sd = r.base_linear_velocity + (m_a / M) * (np.cross(r.base_angular_velocity, R @ c_a)
                                               + R @ _arm_com_rate(model, q, qd, kin))
    sd = sd + dt * F_tot / M
    s = s + dt * sd

    # trunk rotation
    w = r.base_angular_velocity
    T = moment + dist_base_moment
    for i in range(4):
        if np.any(feet_force[i]):
            T = T + np.cross(world.feet[i] - x_b, feet_force[i])
    I_w = R @ model.base_inertia @ R.T
    wd = np.linalg.solve(I_w, T - np.cross(w, I_w @ w))
    w_new = w + dt * wd
    R_new = exp_so3(w_new * dt) @ R

    kin_new = ch.kinematics(q_new)
    _, c_new = arm_com(model, q_new, kin=kin_new)
    x_new = s - (m_a / M) * (R_new @ c_new)

    robot = r.copy()
    robot.base_rotation = R_new
    robot.base_position = x_new
    # trunk velocity consistent with the integrated CoM velocity, so that the
    # next step recovers the same momentum
    robot.base_linear_velocity = sd - (m_a / M) * (
        np.cross(w_new, R_new @ c_new) + R_new @ _arm_com_rate(model, q_new, qd_new, kin_new))
    robot.base_angular_velocity = w_new
    robot.q[arm] = q_new
    robot.qd[arm] = qd_new

    obj = _step_object(world.object, world.time + dt, dt, g)
    out = WorldState(robot, obj, world.time + dt, world.gait_phase, world.feet.copy(), qdd)
    if check and not (np.all(np.isfinite(robot.q)) and np.all(np.isfinite(robot.base_position))
                      and np.all(np.isfinite(robot.base_rotation))):
        raise SimulationDiverged(f"non-finite state at t = {out.time:.4f} s",
                                 _dump(world, tau_arm))
    return out


def _dump(world, tau_arm):
    r = world.robot
    return {"time": world.time, "q": r.q.tolist(), "base_position": r.base_position.tolist(),
            "tau_arm": np.asarray(tau_arm).tolist()}


def _arm_com_rate(model, q, qd, kin):
    ch = arm_chain(model)
    R, p, z = kin
    v = np.zeros(3)
    for k in range(ch.n):
        c = p[k] + R[k] @ ch.com[k]
        v += ch.mass[k] * (_k.point_jacobian(p, z, k, c)[:3] @ qd)
    return v / ch.mass.sum()


def _step_object(obj: ObjectState, t, dt, g):
    o = obj.copy()
    if o.attached:
        return o
    if o.release_time is None:
        if np.any(o.velocity):
            o.position = o.position + dt * o.velocity + 0.5 * dt * dt * g
            o.velocity = o.velocity + dt * g
        return o
    if t <= o.release_time + 1e-12:
        return o
    if o.catch_time is not None and t >= o.catch_time - 1e-12:
        o.position = np.asarray(o.catch_point, dtype=float).copy()
        o.velocity = np.zeros(3)
        return o
    if not np.any(o.velocity):
        o.velocity = np.asarray(o.release_velocity, dtype=float).copy()
    o.position = o.position + dt * o.velocity + 0.5 * dt * dt * g
    o.velocity = o.velocity + dt * g
    return o


def throw_velocity(start, stop, flight_time, g=9.81):
    """Release velocity of the ballistic arc from ``start`` to ``stop``."""
    d = np.asarray(stop, dtype=float) - np.asarray(start, dtype=float)
    v = d / flight_time
    v[2] += 0.5 * g * flight_time
    return v


# ---------------------------------------------------------------------------
# gait / feet

class FootPlanner:
    """Per-leg contact state machine plus swing arcs."""

    def __init__(self, schedule: GaitSchedule, feet_world, ground=0.0):
        self.schedule = schedule
        self.stance = np.ones(4, dtype=bool)
        self.prev_sched = np.ones(4, dtype=bool)
        self.lift_time = np.zeros(4)
        self.lift_pos = np.array(feet_world, dtype=float)
        self.ground = ground

    def update(self, t, feet, stand, targets):
        """Advance contact states to time ``t``; returns new world foot positions."""
        sched = self.schedule.stance_flags(t)
        feet = feet.copy()
        T_sw = self.schedule.swing_time
        for i in range(4):
            if self.stance[i]:
                if not stand and self.prev_sched[i] and not sched[i]:
                    self.stance[i] = False
                    self.lift_time[i] = t
                    self.lift_pos[i] = feet[i]
            if not self.stance[i]:
                tau = (t - self.lift_time[i]) / T_sw if T_sw > 0 else 1.0
                if tau >= 1.0:
                    self.stance[i] = True
                    feet[i] = np.array([targets[i][0], targets[i][1], self.ground])
                else:
                    h = tau * tau * (3.0 - 2.0 * tau)
                    xy = self.lift_pos[i, :2] + h * (targets[i][:2] - self.lift_pos[i, :2])
                    z = self.ground + self.schedule.swing_height * np.sin(np.pi * tau)
                    feet[i] = np.array([xy[0], xy[1], z])
        self.prev_sched = sched
        return feet


# ---------------------------------------------------------------------------
# closed loop

@dataclass
class ControlRates:
    plant_dt: float = 0.001
    control_every: int = 4      # plant steps per control tick
    tree_every: int = 5         # control ticks per tree tick
    vision_every: int = 10      # control ticks per vision tick


def default_trunk_gains():
    return TrunkGains(K_b=[3000.0, 3000.0, 4000.0], D_b=[400.0, 400.0, 500.0],
                      K_r=[400.0, 500.0, 300.0], D_r=[30.0, 50.0, 40.0])


@dataclass
class LoopConfig:
    trunk: TrunkGains = field(default_factory=default_trunk_gains)
    arm: ArmGains = field(default_factory=ArmGains)
    camera: CameraModel = field(default_factory=CameraModel)
    gait: GaitSchedule = field(default_factory=GaitSchedule)
    rates: ControlRates = field(default_factory=ControlRates)
    lam: float = 3.0
    mu: float = 0.7
    f_min: float = 0.0
    f_max: float = 600.0
    Q: tuple = (1.0, 1.0, 1.0, 10.0, 10.0, 10.0)
    R: float = 1e-4
    pitch_rate: float = 0.2
    swing_kp: float = 300.0
    swing_kd: float = 10.0
    estimate_alpha: float = 0.3
    capture_gain: float = 0.2            # s, foothold shift per unit velocity error (~sqrt(h/g))
    track_memory: float = 1.5            # s the wrist keeps steering on a lost object's estimate
    carrier_feedforward: bool = True     # cancel image motion caused by trunk and proximal joints


LOG_COLUMNS = (
    ["t", "phase", "base_x", "base_y", "base_z", "roll", "pitch", "yaw"]
    + [f"q{i}" for i in range(1, 8)] + [f"tau{i}" for i in range(1, 8)]
    + ["wr_x", "wr_y", "wr_z", "wr_des_x", "wr_des_y", "wr_des_z",
       "e_x", "e_y", "e_phi", "feature_valid", "vision_tick", "detection_valid",
       "qp_status", "n_stance", "obj_x", "obj_y", "obj_z", "ee_obj_dist", "cam_obj_dist",
       "gripper", "event"]
)


class Mission:
    """Produces arm/base references at the tree rate."""

    def tick(self, per: Perception, bb) -> SagOutput:
        raise NotImplementedError


class HoldAndServo(Mission):
    """Shelbow holds the home wrist point, wrist servos on the object."""

    def __init__(self, x_wr, stand=False, vision=True):
        self.x_wr = np.asarray(x_wr, dtype=float)
        self.stand = stand
        self.vision = vision
        self.phase = "servo"

    def tick(self, per, bb):
        mode = VISUAL if self.vision else CARTESIAN
        return SagOutput("servo", BaseCommand(stand=self.stand), self.x_wr, np.zeros(3), mode,
                         vision_active=self.vision)


class SagMission(Mission):
    """Search, Approach, Grasp sequenced by the reactive tree."""

    def __init__(self, controller: SagController):
        self.sag = controller
        self.out = None
        self.tree = build_sag_tree(self._visible, self._approach, self._grasp, self._search)
        self.events = []

    @property
    def phase(self):
        return self.sag.phase

    def _visible(self, bb):
        return bool(bb["visible"]) or self.sag.phase in COMMITTED

    def _approach(self, bb):
        if self.sag.approach_done():
            return SUCCESS
        self.out = self.sag.approach_tick(bb["perception"])
        return SUCCESS if self.sag.approach_done() else RUNNING

    def _grasp(self, bb):
        try:
            self.out = self.sag.grasp_tick(bb["perception"])
        except UnreachableGraspError:
            self.events.append((bb["perception"].t, "unreachable-grasp"))
            return RUNNING
        return SUCCESS if self.sag.phase == DONE else RUNNING

    def _search(self, bb):
        self.sag.on_detection_lost()
        self.out = self.sag.search_tick(bb["perception"])
        return RUNNING

    def tick(self, per, bb):
        bb["visible"] = per.visible and per.object_world is not None
        bb["perception"] = per
        bb["status"] = tick(self.tree, bb)
        return self.out


class ClosedLoop:
    """Owns the world and runs plant, controllers, vision and mission."""

    def __init__(self, model, world: WorldState, mission: Mission, cfg: LoopConfig | None = None,
                 disturbances: DisturbanceProfile | None = None, seed=0, vision_noise=True):
        self.model = model
        self.world = world
        self.mission = mission
        self.cfg = cfg or LoopConfig()
        self.dist = disturbances or DisturbanceProfile()
        self.rng = np.random.default_rng(seed)
        self.vision_noise = vision_noise
        r = world.robot
        self.ref_pos = r.base_position.copy()
        self.ref_yaw = heading(r.base_rotation)
        self.ref_pitch = 0.0
        self.stance_height = model.stance_height
        q_wr = r.q[model.wrist]
        self.wrist_int = WristSetpointIntegrator(q_wr)
        self.prev_mode = None
        self.out: SagOutput | None = None
        self.bb = Blackboard()
        self.det = Detection.invalid()
        self.err = None
        self.obj_est = None
        self.last_seen = -np.inf
        self.planner = FootPlanner(self.cfg.gait, world.feet)
        self.k = 0
        self.rows = []
        self.qp_infeasible = 0
        self.detections = []          # (t, valid) per vision tick
        self.events = []
        self.gripper = False
        self.last_stand = False
        self.m_arm = arm_chain(model).mass.sum()

    # -- helpers -------------------------------------------------------
    def camera_pose(self, r=None):
        r = r or self.world.robot
        return r.base_pose @ arm_frame_pose(self.model, r.q[self.model.arm], "C")

    def _perception(self):
        r = self.world.robot
        R = r.base_rotation
        R_hb = horizontal_rotation(R)
        q_a = r.q[self.model.arm]
        ch = arm_chain(self.model)
        kin = ch.kinematics(q_a)
        wr = arm_frame_pose(self.model, q_a, "WR", kin=kin).translation
        ee = arm_frame_pose(self.model, q_a, "EE", kin=kin).translation
        return Perception(self.world.time, bool(self.det.valid), self.obj_est, r.base_pose,
                          heading(R), self.camera_pose(), R_hb @ wr, R_hb @ ee, R_hb,
                          self.err.norm if self.err is not None and self.err.valid else np.inf)

    def _vision_tick(self, out):
        r = self.world.robot
        cam = self.camera_pose()
        rng = self.rng if self.vision_noise else None
        self.det = detect(self.world.object.position, self.world.object.radius, cam,
                          self.cfg.camera, rng)
        self.detections.append((self.world.time, bool(self.det.valid)))
        if self.det.valid:
            p_c = np.array([self.det.center[0] * self.det.Z, self.det.center[1] * self.det.Z,
                            self.det.Z])
            est = cam.apply(p_c)
            a = self.cfg.estimate_alpha
            self.obj_est = est if self.obj_est is None else (1 - a) * self.obj_est + a * est
        q_a = r.q[self.model.arm]
        q_wr = q_a[4:]
        dt_v = self.cfg.rates.plant_dt * self.cfg.rates.control_every * self.cfg.rates.vision_every
        R_cb = arm_frame_pose(self.model, q_a, "C").rotation
        J = arm_point_jacobian(self.model, q_a, "C")[:, 4:]
        qd_ref, self.err = servo_step(self.det, R_cb, J, self.cfg.lam, self.cfg.camera,
                                      self._carrier_rate(self.det, R_cb))
        if self.det.valid:
            self.last_seen = self.world.time
        elif (self.obj_est is not None
              and self.world.time - self.last_seen <= self.cfg.track_memory):
            # briefly out of view: steer on the remembered object position; the
            # logged feature error stays invalid
            pred = self._predicted_detection(cam)
            if pred.valid:
                qd_ref, _ = servo_step(pred, R_cb, J, self.cfg.lam, self.cfg.camera,
                                       self._carrier_rate(pred, R_cb))
        if out is not None and out.vision_active and out.wrist_mode == VISUAL:
            self.wrist_int.update(qd_ref, dt_v, q_wr)
        else:
            self.wrist_int.update(np.zeros(3), dt_v, q_wr)
        return True

    def _carrier_rate(self, det, R_cb):
        if not (self.cfg.carrier_feedforward and det.valid):
            return None
        r, model = self.world.robot, self.model
        q_a, qd_a = r.q[model.arm], r.qd[model.arm]
        R = r.base_rotation
        J = arm_point_jacobian(model, q_a, "C")[:, :4]
        v_arm = J @ qd_a[:4]
        p_c = arm_frame_pose(model, q_a, "C").translation
        w = r.base_angular_velocity
        v_w = r.base_linear_velocity + np.cross(w, R @ p_c) + R @ v_arm[:3]
        w_w = w + R @ v_arm[3:]
        R_wc = R @ R_cb
        Z = det.Z if self.cfg.camera.constant_depth is None else self.cfg.camera.constant_depth
        return carrier_feature_rate(det, R_cb, Z, np.r_[R_wc.T @ v_w, R_wc.T @ w_w],
                                    np.r_[R_cb.T @ v_arm[:3], R_cb.T @ v_arm[3:]])

    def _predicted_detection(self, cam):
        p = cam.inverse().apply(self.obj_est)
        if p[2] < self.cfg.camera.z_range[0]:
            return Detection.invalid()
        f = self.cfg.camera.focal
        return Detection(np.array([f * p[0] / p[2], f * p[1] / p[2]]), np.zeros(2), float(p[2]),
                         True)

    def _targets(self, cmd: BaseCommand, com_xy, com_vel_xy=None):
        g = self.cfg.gait
        yaw = self.ref_yaw
        v_w = cmd.forward_velocity * np.array([np.cos(yaw), np.sin(yaw)])
        if com_vel_xy is not None:
            # capture-point style correction: step into the unwanted velocity
            com_xy = com_xy + self.cfg.capture_gain * (np.asarray(com_vel_xy) - v_w)
        out = []
        for i, leg in enumerate(LEG_NAMES):
            if self.planner.stance[i]:
                rem = g.swing_time
            else:
                rem = max(g.swing_time - (self.world.time - self.planner.lift_time[i]), 0.0)
            yaw_td = yaw + cmd.yaw_rate * (rem + 0.5 * g.stance_time)
            nom = self.model.nominal_feet[leg]
            c, s = np.cos(yaw_td), np.sin(yaw_td)
            p = com_xy + v_w * (rem + 0.5 * g.stance_time) + np.array(
                [c * nom[0] - s * nom[1], s * nom[0] + c * nom[1]])
            out.append(p)
        return out

    # -- one control tick ----------------------------------------------
    def control_tick(self):
        cfg, rates, model = self.cfg, self.cfg.rates, self.model
        w = self.world
        r = w.robot
        dt_c = rates.plant_dt * rates.control_every
        event = ""
        vision_tick = False
        if self.k % rates.tree_every == 0 or self.out is None:
            self.out = self.mission.tick(self._perception(), self.bb)
            if self.out.event:
                event = self.out.event
                self.events.append((w.time, event))
        out = self.out
        if out.wrist_mode != self.prev_mode:
            self.wrist_int.reset(r.q[model.wrist])
            self.prev_mode = out.wrist_mode
        if self.k % rates.vision_every == 0:
            vision_tick = self._vision_tick(out)
        self.gripper = self.gripper or bool(out.gripper_closed)
        # the object is held once the fingers have finished closing
        if self.gripper and out.phase == DONE and not w.object.attached:
            w.object.attached = True

        # base reference
        cmd = out.base
        self.ref_yaw += cmd.yaw_rate * dt_c
        self.ref_pos = self.ref_pos + dt_c * cmd.forward_velocity * np.array(
            [np.cos(self.ref_yaw), np.sin(self.ref_yaw), 0.0])
        self.ref_pos[2] = self.stance_height
        dp = np.clip(cmd.pitch - self.ref_pitch, -cfg.pitch_rate * dt_c, cfg.pitch_rate * dt_c)
        self.ref_pitch += dp
        ref = BaseReference(self.ref_pos.copy(), rotz(self.ref_yaw) @ roty(-self.ref_pitch),
                            cmd.forward_velocity * np.array([np.cos(self.ref_yaw),
                                                             np.sin(self.ref_yaw), 0.0]),
                            np.array([0.0, 0.0, cmd.yaw_rate]))
        # feet
        q_a = r.q[model.arm]
        _, c_a = arm_com(model, q_a)
        M = model.base_mass + self.m_arm
        com = r.base_position + (self.m_arm / M) * (r.base_rotation @ c_a)
        stand = cmd.stand or cfg.gait.duty >= 1.0
        w.feet = self.planner.update(w.time, w.feet, stand, self._targets(cmd, com[:2], r.base_linear_velocity[:2]))

        # trunk controller
        coupling = -arm_coupling_wrench(model, q_a, r.qd[model.arm], w.qdd_arm, r.base_pose)
        W = desired_base_wrench(r, ref, cfg.trunk, coupling, mass=model.base_mass)
        idx = np.flatnonzero(self.planner.stance)
        forces = np.zeros((4, 3))
        status = "optimal"
        if len(idx):
            cs = ContactSet(w.feet[idx] - r.base_position, cfg.mu, f_min=cfg.f_min,
                            f_max=cfg.f_max, heading=self.ref_yaw)
            fd = distribute_forces(W, cs, np.array(cfg.Q), cfg.R)
            forces[idx] = fd.forces
            status = fd.status
        if status != "optimal":
            self.qp_infeasible += 1

        # arm
        wm = WristMode(out.wrist_mode, self.wrist_int.q_des, self.wrist_int.qd_des,
                       out.x_ee_des if out.x_ee_des is not None else np.zeros(3),
                       out.xd_ee_des if out.xd_ee_des is not None else np.zeros(3))
        aref = ArmReference(out.x_wr_des, out.xd_wr_des, wm)
        # the arm rides on a trunk accelerating with the commanded ground forces;
        # compensate the apparent gravity it feels rather than the static one
        g_app = -forces.sum(axis=0) / M
        tau = arm_torques(model, q_a, r.qd[model.arm], r.base_rotation, aref, cfg.arm,
                          gravity_world=g_app)

        self._log(out, tau, status, len(idx), vision_tick, event)

        # plant
        for _ in range(rates.control_every):
            dist = inject_disturbance(self.dist, self.world.time)
            self.world = step(model, self.world, tau, forces, rates.plant_dt, dist)
            if self.world.object.attached:
                self.world.object.position = self.camera_pose().translation
        self._update_legs()
        self.k += 1

    def _update_legs(self):
        r = self.world.robot
        R, p = r.base_rotation, r.base_position
        for i, leg in enumerate(LEG_NAMES):
            foot_b = R.T @ (self.world.feet[i] - p)
            r.q[self.model.legs[leg]] = leg_ik(self.model, leg, foot_b)

    def leg_torques(self, forces):
        """Stance feedforward torques -J^T F per leg, trunk-frame Jacobians."""
        r = self.world.robot
        out = {}
        for i, leg in enumerate(LEG_NAMES):
            J = leg_jacobian(self.model, leg, r.q[self.model.legs[leg]])
            out[leg] = -J.T @ (r.base_rotation.T @ forces[i])
        return out

    def _log(self, out, tau, status, n_stance, vision_tick, event):
        w = self.world
        r = w.robot
        rpy = matrix_to_rpy(r.base_rotation)
        per_wr = horizontal_rotation(r.base_rotation) @ arm_frame_pose(
            self.model, r.q[self.model.arm], "WR").translation
        cam = self.camera_pose()
        ee = cam.translation
        obj = w.object.position
        e = self.err.e_s if self.err is not None and self.err.valid else np.full(3, np.nan)
        x_des = out.x_wr_des
        self.rows.append(
            [round(w.time, 9), out.phase, *r.base_position, *rpy, *r.q[self.model.arm], *tau,
             *per_wr, *x_des, *e, int(self.err is not None and self.err.valid), int(vision_tick),
             int(self.det.valid), int(status == "optimal"), n_stance, *obj,
             float(np.linalg.norm(ee - obj)), float(np.linalg.norm((obj - ee)[:2])),
             int(self.gripper), event])

    def run(self, duration, stop=None):
        n = int(round(duration / (self.cfg.rates.plant_dt * self.cfg.rates.control_every)))
        for _ in range(n):
            self.control_tick()
            if stop is not None and stop(self):
                break
        return self


def initial_world(model, object_state: ObjectState, base_position=None, yaw=0.0):
    from .model import standing_state
    r = standing_state(model, base_position, yaw)
    feet = np.zeros((4, 3))
    R = r.base_rotation
    # support polygon centred under the trunk+arm centre of mass
    m_a = arm_chain(model).mass.sum()
    _, c_a = arm_com(model, r.q[model.arm])
    shift = (m_a / (model.base_mass + m_a)) * (R @ c_a)
    shift[2] = 0.0
    for i, leg in enumerate(LEG_NAMES):
        xy = model.nominal_feet[leg]
        feet[i] = r.base_position + shift + R @ np.array([xy[0], xy[1], -model.stance_height])
    r.base_position = r.base_position.copy()
    world = WorldState(r, object_state, 0.0, 0.0, feet, np.zeros(len(model.arm)))
    for i, leg in enumerate(LEG_NAMES):
        r.q[model.legs[leg]] = leg_ik(model, leg, R.T @ (feet[i] - r.base_position))
    return world


def home_wrist_target(model, base_rotation=None):
    """Home wrist point in the horizontal frame (trunk-relative)."""
    q = np.asarray(model.home["arm"], dtype=float)
    R = np.eye(3) if base_rotation is None else base_rotation
    return horizontal_rotation(R) @ arm_frame_pose(model, q, "WR").translation


# ---------------------------------------------------------------------------
# free-flying camera, for the servo law alone

def simulate_free_camera(camera_pose: Pose, target, lam=3.0, duration=1.5, dt=0.001,
                         base_R=None, depth=None):
    """Kinematic 6-DoF camera driven by the servo law; returns (t, e_s history).

    ``base_R`` is the trunk orientation defining the roll feature (identity
    by default); ``depth`` forces a constant Z in the interaction matrix.
    """
    from .vision import camera_twist, feature_error, interaction_matrix, project
    base_R = np.eye(3) if base_R is None else base_R
    R, p = camera_pose.rotation.copy(), camera_pose.translation.copy()
    n = int(round(duration / dt))
    ts = np.arange(n + 1) * dt
    E = np.zeros((n + 1, 3))
    for k in range(n + 1):
        pc = R.T @ (np.asarray(target) - p)
        x, y, Z = project(pc)
        det = Detection(np.array([x, y]), np.zeros(2), Z, True)
        R_cb = base_R.T @ R
        err = feature_error(det, R_cb)
        E[k] = err.e_s
        if k == n:
            break
        xi = camera_twist(err, interaction_matrix(det, R_cb, depth), lam)
        p = p + dt * (R @ xi.linear)
        R = R @ exp_so3(xi.angular * dt)
    return ts, E


def simulate_wrist_servo(model, offset, depth, lam=3.0, duration=2.0, dt=0.004, q_arm=None):
    """Kinematic wrist-only servo with the trunk and Shelbow frozen.

    The target sits at image position ``offset`` and distance ``depth``
    along the optical axis of the camera at ``q_arm`` (home by default).
    Wrist joints follow the rate reference exactly.  Returns (t, e_s history).
    """
    from .vision import project
    q = np.array(model.home["arm"] if q_arm is None else q_arm, dtype=float)
    C0 = arm_frame_pose(model, q, "C")
    target = C0.apply([offset[0] * depth, offset[1] * depth, depth])
    n = int(round(duration / dt))
    ts = np.arange(n + 1) * dt
    E = np.zeros((n + 1, 3))
    for k in range(n + 1):
        C = arm_frame_pose(model, q, "C")
        x, y, Z = project(C.inverse().apply(target))
        J = arm_point_jacobian(model, q, "C")[:, 4:]
        qd, err = servo_step(Detection(np.array([x, y]), np.zeros(2), Z, True), C.rotation, J, lam)
        E[k] = err.e_s
        q[4:] += qd * dt
    return ts, E
