"""Search, Approach and Grasp motion generation.

Positions handed to the arm are in the horizontal frame, relative to the
trunk origin.  The wrist search circle is centred on the shoulder (the arm
base) at shoulder height; the sector behind the trunk between the limit
points A (left) and B (right) is never commanded.

``SagController`` is the phase machine the behavior tree drives; the free
functions are the individual reference generators.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spatial import Pose, wrap_angle

EE_OFFSET = 0.12     # WR to EE distance of the default model


class SagError(ValueError):
    pass


class ObjectTooCloseError(SagError):
    pass


class UnreachableGraspError(SagError):
    pass


# phases
SEARCH_SWEEP = "search-arm-sweep"
SEARCH_BACK_LEFT = "search-backward-left"
SEARCH_BACK_RIGHT = "search-backward-right"
SEARCH_ROTATE = "search-base-rotate"
ALIGN_WRIST = "approach-align-wrist"
ALIGN_BASE = "approach-align-base"
WALK = "approach-walk"
GRASP_POSITION = "grasp-position"
GRASP_PITCH = "grasp-pitch"
GRASP_REACH = "grasp-reach"
GRASP_CLOSE = "grasp-close"
DONE = "done"

SEARCH_PHASES = (SEARCH_SWEEP, SEARCH_BACK_LEFT, SEARCH_BACK_RIGHT, SEARCH_ROTATE)
APPROACH_PHASES = (ALIGN_WRIST, ALIGN_BASE, WALK)
GRASP_PHASES = (GRASP_POSITION, GRASP_PITCH, GRASP_REACH, GRASP_CLOSE)
PHASES = SEARCH_PHASES + APPROACH_PHASES + GRASP_PHASES + (DONE,)
COMMITTED = (GRASP_REACH, GRASP_CLOSE, DONE)   # open-loop; vision no longer needed

# allowed transitions; detection loss may return any approach/grasp
# phase (before the open-loop reach) to the search phase it came from
TRANSITIONS = {
    SEARCH_SWEEP: {SEARCH_BACK_LEFT, SEARCH_BACK_RIGHT, ALIGN_WRIST},
    SEARCH_BACK_LEFT: {SEARCH_SWEEP, ALIGN_WRIST},
    SEARCH_BACK_RIGHT: {SEARCH_ROTATE, ALIGN_WRIST},
    SEARCH_ROTATE: {SEARCH_SWEEP, ALIGN_WRIST},
    ALIGN_WRIST: {ALIGN_BASE, *SEARCH_PHASES},
    ALIGN_BASE: {WALK, *SEARCH_PHASES},
    WALK: {GRASP_POSITION, *SEARCH_PHASES},
    GRASP_POSITION: {GRASP_PITCH, *SEARCH_PHASES},
    GRASP_PITCH: {GRASP_REACH, WALK, *SEARCH_PHASES},
    GRASP_REACH: {GRASP_CLOSE},
    GRASP_CLOSE: {DONE},
    DONE: set(),
}


@dataclass
class SearchParams:
    radius: float = 0.30             # wrist circle about the shoulder, m
    omega: float = 0.5               # wrist circle rate, rad/s
    limit_a: float = np.deg2rad(110.0)
    limit_b: float = -np.deg2rad(110.0)
    ee_half_angle: float = np.deg2rad(35.0)
    ee_speed: float = 0.5            # rad/s
    rotate_rate: float = 0.4         # rad/s
    max_reach: float = 0.58          # shoulder to wrist, m
    center: tuple = (0.20, 0.0, 0.13)   # shoulder in the trunk frame
    ee_offset: float = EE_OFFSET

    def __post_init__(self):
        if self.radius > self.max_reach - 0.05:
            raise ValueError("search radius violates the 0.05 m singularity margin")
        if not (self.limit_a > 0 > self.limit_b):
            raise ValueError("limit A must be on the left (> 0) and B on the right (< 0)")
        if self.omega <= 0 or self.ee_speed <= 0:
            raise ValueError("search rates must be positive")


@dataclass
class ApproachParams:
    yaw_gain: float = 1.0
    yaw_rate_max: float = 0.3
    yaw_deadband: float = 0.02
    walk_speed: float = 0.2
    stop_distance: float = 0.7       # horizontal camera-to-object distance, m
    wrist_tolerance: float = 0.03
    settle_time: float = 0.6


@dataclass
class GraspParams:
    trigger_fraction: float = 0.85   # of the maximum EE reach from the shoulder
    retract_rate: float = 0.1        # m/s, longitudinal wrist retraction
    retract_min: float = 0.12        # minimum wrist x ahead of the shoulder
    height_rate: float = 0.05        # m/s, wrist descent/ascent to the object height
    track_hold: float = 0.2          # ramps and walking pause while the feature error exceeds this
    walk_speed: float = 0.1
    pitch_limit: float = 0.3
    pitch_settle: float = 1.5
    reach_time: float = 2.5
    close_distance: float = 0.03
    standoff: float = 0.0            # EE stops this far short of the object centre
    close_hold: float = 0.5


@dataclass
class GraspTarget:
    object_position: np.ndarray      # world
    x_so: float
    z_so: float
    ee_pose: Pose                    # world


@dataclass
class BaseCommand:
    forward_velocity: float = 0.0
    yaw_rate: float = 0.0
    pitch: float = 0.0               # nose-up positive elevation angle
    stand: bool = False


# ---------------------------------------------------------------------------
# reference generators

def arc_reference(t, start, stop, omega, radius, center):
    """Point moving on a horizontal circle from azimuth ``start`` to ``stop``."""
    span = stop - start
    dur = abs(span) / omega
    s = np.sign(span)
    if t >= dur:
        phi, rate = stop, 0.0
    else:
        phi, rate = start + s * omega * max(t, 0.0), s * omega
    c = np.asarray(center, dtype=float)
    x = c + radius * np.array([np.cos(phi), np.sin(phi), 0.0])
    xd = radius * rate * np.array([-np.sin(phi), np.cos(phi), 0.0])
    return x, xd, phi


def search_wrist_reference(t, params: SearchParams, side, center=None):
    """Wrist on the search circle, from the forward point toward A or B."""
    stop = params.limit_a if side == "left" else params.limit_b
    c = params.center if center is None else center
    x, xd, _ = arc_reference(t, 0.0, stop, params.omega, params.radius, c)
    return x, xd


def search_ee_reference(t, anchor, params: SearchParams, side, start_yaw=None):
    """EE circling the anchored wrist point, yawing rearward.

    Only the yaw of the WR-to-EE direction changes.  The sweep starts along
    the outward radial of the anchor and covers twice the half-angle.
    """
    anchor = np.asarray(anchor, dtype=float)
    if start_yaw is None:
        c = np.asarray(params.center, dtype=float)
        start_yaw = np.arctan2(anchor[1] - c[1], anchor[0] - c[0])
    s = 1.0 if side == "left" else -1.0
    stop = start_yaw + s * 2.0 * params.ee_half_angle
    x, xd, _ = arc_reference(t, start_yaw, stop, params.ee_speed, params.ee_offset, anchor)
    return x, xd


def ee_scan_duration(params: SearchParams):
    return 2.0 * params.ee_half_angle / params.ee_speed


def radial_ee(x_wr, xd_wr, center, offset):
    """EE reference pointing radially outward from the circle centre."""
    d = np.asarray(x_wr) - center
    d[2] = 0.0
    r = np.linalg.norm(d)
    u = d / r
    du = (xd_wr - u * (u @ xd_wr)) / r
    du[2] = 0.0
    return x_wr + offset * u, xd_wr + offset * du


def base_rotate_command(accumulated_yaw, params: SearchParams):
    """Yaw rate for the in-place half turn; returns (rate, finished)."""
    if accumulated_yaw >= np.pi:
        return 0.0, True
    return params.rotate_rate, False


def approach_wrist_target(object_dir, params: SearchParams, side="left", center=None):
    """Where the ray from the trunk origin toward the object meets the wrist circle."""
    d = np.asarray(object_dir, dtype=float)[:2]
    n = np.linalg.norm(d)
    if n < 1e-9:
        raise SagError("object direction is undefined")
    d = d / n
    c = np.asarray(params.center if center is None else center, dtype=float)
    # |t d - c| = r with t > 0; the trunk origin is inside the circle
    b = d @ c[:2]
    disc = b * b - (c[:2] @ c[:2] - params.radius ** 2)
    if disc < 0:
        phi = np.arctan2(d[1], d[0])
    else:
        t = b + np.sqrt(disc)
        p = t * d - c[:2]
        phi = np.arctan2(p[1], p[0])
    if not params.limit_b <= phi <= params.limit_a:
        phi = params.limit_a if side == "left" else params.limit_b
    return c + params.radius * np.array([np.cos(phi), np.sin(phi), 0.0])


def approach_base_heading(bearing_error, p: ApproachParams, forward=False):
    """Saturated proportional yaw rate; constant forward speed when walking."""
    rate = 0.0
    if abs(bearing_error) >= p.yaw_deadband:
        rate = float(np.clip(p.yaw_gain * bearing_error, -p.yaw_rate_max, p.yaw_rate_max))
    return BaseCommand(forward_velocity=p.walk_speed if forward else 0.0, yaw_rate=rate)


def grasp_pitch(z_so, x_so):
    """Base pitch (elevation, nose up positive) pointing the shoulder at the object."""
    if x_so <= 0.05:
        raise ObjectTooCloseError("object is too close to the shoulder to pitch toward it")
    return float(np.arctan(z_so / x_so))


def grasp_target(object_world, base_pose: Pose, shoulder_b, heading_yaw, standoff=0.0,
                 ee_offset=EE_OFFSET):
    """Grasp pose: EE at the object centre, approach axis horizontal along the heading."""
    obj = np.asarray(object_world, dtype=float)
    rel = base_pose.rotation.T @ (obj - base_pose.translation) - np.asarray(shoulder_b)
    h = np.array([np.cos(heading_yaw), np.sin(heading_yaw), 0.0])
    ee = obj - standoff * h
    # tool z along the heading, camera x horizontal
    z = h
    x = np.array([np.sin(heading_yaw), -np.cos(heading_yaw), 0.0])
    R = np.column_stack([x, np.cross(z, x), z])
    return GraspTarget(obj, float(rel[0]), float(rel[2]), Pose(R, ee))


def min_jerk(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s), 30.0 * s ** 2 * (1.0 - s) ** 2


# ---------------------------------------------------------------------------
# phase machine

@dataclass
class Perception:
    """What the phase machine sees each tick (horizontal frame, trunk-relative
    unless marked world)."""
    t: float
    visible: bool
    object_world: np.ndarray | None      # filtered estimate
    base_pose: Pose
    base_yaw: float
    camera_world: Pose
    x_wr: np.ndarray
    x_ee: np.ndarray
    R_hb: np.ndarray                     # trunk -> horizontal rotation
    feature_norm: float = np.inf


@dataclass
class SagOutput:
    phase: str
    base: BaseCommand
    x_wr_des: np.ndarray
    xd_wr_des: np.ndarray
    wrist_mode: str                      # "cartesian-tracking" | "visual-joint-impedance"
    x_ee_des: np.ndarray = None
    xd_ee_des: np.ndarray = None
    vision_active: bool = False
    gripper_closed: bool = False
    event: str = ""


@dataclass
class SearchProgress:
    phase: str = SEARCH_SWEEP
    leg: int = 0                 # 0: sweep left, 1: sweep right
    t: float = 0.0
    rotated: float = 0.0


class SagController:
    """Phase machine for Search, Approach and Grasp."""

    def __init__(self, search: SearchParams | None = None, approach: ApproachParams | None = None,
                 grasp: GraspParams | None = None, dt=0.02):
        self.sp = search or SearchParams()
        self.ap = approach or ApproachParams()
        self.gp = grasp or GraspParams()
        self.dt = dt
        self.search = SearchProgress()
        self.phase = SEARCH_SWEEP
        self.history = [SEARCH_SWEEP]
        self.side = "left"
        self.timer = 0.0
        self.stop_distance = None
        self.target: GraspTarget | None = None
        self.gripper = False
        self.x_wr_hold = None
        self.reach_from = None
        self.pitch_cmd = 0.0
        self.walk_heading = None
        self.ramp_t = 0.0

    # -- bookkeeping ----------------------------------------------------
    def _go(self, phase):
        if phase == self.phase:
            return
        if phase not in TRANSITIONS[self.phase]:
            raise SagError(f"illegal phase transition {self.phase} -> {phase}")
        self.phase = phase
        self.history.append(phase)
        self.timer = 0.0
        self.ramp_t = 0.0

    def _center(self, per: Perception):
        return per.R_hb @ np.asarray(self.sp.center, dtype=float)

    def _shoulder_world(self, per: Perception):
        return per.base_pose.apply(self.sp.center)

    def _object_h(self, per: Perception):
        """Object relative to the trunk origin, horizontal frame."""
        d = per.object_world - per.base_pose.translation
        c, s = np.cos(per.base_yaw), np.sin(per.base_yaw)
        return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])

    # -- search -----------------------------------------------------------
    def search_tick(self, per: Perception) -> SagOutput:
        sp, prog = self.sp, self.search
        if self.phase not in SEARCH_PHASES:
            self._go(prog.phase)
        c = self._center(per)
        base = BaseCommand()
        if prog.phase == SEARCH_SWEEP:
            side = "left" if prog.leg == 0 else "right"
            self.side = side
            if prog.leg == 0:
                x, xd, _ = arc_reference(prog.t, 0.0, sp.limit_a, sp.omega, sp.radius, c)
                dur = sp.limit_a / sp.omega
            else:
                x, xd, _ = arc_reference(prog.t, sp.limit_a, sp.limit_b, sp.omega, sp.radius, c)
                dur = (sp.limit_a - sp.limit_b) / sp.omega
            xe, xde = radial_ee(x, xd, c, sp.ee_offset)
            if prog.t >= dur:
                nxt = SEARCH_BACK_LEFT if prog.leg == 0 else SEARCH_BACK_RIGHT
                prog.phase, prog.t = nxt, 0.0
                self._go(nxt)
        elif prog.phase in (SEARCH_BACK_LEFT, SEARCH_BACK_RIGHT):
            side = "left" if prog.phase == SEARCH_BACK_LEFT else "right"
            self.side = side
            lim = sp.limit_a if side == "left" else sp.limit_b
            x = c + sp.radius * np.array([np.cos(lim), np.sin(lim), 0.0])
            xd = np.zeros(3)
            xe, xde = search_ee_reference(prog.t, x, sp, side, start_yaw=lim)
            if prog.t >= ee_scan_duration(sp):
                if side == "left":
                    prog.phase, prog.leg, prog.t = SEARCH_SWEEP, 1, 0.0
                    self._go(SEARCH_SWEEP)
                else:
                    prog.phase, prog.t, prog.rotated = SEARCH_ROTATE, 0.0, 0.0
                    self._go(SEARCH_ROTATE)
        else:
            x = c + sp.radius * np.array([1.0, 0.0, 0.0])
            xd = np.zeros(3)
            xe, xde = radial_ee(x, xd, c, sp.ee_offset)
            rate, finished = base_rotate_command(prog.rotated, sp)
            prog.rotated += rate * self.dt
            base = BaseCommand(yaw_rate=rate)
            if finished:
                prog.phase, prog.leg, prog.t = SEARCH_SWEEP, 0, 0.0
                self._go(SEARCH_SWEEP)
        prog.t += self.dt
        return SagOutput(self.phase, base, x, xd, "cartesian-tracking", xe, xde,
                         vision_active=False)

    # -- approach and grasp ---------------------------------------------
    def approach_done(self):
        return self.phase in GRASP_PHASES + (DONE,)

    def approach_tick(self, per: Perception) -> SagOutput:
        ap, sp = self.ap, self.sp
        if self.phase in SEARCH_PHASES:
            self._go(ALIGN_WRIST)
        self.timer += self.dt
        c = self._center(per)
        obj = self._object_h(per)
        bearing = np.arctan2(obj[1], obj[0])
        target = approach_wrist_target(obj, sp, self.side, c)
        out = SagOutput(self.phase, BaseCommand(), target, np.zeros(3), "visual-joint-impedance",
                        vision_active=True)
        if self.phase == ALIGN_WRIST:
            if np.linalg.norm(per.x_wr - target) < ap.wrist_tolerance or self.timer > 3.0:
                self._go(ALIGN_BASE)
        elif self.phase == ALIGN_BASE:
            out.base = approach_base_heading(bearing, ap)
            if abs(bearing) < ap.yaw_deadband:
                if self.timer > ap.settle_time:
                    self._go(WALK)
                    self.x_wr_hold = target.copy()
            else:
                self.timer = 0.0
        elif self.phase == WALK:
            out.x_wr_des = self.x_wr_hold
            cam_yaw = np.arctan2(per.camera_world.rotation[1, 2], per.camera_world.rotation[0, 2])
            err = wrap_angle(cam_yaw - per.base_yaw)
            dist = np.linalg.norm((per.object_world - per.camera_world.translation)[:2])
            self.last_distance = dist
            walking = dist > ap.stop_distance and self.stop_distance is None
            out.base = approach_base_heading(err, ap, forward=walking)
            if not walking:
                if self.stop_distance is None:
                    self.stop_distance = -1.0     # stopped, settling
                    self.timer = 0.0
                if self.timer > ap.settle_time:
                    self.stop_distance = float(dist)
                    self._go(GRASP_POSITION)
                    self.x_wr_hold = per.x_wr.copy()
        out.phase = self.phase
        return out

    def grasp_tick(self, per: Perception) -> SagOutput:
        gp, sp = self.gp, self.sp
        self.timer += self.dt
        c = self._center(per)
        out = SagOutput(self.phase, BaseCommand(), None, np.zeros(3), "visual-joint-impedance",
                        vision_active=True)
        shoulder_w = self._shoulder_world(per)
        reach = gp.trigger_fraction * (sp.max_reach + sp.ee_offset)
        if self.phase == GRASP_POSITION:
            # let the wrist servo catch up before moving the camera further
            tracking = per.feature_norm < gp.track_hold
            if tracking:
                self.ramp_t += self.dt
            obj = self._object_h(per)
            x = self.x_wr_hold.copy()
            x[0] = max(c[0] + gp.retract_min, x[0] - gp.retract_rate * self.ramp_t)
            dz = obj[2] - self.x_wr_hold[2]
            lim = gp.height_rate * self.ramp_t
            x[2] = self.x_wr_hold[2] + np.clip(dz, -lim, lim)
            out.x_wr_des = x
            out.xd_wr_des = np.zeros(3)
            bearing = np.arctan2(obj[1], obj[0])
            dist = np.linalg.norm(per.object_world - shoulder_w)
            inside = dist <= reach
            cmd = approach_base_heading(bearing, self.ap, forward=not inside)
            cmd.forward_velocity = gp.walk_speed if (tracking and not inside) else 0.0
            out.base = cmd
            if inside:
                self._go(GRASP_PITCH)
                rel = per.base_pose.rotation.T @ (per.object_world - shoulder_w)
                self.pitch_cmd = float(np.clip(grasp_pitch(rel[2], rel[0]),
                                               -gp.pitch_limit, gp.pitch_limit))
                self.x_wr_hold = x
        elif self.phase == GRASP_PITCH:
            out.x_wr_des = self.x_wr_hold
            out.base = BaseCommand(pitch=self.pitch_cmd, stand=True)
            if self.timer > gp.pitch_settle:
                self.target = grasp_target(per.object_world, per.base_pose, sp.center,
                                           per.base_yaw, gp.standoff, sp.ee_offset)
                wr = self._wrist_goal(per)
                if np.linalg.norm(wr - c) > sp.max_reach - 0.02:
                    self.pitch_cmd = 0.0
                    self._go(WALK)
                    self.stop_distance = None
                    raise UnreachableGraspError("grasp pose outside the arm workspace")
                self._go(GRASP_REACH)
                self.reach_from = (per.x_wr.copy(), per.x_ee.copy())
        elif self.phase in (GRASP_REACH, GRASP_CLOSE):
            out.vision_active = False
            out.wrist_mode = "cartesian-tracking"
            out.base = BaseCommand(pitch=self.pitch_cmd, stand=True)
            wr_goal = self._wrist_goal(per)
            ee_goal = self._ee_goal(per)
            if self.phase == GRASP_REACH:
                s, ds = min_jerk(self.timer / gp.reach_time)
                w0, e0 = self.reach_from
                out.x_wr_des = w0 + s * (wr_goal - w0)
                out.xd_wr_des = ds / gp.reach_time * (wr_goal - w0)
                out.x_ee_des = e0 + s * (ee_goal - e0)
                out.xd_ee_des = ds / gp.reach_time * (ee_goal - e0)
                if s >= 1.0 and np.linalg.norm(per.x_ee - ee_goal) < gp.close_distance:
                    self._go(GRASP_CLOSE)
                    self.gripper = True
                    out.event = "gripper-close"
            else:
                out.x_wr_des, out.x_ee_des = wr_goal, ee_goal
                out.xd_ee_des = np.zeros(3)
                if self.timer > gp.close_hold:
                    self._go(DONE)
        else:   # DONE: level the trunk, arm home
            out.vision_active = False
            out.wrist_mode = "cartesian-tracking"
            out.base = BaseCommand(pitch=0.0, stand=True)
            x = c + sp.radius * np.array([1.0, 0.0, 0.0])
            out.x_wr_des = x
            out.x_ee_des, out.xd_ee_des = radial_ee(x, np.zeros(3), c, sp.ee_offset)
        out.gripper_closed = self.gripper
        out.phase = self.phase
        return out

    def _to_h(self, per, world_point):
        d = world_point - per.base_pose.translation
        c, s = np.cos(per.base_yaw), np.sin(per.base_yaw)
        return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])

    def _ee_goal(self, per):
        return self._to_h(per, self.target.ee_pose.translation)

    def _wrist_goal(self, per):
        z = self.target.ee_pose.rotation[:, 2]
        return self._to_h(per, self.target.ee_pose.translation - self.sp.ee_offset * z)

    def on_detection_lost(self):
        """Return to the search phase that was interrupted."""
        if self.phase in COMMITTED or self.phase in SEARCH_PHASES:
            return
        self.pitch_cmd = 0.0
        self.stop_distance = None
        self._go(self.search.phase)
